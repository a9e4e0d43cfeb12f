#include "deml/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "deml/errors.hpp"

namespace deml {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ParameterError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

template <class T>
T parse_number(const std::string& key, const std::string& value, const char* expected) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, expected);
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  return parse_number<double>(key, v, "a real number");
}
long long parse_int(const std::string& key, const std::string& v) {
  return parse_number<long long>(key, v, "an integer");
}
std::size_t parse_size(const std::string& key, const std::string& v) {
  const long long x = parse_int(key, v);
  if (x < 0) bad_value(key, v, "a nonnegative integer");
  return static_cast<std::size_t>(x);
}
bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "a boolean (true/false)");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string p;
  while (std::getline(ss, p, sep)) parts.push_back(trim(p));
  return parts;
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& p : split(v, ',')) out.push_back(parse_size(key, p));
  if (out.empty()) bad_value(key, v, "a comma-separated list");
  return out;
}

// Stages as "channels:stride,channels:stride,..."
std::vector<ConvStage> parse_stages(const std::string& key, const std::string& v) {
  std::vector<ConvStage> out;
  for (const auto& p : split(v, ',')) {
    const auto cs = split(p, ':');
    if (cs.size() != 2) bad_value(key, v, "channels:stride pairs");
    out.push_back({parse_size(key, cs[0]), parse_size(key, cs[1])});
  }
  if (out.empty()) bad_value(key, v, "channels:stride pairs");
  return out;
}

std::string fmt(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}
std::string fmt(bool b) { return b ? "true" : "false"; }
template <class T>
std::string fmt_list(const std::vector<T>& xs) {
  std::string s;
  for (const auto& x : xs) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}
std::string fmt_stages(const std::vector<ConvStage>& stages) {
  std::string s;
  for (const auto& st : stages) {
    s += (s.empty() ? "" : ",") + std::to_string(st.channels) + ":" + std::to_string(st.stride);
  }
  return s;
}

struct Field {
  const char* key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define DEML_REAL(name, member)                                                     \
  Field {                                                                           \
    name, [](TrainConfig& c, const std::string& v) { c.member = parse_double(name, v); }, \
        [](const TrainConfig& c) { return fmt(static_cast<double>(c.member)); }     \
  }
#define DEML_SIZE(name, member)                                                     \
  Field {                                                                           \
    name, [](TrainConfig& c, const std::string& v) { c.member = parse_size(name, v); },   \
        [](const TrainConfig& c) { return std::to_string(c.member); }               \
  }
#define DEML_INT(name, member)                                                      \
  Field {                                                                           \
    name,                                                                           \
        [](TrainConfig& c, const std::string& v) {                                  \
          c.member = static_cast<decltype(c.member)>(parse_int(name, v));           \
        },                                                                          \
        [](const TrainConfig& c) { return std::to_string(c.member); }               \
  }
#define DEML_BOOL(name, member)                                                     \
  Field {                                                                           \
    name, [](TrainConfig& c, const std::string& v) { c.member = parse_bool(name, v); },   \
        [](const TrainConfig& c) { return fmt(c.member); }                          \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table{
      DEML_SIZE("scales", model.scales),
      DEML_SIZE("branches", model.branches),
      DEML_SIZE("embedding_dim", model.embedding_dim),
      DEML_BOOL("share_backbone_across_scales", model.share_backbone_across_scales),
      DEML_BOOL("use_cam", model.use_cam),
      DEML_INT("oam_steps", model.oam_steps),
      DEML_INT("min_crop_side", model.min_crop_side),
      DEML_REAL("branch_init_spread", model.branch_init_spread),
      DEML_SIZE("input_channels", model.backbone.input_channels),
      DEML_SIZE("image_size", model.backbone.image_size),
      Field{"fnet",
            [](TrainConfig& c, const std::string& v) {
              c.model.backbone.fnet = parse_stages("fnet", v);
            },
            [](const TrainConfig& c) { return fmt_stages(c.model.backbone.fnet); }},
      Field{"gnet",
            [](TrainConfig& c, const std::string& v) {
              c.model.backbone.gnet = parse_stages("gnet", v);
            },
            [](const TrainConfig& c) { return fmt_stages(c.model.backbone.gnet); }},
      DEML_REAL("alpha", loss.alpha),
      DEML_REAL("beta", loss.beta),
      DEML_REAL("gamma_pos", loss.gamma_pos),
      DEML_REAL("gamma_neg", loss.gamma_neg),
      DEML_REAL("lambda0", loss.lambda0),
      DEML_REAL("lambda1", loss.lambda1),
      DEML_REAL("lambda2", loss.lambda2),
      DEML_REAL("base_lr", base_lr),
      DEML_REAL("learner_lr_multiplier", learner_lr_multiplier),
      DEML_REAL("adversary_lr_multiplier", adversary_lr_multiplier),
      DEML_REAL("weight_decay", weight_decay),
      DEML_REAL("beta1", beta1),
      DEML_REAL("beta2", beta2),
      DEML_REAL("eps", eps),
      DEML_INT("iterations", iterations),
      DEML_INT("classes_per_batch", classes_per_batch),
      DEML_INT("images_per_class", images_per_class),
      Field{"seed",
            [](TrainConfig& c, const std::string& v) {
              c.seed = parse_number<std::uint64_t>("seed", v, "an unsigned integer");
            },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
      DEML_BOOL("use_adversary", use_adversary),
      DEML_BOOL("adversary_normalized", adversary_normalized),
      DEML_BOOL("adversary_updates_learners", adversary_updates_learners),
      DEML_BOOL("use_activation_decay", use_activation_decay),
      DEML_INT("eval_every", eval_every),
      Field{"recall_ks",
            [](TrainConfig& c, const std::string& v) {
              c.recall_ks = parse_size_list("recall_ks", v);
            },
            [](const TrainConfig& c) { return fmt_list(c.recall_ks); }},
      Field{"data_dir", [](TrainConfig& c, const std::string& v) { c.data_dir = v; },
            [](const TrainConfig& c) { return c.data_dir; }},
      Field{"output_dir", [](TrainConfig& c, const std::string& v) { c.output_dir = v; },
            [](const TrainConfig& c) { return c.output_dir; }},
  };
  return table;
}

#undef DEML_REAL
#undef DEML_SIZE
#undef DEML_INT
#undef DEML_BOOL

}  // namespace

void apply_setting(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const Field& f : fields()) {
    if (key == f.key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ParameterError("unknown config key '" + key + "'");
}

TrainConfig parse_config(std::istream& in, TrainConfig base) {
  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ParameterError(where + "expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ParameterError(where + "repeated key '" + key + "'");
    try {
      apply_setting(base, key, value);
    } catch (const ParameterError& e) {
      throw ParameterError(where + e.what());
    }
  }
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw ParameterError("cannot open config file: " + path.string());
  return parse_config(in, std::move(base));
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields()) out.emplace_back(f.key, f.get(cfg));
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Field& f : fields()) out.emplace_back(f.key);
  return out;
}

}  // namespace deml
