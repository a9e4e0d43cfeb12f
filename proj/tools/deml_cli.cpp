// Command-line front end: dataset generation, training, evaluation,
// attention export and the gradient-check suite.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "deml/checkpoint.hpp"
#include "deml/config.hpp"
#include "deml/dataset.hpp"
#include "deml/errors.hpp"
#include "deml/eval.hpp"
#include "deml/gradcheck.hpp"
#include "deml/image_io.hpp"
#include "deml/model.hpp"
#include "deml/oam.hpp"
#include "deml/train.hpp"

namespace fs = std::filesystem;
using namespace deml;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

// Errors caused by the invocation rather than by the computation.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw UsageError(what + " not found: " + p.string());
}

using Entries = std::vector<std::pair<std::string, std::string>>;

void write_manifest(const fs::path& path, const std::string& command, const Entries& entries) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest " + path.string());
  out << "# deml " << command << "\n";
  out << "command=" << command << "\n";
  for (const auto& [k, v] : entries) out << k << "=" << v << "\n";
}

std::string join(const std::vector<double>& xs) {
  std::ostringstream s;
  for (std::size_t i = 0; i < xs.size(); ++i) s << (i ? "," : "") << xs[i];
  return s.str();
}

struct GenDataOptions {
  std::string out;
  data::GlyphSpec spec;
  std::vector<double> contrast;
  int per_class = 16;
  int sufficient_slots = 2;
  int unseen_groups = 4;
  int unseen_per_group = 4;
  std::uint64_t seed = 1;
};

int run_gen_data(const GenDataOptions& o) {
  data::GlyphSpec spec = o.spec;
  spec.slot_contrast = o.contrast;
  data::ZeroShotSplit split =
      data::make_zero_shot_split(spec, o.sufficient_slots, o.unseen_groups, o.unseen_per_group,
                                 o.seed);
  const data::SplitReport report = data::verify_split(split, spec);
  std::vector<int> classes = split.seen;
  classes.insert(classes.end(), split.unseen.begin(), split.unseen.end());
  data::Dataset d = data::generate_dataset(spec, o.per_class, o.seed, classes);
  d.split = split;
  data::save_dataset(d, o.out);
  write_manifest(fs::path(o.out) / "manifest.txt", "gen-data",
                 {{"slots", std::to_string(spec.slots)},
                  {"values", std::to_string(spec.values)},
                  {"glyph_size", std::to_string(spec.glyph_size)},
                  {"image_size", std::to_string(spec.image_size)},
                  {"noise", std::to_string(spec.noise)},
                  {"jitter", std::to_string(spec.jitter)},
                  {"object_jitter", std::to_string(spec.object_jitter)},
                  {"slot_contrast", join(spec.slot_contrast)},
                  {"pattern_seed", std::to_string(spec.pattern_seed)},
                  {"per_class", std::to_string(o.per_class)},
                  {"sufficient_slots", std::to_string(o.sufficient_slots)},
                  {"unseen_groups", std::to_string(o.unseen_groups)},
                  {"unseen_per_group", std::to_string(o.unseen_per_group)},
                  {"seed", std::to_string(o.seed)},
                  {"seen_classes", std::to_string(split.seen.size())},
                  {"unseen_classes", std::to_string(split.unseen.size())},
                  {"separating_subset", std::to_string(report.separating_subset)}});
  std::cout << "wrote " << d.size() << " images (" << split.seen.size() << " seen, "
            << split.unseen.size() << " unseen classes) to " << o.out << "\n";
  return kExitOk;
}

struct TrainOptions {
  std::string config;
  std::vector<std::string> overrides;
};

int run_train(const TrainOptions& o) {
  require_exists(o.config, "config file");
  TrainConfig cfg;
  try {
    cfg = load_config(o.config);
    for (const std::string& kv : o.overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ParameterError("--set expects key=value, got " + kv);
      apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    cfg.validate();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  if (cfg.data_dir.empty()) throw UsageError("config does not set data_dir");
  require_exists(fs::path(cfg.data_dir) / "labels.csv", "dataset");

  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  write_manifest(out / "manifest.txt", "train", config_entries(cfg));

  const data::Dataset dataset = data::load_dataset(cfg.data_dir);
  Trainer trainer(cfg, dataset);
  std::ofstream loss_log(out / "loss.csv");
  Trainer::write_loss_header(loss_log);
  std::ofstream metrics_log;
  if (cfg.eval_every > 0) {
    metrics_log.open(out / "metrics.csv");
    Trainer::write_metrics_header(metrics_log, cfg);
  }
  loss_log << std::setprecision(10);
  metrics_log << std::setprecision(6);
  trainer.run(&loss_log, cfg.eval_every > 0 ? &metrics_log : nullptr);
  save_checkpoint(trainer.model(), out / "model.ckpt");
  std::cout << "trained " << trainer.iteration() << " iterations; checkpoint "
            << (out / "model.ckpt").string() << "\n";
  return kExitOk;
}

struct EvalOptions {
  std::string checkpoint;
  std::string data;
  std::vector<std::size_t> ks{1, 2, 4, 8};
  bool per_root = false;
  bool seen = false;
  std::string manifest = "eval_manifest.txt";
};

int run_eval(const EvalOptions& o) {
  require_exists(o.checkpoint, "checkpoint");
  require_exists(fs::path(o.data) / "labels.csv", "dataset");
  const Model model = load_checkpoint(o.checkpoint);
  const data::Dataset dataset = data::load_dataset(o.data);
  std::string ks;
  for (std::size_t k : o.ks) ks += (ks.empty() ? "" : ",") + std::to_string(k);
  TrainConfig echo;
  echo.model = model.config();
  Entries entries{{"checkpoint", o.checkpoint}, {"data", o.data}, {"ks", ks},
                  {"per_root", o.per_root ? "true" : "false"},
                  {"classes", o.seen ? "seen" : "unseen"}};
  for (const auto& e : config_entries(echo)) {
    if (e.first == "scales" || e.first == "branches" || e.first == "embedding_dim" ||
        e.first == "use_cam" || e.first == "oam_steps" || e.first == "fnet" ||
        e.first == "gnet" || e.first == "share_backbone_across_scales") {
      entries.push_back(e);
    }
  }
  write_manifest(o.manifest, "eval", entries);

  const RecallTable t = o.seen ? evaluate_seen(model, dataset, o.ks)
                               : evaluate_zero_shot(model, dataset, o.ks, o.per_root);
  std::cout << "K,recall";
  for (std::size_t i = 0; i < t.per_root.size(); ++i) std::cout << ",root" << i + 1;
  std::cout << "\n" << std::setprecision(6);
  for (std::size_t r = 0; r < t.ks.size(); ++r) {
    std::cout << t.ks[r] << "," << t.holistic[r];
    for (const auto& root : t.per_root) std::cout << "," << root[r];
    std::cout << "\n";
  }
  return kExitOk;
}

struct AttendOptions {
  std::string checkpoint;
  std::string image;
  std::string out = "attend";
};

int run_attend(const AttendOptions& o) {
  require_exists(o.checkpoint, "checkpoint");
  require_exists(o.image, "image");
  const Model model = load_checkpoint(o.checkpoint);
  const ModelConfig& cfg = model.config();
  Tensor image = read_image(o.image);
  const std::size_t size = cfg.backbone.image_size;
  if (image.dim(1) != size || image.dim(2) != size) {
    throw UsageError("image is " + std::to_string(image.dim(1)) + "x" +
                     std::to_string(image.dim(2)) + ", model expects " + std::to_string(size) +
                     "x" + std::to_string(size));
  }
  const fs::path out = o.out;
  fs::create_directories(out);
  write_manifest(out / "manifest.txt", "attend",
                 {{"checkpoint", o.checkpoint}, {"image", o.image}, {"out", o.out},
                  {"scales", std::to_string(cfg.scales)},
                  {"branches", std::to_string(cfg.branches)},
                  {"oam_steps", std::to_string(cfg.oam_steps)}});

  NoGradGuard no_grad;
  Tensor x = image;
  for (std::size_t i = 0; i < cfg.scales; ++i) {
    const std::string tag = "scale" + std::to_string(i + 1);
    write_pgm_unit(x, out / (tag + "_input.pgm"));
    const ScaleOutput s = model.forward_scale(stack_batch({x}), i);
    const oam::AttentionProposal p =
        oam::object_attention(s.attention_maps[0], size, size, cfg.oam_steps,
                              model.attention_strides());
    write_pgm(p.mass, p.height, p.width, out / (tag + "_proposal.pgm"));
    const oam::CropBox box = oam::crop_box(p, static_cast<int>(size), static_cast<int>(size),
                                           cfg.min_crop_side);

    std::ofstream gates(out / (tag + "_gates.csv"));
    gates << "branch";
    const std::size_t channels = cfg.backbone.fnet_channels();
    for (std::size_t c = 0; c < channels; ++c) gates << ",c" << c;
    gates << "\n" << std::setprecision(8);
    for (std::size_t j = 0; j < s.gates.size(); ++j) {
      gates << j;
      for (double g : s.gates[j].values()) gates << "," << g;
      gates << "\n";
    }
    std::cout << tag << " box center=(" << box.center_row << "," << box.center_col
              << ") side=" << box.side << "\n";
    x = oam::crop_and_zoom(x, box);
  }
  return kExitOk;
}

int run_gradcheck(std::uint64_t seed, const std::string& manifest) {
  write_manifest(manifest, "gradcheck",
                 {{"seed", std::to_string(seed)}, {"step", "1e-05"}, {"abs_floor", "1e-07"}});
  const auto results = run_gradcheck_suite(seed);
  bool ok = true;
  std::cout << "op,max_rel_err,tolerance,status\n";
  for (const auto& r : results) {
    std::cout << r.name << "," << std::scientific << std::setprecision(3) << r.max_rel_error
              << "," << r.tolerance << "," << (r.passed() ? "ok" : "FAIL") << "\n";
    ok = ok && r.passed();
  }
  return ok ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-learner embedding training and retrieval evaluation"};
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic zero-shot dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "Random seed");
  gen_cmd->add_option("--per-class", gen.per_class, "Images per class");
  gen_cmd->add_option("--slots", gen.spec.slots, "Attribute slots");
  gen_cmd->add_option("--values", gen.spec.values, "Values per slot");
  gen_cmd->add_option("--noise", gen.spec.noise, "Background noise amplitude");
  gen_cmd->add_option("--jitter", gen.spec.jitter, "Per-glyph offset, pixels");
  gen_cmd->add_option("--object-jitter", gen.spec.object_jitter, "Glyph block offset, pixels");
  gen_cmd->add_option("--contrast", gen.contrast, "Glyph intensity per slot")->delimiter(',');
  gen_cmd->add_option("--sufficient-slots", gen.sufficient_slots,
                      "Slots that alone separate the seen classes");
  gen_cmd->add_option("--unseen-groups", gen.unseen_groups, "Unseen collision groups");
  gen_cmd->add_option("--unseen-per-group", gen.unseen_per_group, "Unseen classes per group");

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Train from a key=value config file");
  train_cmd->add_option("config", train.config, "Config file")->required();
  train_cmd->add_option("--set", train.overrides, "Override a config key (key=value)");

  EvalOptions ev;
  auto* eval_cmd = app.add_subcommand("eval", "Print the Recall@K table as CSV");
  eval_cmd->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--k", ev.ks, "Recall cutoffs")->delimiter(',');
  eval_cmd->add_flag("--per-root", ev.per_root, "Also report each scale's root learner");
  eval_cmd->add_flag("--seen", ev.seen, "Evaluate the training classes instead");
  eval_cmd->add_option("--manifest", ev.manifest, "Manifest output path");

  AttendOptions at;
  auto* attend_cmd = app.add_subcommand("attend", "Export attention proposals and CAM gates");
  attend_cmd->add_option("--checkpoint", at.checkpoint, "Model checkpoint")->required();
  attend_cmd->add_option("--image", at.image, "PGM or PPM image")->required();
  attend_cmd->add_option("--out", at.out, "Output directory");

  std::uint64_t gc_seed = 1;
  std::string gc_manifest = "gradcheck_manifest.txt";
  auto* gc_cmd = app.add_subcommand("gradcheck", "Run the finite-difference suite");
  gc_cmd->add_option("--seed", gc_seed, "Random seed");
  gc_cmd->add_option("--manifest", gc_manifest, "Manifest output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return run_gen_data(gen);
    if (*train_cmd) return run_train(train);
    if (*eval_cmd) return run_eval(ev);
    if (*attend_cmd) return run_attend(at);
    if (*gc_cmd) return run_gradcheck(gc_seed, gc_manifest);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParameterError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
