#include "deml/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "deml/errors.hpp"
#include "deml/image_io.hpp"

namespace deml::data {
namespace {

int int_pow(int base, int exp) {
  int r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

// Projection of a class tuple onto the slots in `mask`, packed as an integer.
long long project(const ClassTuple& t, unsigned mask, int values) {
  long long key = 0;
  for (std::size_t s = 0; s < t.size(); ++s) {
    if (mask & (1u << s)) key = key * values + t[s];
  }
  return key;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(f);
  return fields;
}

}  // namespace

int GlyphSpec::classes() const { return int_pow(values, slots); }

double GlyphSpec::contrast(int slot) const {
  return static_cast<std::size_t>(slot) < slot_contrast.size() ? slot_contrast[slot] : 1.0;
}

void GlyphSpec::validate() const {
  if (slots < 1 || slots > 6) throw ParameterError("glyph spec: slots must be in [1, 6]");
  if (values < 2) throw ParameterError("glyph spec: values must be >= 2");
  if (glyph_size < 3) throw ParameterError("glyph spec: glyph_size must be >= 3");
  if (noise < 0.0) throw ParameterError("glyph spec: noise must be >= 0");
  if (jitter < 0 || object_jitter < 0) throw ParameterError("glyph spec: negative jitter");
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(slots))));
  if (grid * (glyph_size + 2) > image_size) {
    throw ParameterError("glyph spec: " + std::to_string(slots) + " glyphs of size " +
                         std::to_string(glyph_size) + " do not fit a " +
                         std::to_string(image_size) + "-pixel image");
  }
  if (slots * values > (1 << std::min(glyph_size * glyph_size, 30)) / 4) {
    throw ParameterError("glyph spec: too many glyphs for the pattern size");
  }
  for (double c : slot_contrast) {
    if (!(c > 0.0 && c <= 1.0)) throw ParameterError("glyph spec: contrast must be in (0, 1]");
  }
}

ClassTuple class_tuple(const GlyphSpec& spec, int id) {
  if (id < 0 || id >= spec.classes()) {
    throw ParameterError("class id " + std::to_string(id) + " outside [0, " +
                         std::to_string(spec.classes()) + ")");
  }
  ClassTuple t(spec.slots);
  for (int s = 0; s < spec.slots; ++s) {
    t[s] = id % spec.values;
    id /= spec.values;
  }
  return t;
}

int class_id(const GlyphSpec& spec, std::span<const int> tuple) {
  if (static_cast<int>(tuple.size()) != spec.slots) {
    throw ParameterError("class tuple has " + std::to_string(tuple.size()) + " slots, spec " +
                         std::to_string(spec.slots));
  }
  int id = 0;
  for (int s = spec.slots - 1; s >= 0; --s) {
    if (tuple[s] < 0 || tuple[s] >= spec.values) throw ParameterError("slot value out of range");
    id = id * spec.values + tuple[s];
  }
  return id;
}

std::vector<std::uint8_t> glyph_pattern(const GlyphSpec& spec, int slot, int value) {
  // All patterns are drawn from one stream so that they are pairwise distinct.
  const std::size_t cells = static_cast<std::size_t>(spec.glyph_size * spec.glyph_size);
  std::mt19937_64 rng(spec.pattern_seed);
  std::bernoulli_distribution bit(0.5);
  std::set<std::vector<std::uint8_t>> used;
  const int target = slot * spec.values + value;
  for (int k = 0;; ) {
    std::vector<std::uint8_t> p(cells);
    for (auto& b : p) b = bit(rng) ? 1 : 0;
    const auto on = std::count(p.begin(), p.end(), 1);
    if (on < static_cast<long>(cells / 4) || on > static_cast<long>(3 * cells / 4)) continue;
    if (!used.insert(p).second) continue;
    if (k++ == target) return p;
  }
}

std::vector<std::size_t> Dataset::indices_of(std::span<const int> classes) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (std::find(classes.begin(), classes.end(), labels[i]) != classes.end()) out.push_back(i);
  }
  return out;
}

ZeroShotSplit make_zero_shot_split(const GlyphSpec& spec, int sufficient_slots,
                                   int unseen_groups, int unseen_per_group,
                                   std::uint64_t seed) {
  spec.validate();
  const int s = sufficient_slots;
  const int rest = spec.slots - s;
  if (s < 1 || rest < 1) {
    throw ParameterError("split: sufficient_slots must leave at least one other slot");
  }
  const int groups = int_pow(spec.values, s);
  const int completions = int_pow(spec.values, rest);
  if (unseen_groups < 1 || unseen_groups > groups || unseen_per_group < 2 ||
      unseen_per_group > completions - 1) {
    throw ParameterError("split: cannot draw " + std::to_string(unseen_groups) + " groups of " +
                         std::to_string(unseen_per_group) + " unseen classes");
  }

  auto head_tuple = [&](int g) {
    std::vector<int> a(s);
    for (int k = 0; k < s; ++k) {
      a[k] = g % spec.values;
      g /= spec.values;
    }
    return a;
  };
  // The fixed completion of a seen class.
  auto completion_of = [&](const std::vector<int>& a) {
    std::vector<int> c(rest);
    for (int k = 0; k < rest; ++k) c[k] = (a[k % s] + k + 1) % spec.values;
    return c;
  };
  auto join = [&](const std::vector<int>& a, const std::vector<int>& c) {
    ClassTuple t(a);
    t.insert(t.end(), c.begin(), c.end());
    return class_id(spec, t);
  };

  ZeroShotSplit split;
  for (int g = 0; g < groups; ++g) {
    const auto a = head_tuple(g);
    split.seen.push_back(join(a, completion_of(a)));
  }

  std::mt19937_64 rng(seed);
  std::vector<int> order(groups);
  for (int g = 0; g < groups; ++g) order[g] = g;
  std::shuffle(order.begin(), order.end(), rng);
  for (int u = 0; u < unseen_groups; ++u) {
    const auto a = head_tuple(order[u]);
    const int fixed = join(a, completion_of(a));
    std::vector<int> options;
    for (int c = 0; c < completions; ++c) {
      std::vector<int> tail(rest);
      int rem = c;
      for (int k = 0; k < rest; ++k) {
        tail[k] = rem % spec.values;
        rem /= spec.values;
      }
      const int id = join(a, tail);
      if (id != fixed) options.push_back(id);
    }
    std::shuffle(options.begin(), options.end(), rng);
    split.unseen.insert(split.unseen.end(), options.begin(), options.begin() + unseen_per_group);
  }
  std::sort(split.seen.begin(), split.seen.end());
  std::sort(split.unseen.begin(), split.unseen.end());
  return split;
}

SplitReport verify_split(const ZeroShotSplit& split, const GlyphSpec& spec) {
  spec.validate();
  SplitReport report;
  const std::set<int> seen(split.seen.begin(), split.seen.end());
  report.disjoint = std::none_of(split.unseen.begin(), split.unseen.end(),
                                 [&](int c) { return seen.count(c) > 0; });
  if (!report.disjoint) {
    throw SplitDesignError("split: seen and unseen classes intersect");
  }
  if (split.seen.size() < 2 || split.unseen.size() < 2) {
    throw SplitDesignError("split: need at least two seen and two unseen classes");
  }
  std::vector<ClassTuple> seen_t, unseen_t;
  for (int c : split.seen) seen_t.push_back(class_tuple(spec, c));
  for (int c : split.unseen) unseen_t.push_back(class_tuple(spec, c));

  const unsigned full = (1u << spec.slots) - 1;
  // Proper subsets in order of size, then mask value.
  std::vector<unsigned> masks;
  for (unsigned m = 1; m < full; ++m) masks.push_back(m);
  std::stable_sort(masks.begin(), masks.end(), [](unsigned a, unsigned b) {
    return std::popcount(a) < std::popcount(b);
  });

  for (unsigned mask : masks) {
    std::set<long long> keys;
    for (const auto& t : seen_t) keys.insert(project(t, mask, spec.values));
    if (keys.size() != seen_t.size()) continue;
    report.seen_separating_subsets.push_back(mask);

    std::multiset<long long> unseen_keys;
    for (const auto& t : unseen_t) unseen_keys.insert(project(t, mask, spec.values));
    const bool collide = std::all_of(unseen_t.begin(), unseen_t.end(), [&](const auto& t) {
      return unseen_keys.count(project(t, mask, spec.values)) >= 2;
    });
    if (collide && report.separating_subset == 0) report.separating_subset = mask;
  }
  if (report.seen_separating_subsets.empty()) {
    throw SplitDesignError("split: no proper slot subset separates the seen classes");
  }
  if (report.separating_subset == 0) {
    throw SplitDesignError(
        "split: every slot subset that separates the seen classes also separates some unseen "
        "class from all others; unseen classes do not collide on it");
  }
  return report;
}

Tensor render_image(const GlyphSpec& spec, int id, std::uint64_t seed, std::uint64_t stream) {
  const ClassTuple tuple = class_tuple(spec, id);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int size = spec.image_size;
  const int cell = spec.glyph_size + 2;
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(spec.slots))));
  const int block = grid * cell;
  auto offset = [&](int amplitude) {
    return amplitude == 0 ? 0
                          : std::uniform_int_distribution<int>(-amplitude, amplitude)(rng);
  };

  std::vector<double> pixels(static_cast<std::size_t>(size * size), 0.0);
  const int origin_r = std::clamp((size - block) / 2 + offset(spec.object_jitter), 0, size - block);
  const int origin_c = std::clamp((size - block) / 2 + offset(spec.object_jitter), 0, size - block);
  for (int s = 0; s < spec.slots; ++s) {
    const auto pattern = glyph_pattern(spec, s, tuple[s]);
    const int r0 = std::clamp(origin_r + (s / grid) * cell + 1 + offset(spec.jitter), 0,
                              size - spec.glyph_size);
    const int c0 = std::clamp(origin_c + (s % grid) * cell + 1 + offset(spec.jitter), 0,
                              size - spec.glyph_size);
    for (int y = 0; y < spec.glyph_size; ++y) {
      for (int x = 0; x < spec.glyph_size; ++x) {
        if (pattern[y * spec.glyph_size + x]) {
          pixels[(r0 + y) * size + (c0 + x)] = spec.contrast(s);
        }
      }
    }
  }
  for (double& p : pixels) {
    p = std::clamp(p + spec.noise * unit(rng), 0.0, 1.0);
    // Quantized to 8 bits so that a PGM round trip is lossless.
    p = std::round(p * 255.0) / 255.0;
  }
  return Tensor({1, static_cast<std::size_t>(size), static_cast<std::size_t>(size)},
                std::move(pixels));
}

Dataset generate_dataset(const GlyphSpec& spec, int per_class, std::uint64_t seed,
                         std::span<const int> classes) {
  spec.validate();
  if (per_class < 4) throw ParameterError("generate_dataset: per_class must be >= 4");
  std::vector<int> ids(classes.begin(), classes.end());
  if (ids.empty()) {
    for (int c = 0; c < spec.classes(); ++c) ids.push_back(c);
  }
  Dataset d;
  for (int c : ids) {
    for (int k = 0; k < per_class; ++k) {
      const std::uint64_t stream = static_cast<std::uint64_t>(c) * 1000003ull + k;
      d.images.push_back(render_image(spec, c, seed, stream));
      d.labels.push_back(c);
    }
  }
  return d;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::ofstream labels(dir / "labels.csv");
  if (!labels) throw FormatError("cannot write " + (dir / "labels.csv").string());
  labels << "filename,class_id\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    std::ostringstream name;
    name << "images/" << std::setw(6) << std::setfill('0') << i << ".pgm";
    write_pgm_unit(dataset.images[i], dir / name.str());
    labels << name.str() << "," << dataset.labels[i] << "\n";
  }
  std::ofstream split(dir / "split.csv");
  if (!split) throw FormatError("cannot write " + (dir / "split.csv").string());
  split << "class_id,split\n";
  for (int c : dataset.split.seen) split << c << ",seen\n";
  for (int c : dataset.split.unseen) split << c << ",unseen\n";
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  std::ifstream labels(dir / "labels.csv");
  if (!labels) throw DatasetError("missing " + (dir / "labels.csv").string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(labels, line)) {
    ++line_no;
    if (line.empty() || (line_no == 1 && line.rfind("filename", 0) == 0)) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 2) {
      throw FormatError("labels.csv line " + std::to_string(line_no) + ": expected 2 fields");
    }
    d.images.push_back(read_image(dir / f[0]));
    try {
      d.labels.push_back(std::stoi(f[1]));
    } catch (const std::exception&) {
      throw FormatError("labels.csv line " + std::to_string(line_no) + ": bad class id");
    }
  }
  std::ifstream split(dir / "split.csv");
  if (!split) throw DatasetError("missing " + (dir / "split.csv").string());
  line_no = 0;
  while (std::getline(split, line)) {
    ++line_no;
    if (line.empty() || (line_no == 1 && line.rfind("class_id", 0) == 0)) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 2 || (f[1] != "seen" && f[1] != "unseen")) {
      throw FormatError("split.csv line " + std::to_string(line_no) +
                        ": expected class_id,seen|unseen");
    }
    int c = 0;
    try {
      c = std::stoi(f[0]);
    } catch (const std::exception&) {
      throw FormatError("split.csv line " + std::to_string(line_no) + ": bad class id");
    }
    (f[1] == "seen" ? d.split.seen : d.split.unseen).push_back(c);
  }
  return d;
}

}  // namespace deml::data
