#include "deml/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "deml/errors.hpp"

namespace deml {
namespace {

constexpr char kMagic[5] = {'D', 'E', 'M', 'L', '1'};

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw FormatError("cannot open checkpoint for writing: " + path.string());
  }
  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  }
  template <class T>
  void le(T value) {
    std::uint64_t bits;
    if constexpr (std::is_same_v<T, double>) {
      bits = std::bit_cast<std::uint64_t>(value);
    } else {
      bits = static_cast<std::uint64_t>(value);
    }
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = (bits >> (8 * i)) & 0xFF;
    bytes(buf, sizeof(T));
  }
  void finish(const std::filesystem::path& path) {
    out_.flush();
    if (!out_) throw FormatError("failed writing checkpoint: " + path.string());
  }

 private:
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint: " + path.string());
    data_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  const char* take(std::size_t n) {
    if (pos_ + n > data_.size()) {
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos_) + ": need " +
                        std::to_string(n) + " more bytes, have " +
                        std::to_string(data_.size() - pos_));
    }
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <class T>
  T le() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(sizeof(T)));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t{p[i]} << (8 * i);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::vector<char> data_;
  std::size_t pos_ = 0;
};

std::vector<std::int64_t> encode_config(const ModelConfig& c) {
  std::vector<std::int64_t> v{static_cast<std::int64_t>(c.scales),
                              static_cast<std::int64_t>(c.branches),
                              static_cast<std::int64_t>(c.embedding_dim),
                              c.share_backbone_across_scales ? 1 : 0,
                              c.use_cam ? 1 : 0,
                              c.oam_steps,
                              c.min_crop_side,
                              std::bit_cast<std::int64_t>(c.branch_init_spread + 0.0),  // folds -0 into +0
                              static_cast<std::int64_t>(c.backbone.input_channels),
                              static_cast<std::int64_t>(c.backbone.image_size)};
  for (const auto* stages : {&c.backbone.fnet, &c.backbone.gnet}) {
    v.push_back(static_cast<std::int64_t>(stages->size()));
    for (const ConvStage& s : *stages) {
      v.push_back(static_cast<std::int64_t>(s.channels));
      v.push_back(static_cast<std::int64_t>(s.stride));
    }
  }
  return v;
}

ModelConfig decode_config(const std::vector<std::int64_t>& v) {
  std::size_t pos = 0;
  auto next = [&]() -> std::int64_t {
    if (pos >= v.size()) throw FormatError("checkpoint config block too short");
    const std::int64_t x = v[pos++];
    if (x < 0) throw FormatError("checkpoint config holds a negative value");
    return x;
  };
  ModelConfig c;
  c.scales = static_cast<std::size_t>(next());
  c.branches = static_cast<std::size_t>(next());
  c.embedding_dim = static_cast<std::size_t>(next());
  c.share_backbone_across_scales = next() != 0;
  c.use_cam = next() != 0;
  c.oam_steps = static_cast<int>(next());
  c.min_crop_side = static_cast<int>(next());
  c.branch_init_spread = std::bit_cast<double>(next());
  c.backbone.input_channels = static_cast<std::size_t>(next());
  c.backbone.image_size = static_cast<std::size_t>(next());
  for (auto* stages : {&c.backbone.fnet, &c.backbone.gnet}) {
    stages->assign(static_cast<std::size_t>(next()), ConvStage{});
    for (ConvStage& s : *stages) {
      s.channels = static_cast<std::size_t>(next());
      s.stride = static_cast<std::size_t>(next());
    }
  }
  if (pos != v.size()) throw FormatError("checkpoint config block has trailing values");
  return c;
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  Writer w(path);
  w.bytes(kMagic, sizeof(kMagic));
  const auto config = encode_config(model.config());
  w.le<std::uint32_t>(static_cast<std::uint32_t>(config.size()));
  for (std::int64_t x : config) w.le<std::int64_t>(x);
  const auto params = model.named_parameters();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const NamedTensor& p : params) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(p.tensor.ndim()));
    for (std::size_t d : p.tensor.shape()) w.le<std::uint64_t>(d);
    for (double x : p.tensor.values()) w.le<double>(x);
  }
  w.finish(path);
}

Model load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not a checkpoint (bad magic): " + path.string());
  }
  std::vector<std::int64_t> config(r.le<std::uint32_t>());
  for (auto& x : config) x = r.le<std::int64_t>();
  ModelConfig cfg = decode_config(config);
  try {
    cfg.validate();
  } catch (const ParameterError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }
  Model model(cfg, 0);
  auto params = model.named_parameters();

  const std::uint32_t count = r.le<std::uint32_t>();
  if (count != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                      std::to_string(params.size()));
  }
  for (NamedTensor& p : params) {
    const std::uint32_t len = r.le<std::uint32_t>();
    const std::string name(r.take(len), len);
    if (name != p.name) {
      throw FormatError("checkpoint parameter '" + name + "' at byte " +
                        std::to_string(r.offset()) + ", expected '" + p.name + "'");
    }
    Shape shape(r.le<std::uint32_t>());
    for (auto& d : shape) d = static_cast<std::size_t>(r.le<std::uint64_t>());
    if (shape != p.tensor.shape()) {
      throw FormatError("checkpoint parameter '" + name + "' has shape " + shape_string(shape) +
                        ", expected " + shape_string(p.tensor.shape()));
    }
    for (double& x : p.tensor.values()) x = r.le<double>();
  }
  if (!r.done()) throw FormatError("checkpoint has trailing bytes at " + std::to_string(r.offset()));
  return model;
}

}  // namespace deml
