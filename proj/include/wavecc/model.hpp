#pragma once

// The complete trainable model: transform, quantiser step, dequantisation
// network and context model, all registered under stable names.

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "wavecc/context.hpp"

namespace wavecc {

template <class T>
struct DequantNet {
  static constexpr double kInputScale = 64.0;

  ConvLayer<T> head;
  std::vector<ResBlock<T>> blocks;
  ConvLayer<T> tail;

  static DequantNet create(ParamRegistry<T>& reg, std::size_t width, std::size_t nblocks, std::uint64_t seed) {
    DequantNet d;
    d.head = ConvLayer<T>::create(reg, "dequant.head", width, 1, 3, 3, Padding::kSymmetric, seed);
    for (std::size_t k = 0; k < nblocks; ++k) {
      d.blocks.push_back(ResBlock<T>::create(reg, "dequant.rb" + std::to_string(k + 1), width, seed));
    }
    d.tail = ConvLayer<T>::create(reg, "dequant.tail", 1, width, 3, 3, Padding::kSymmetric, seed);
    d.tail.weight.mutable_value().fill(T{0});
    d.tail.bias.mutable_value().fill(T{0});
    return d;
  }

  /// x + net(x); planes [B,1,H,W] in the 0..255 domain.
  Var<T> operator()(const Var<T>& x) const {
    const T s = static_cast<T>(kInputScale);
    Var<T> f = head(mul_const(x, T{1} / s));
    for (const auto& b : blocks) f = b(f);
    return add(x, mul_const(tail(f), s));
  }
};

struct ModelConfig {
  int levels = 4;
  std::size_t lifting_width = 16;
  std::size_t rnn_hidden = 32;
  std::size_t fusion_width = 128;
  std::size_t dequant_width = 32;
  std::size_t dequant_blocks = 6;
  double delta_init = 0.5;
  // Context maps are dequantised coefficients times this factor.
  double context_scale = 1.0 / 32.0;
  RnnOrder rnn_order = RnnOrder::kSubbandFirst;
  std::uint64_t seed = 1;

  std::map<std::string, std::string> to_map() const {
    std::map<std::string, std::string> m;
    m["levels"] = std::to_string(levels);
    m["lifting_width"] = std::to_string(lifting_width);
    m["rnn_hidden"] = std::to_string(rnn_hidden);
    m["fusion_width"] = std::to_string(fusion_width);
    m["dequant_width"] = std::to_string(dequant_width);
    m["dequant_blocks"] = std::to_string(dequant_blocks);
    m["delta_init"] = format_double(delta_init);
    m["context_scale"] = format_double(context_scale);
    m["rnn_order"] = rnn_order == RnnOrder::kSubbandFirst ? "subband_first" : "inside_out";
    m["seed"] = std::to_string(seed);
    return m;
  }

  /// Applies known keys; unknown keys are left for the caller to reject.
  void apply(const std::map<std::string, std::string>& kv) {
    auto get = [&](const char* k) -> const std::string* {
      auto it = kv.find(k);
      return it == kv.end() ? nullptr : &it->second;
    };
    try {
      if (auto v = get("levels")) levels = std::stoi(*v);
      if (auto v = get("lifting_width")) lifting_width = std::stoul(*v);
      if (auto v = get("rnn_hidden")) rnn_hidden = std::stoul(*v);
      if (auto v = get("fusion_width")) fusion_width = std::stoul(*v);
      if (auto v = get("dequant_width")) dequant_width = std::stoul(*v);
      if (auto v = get("dequant_blocks")) dequant_blocks = std::stoul(*v);
      if (auto v = get("delta_init")) delta_init = std::stod(*v);
      if (auto v = get("context_scale")) context_scale = std::stod(*v);
      if (auto v = get("seed")) seed = std::stoull(*v);
    } catch (const std::logic_error&) {
      fail(ErrorKind::kUsage, "model config: malformed numeric value");
    }
    if (auto v = get("rnn_order")) {
      if (*v == "subband_first") rnn_order = RnnOrder::kSubbandFirst;
      else if (*v == "inside_out") rnn_order = RnnOrder::kInsideOut;
      else fail(ErrorKind::kUsage, "model config: rnn_order must be subband_first or inside_out");
    }
    if (levels < 1 || levels > 8) fail(ErrorKind::kUsage, "model config: levels out of range");
    if (fusion_width == 0 || rnn_hidden == 0 || lifting_width == 0 || dequant_width == 0) {
      fail(ErrorKind::kUsage, "model config: widths must be positive");
    }
    if (!(delta_init > 0.0)) fail(ErrorKind::kUsage, "model config: delta_init must be positive");
  }

  static std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  static const std::vector<std::string>& keys() {
    static const std::vector<std::string> k = {"levels",        "lifting_width", "rnn_hidden",    "fusion_width",
                                               "dequant_width", "dequant_blocks", "delta_init", "context_scale",
                                               "rnn_order",     "seed"};
    return k;
  }
};

inline constexpr double kDeltaMin = 1e-3;

template <class T>
struct Model {
  ModelConfig config;
  ParamRegistry<T> registry;
  LiftingTransform<T> lifting;
  Var<T> delta;
  DequantNet<T> dequant;
  ContextModel<T> context;

  explicit Model(const ModelConfig& cfg) : config(cfg) {
    lifting = LiftingTransform<T>::create(registry, cfg.levels, cfg.lifting_width, cfg.seed);
    Tensor<T> d(Shape{1});
    d[0] = static_cast<T>(cfg.delta_init);
    delta = registry.add("quant.delta", std::move(d));
    dequant = DequantNet<T>::create(registry, cfg.dequant_width, cfg.dequant_blocks, cfg.seed);
    context = ContextModel<T>::create(registry, cfg.levels, cfg.rnn_hidden, cfg.fusion_width, cfg.rnn_order, cfg.seed);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  T context_scale() const { return static_cast<T>(config.context_scale); }

  /// Keeps the quantiser step inside its valid range after an update.
  void project() {
    T& d = delta.mutable_value()[0];
    if (!(d >= static_cast<T>(kDeltaMin))) d = static_cast<T>(kDeltaMin);
  }
};

/// Tensors copied verbatim from the luma context modules into the chroma
/// ones (source, destination). The first lower-path convolution is handled
/// separately because its input channels differ.
inline std::vector<std::pair<std::string, std::string>> luma_to_chroma_remap(const ParamRegistry<float>& reg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [name, var] : reg.entries()) {
    if (name.rfind("ctx.y.", 0) != 0) continue;
    if (name.find(".lower.") != std::string::npos) continue;
    std::string dst = "ctx.c." + name.substr(6);
    if (reg.contains(dst)) out.emplace_back(name, dst);
  }
  return out;
}

/// Stage-2 initialisation of the chroma predictor and fusion modules from
/// their luma counterparts. Lower-path input channels are copied slot by
/// slot; chroma-only slots start at zero. Where the luma module has no
/// lower path (i = 1) the chroma lower path starts as a no-op.
template <class T>
void init_chroma_from_luma(Model<T>& m) {
  auto copy = [&](const Var<T>& src, Var<T> dst) {
    if (src.shape() != dst.shape()) fail(ErrorKind::kShape, "init_chroma_from_luma: shape mismatch");
    dst.mutable_value() = src.value();
  };
  for (std::size_t u = 0; u < 3; ++u) {
    copy(m.context.rnn_y.cells[u].gates.weight, m.context.rnn_c.cells[u].gates.weight);
    copy(m.context.rnn_y.cells[u].gates.bias, m.context.rnn_c.cells[u].gates.bias);
  }
  const int n = subband_count(m.config.levels);
  for (int i = 1; i <= n; ++i) {
    const FusionModule<T>& fy = m.context.fusion(Component::kY, i);
    FusionModule<T>& fc = m.context.fuse_c[static_cast<std::size_t>(i - 1)];
    for (auto [a, b] : {std::pair{&fy.mask_a, &fc.mask_a}, std::pair{&fy.mask_b, &fc.mask_b},
                        std::pair{&fy.head1, &fc.head1}, std::pair{&fy.head2, &fc.head2}}) {
      copy(a->weight, b->weight);
      copy(a->bias, b->bias);
    }
    if (fc.context_channels == 0) continue;
    Tensor<T>& wc = fc.lower_in.weight.mutable_value();
    wc.fill(T{0});
    if (fy.context_channels == 0) {
      fc.lower_in.bias.mutable_value().fill(T{0});
      fc.rb1.b.weight.mutable_value().fill(T{0});
      fc.rb1.b.bias.mutable_value().fill(T{0});
      fc.rb2.b.weight.mutable_value().fill(T{0});
      fc.rb2.b.bias.mutable_value().fill(T{0});
      continue;
    }
    for (auto [a, b] : {std::pair{&fy.rb1.a, &fc.rb1.a}, std::pair{&fy.rb1.b, &fc.rb1.b},
                        std::pair{&fy.rb2.a, &fc.rb2.a}, std::pair{&fy.rb2.b, &fc.rb2.b}}) {
      copy(a->weight, b->weight);
      copy(a->bias, b->bias);
    }
    copy(fy.lower_in.bias, fc.lower_in.bias);
    const auto ysl = fusion_slots(Component::kY, i);
    const auto csl = fusion_slots(Component::kCb, i);
    const Tensor<T>& wy = fy.lower_in.weight.value();
    const std::size_t cout = wy.dim(0), ky = wy.dim(1), kc = wc.dim(1), ks = 9;
    for (std::size_t a = 0; a < ysl.size(); ++a) {
      for (std::size_t b = 0; b < csl.size(); ++b) {
        if (ysl[a] != csl[b]) continue;
        for (std::size_t o = 0; o < cout; ++o) {
          for (std::size_t k = 0; k < ks; ++k) wc[(o * kc + b) * ks + k] = wy[(o * ky + a) * ks + k];
        }
      }
    }
  }
}

// ---------------------------------------------------------- checkpoints

inline std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::kUsage, path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b2 = s.find_first_not_of(" \t");
      if (b2 == std::string::npos) return std::string();
      return s.substr(b2, s.find_last_not_of(" \t") - b2 + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline void write_kv_file(const std::filesystem::path& path, const std::map<std::string, std::string>& kv) {
  std::string text;
  for (const auto& [k, v] : kv) text += k + "=" + v + "\n";
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline std::filesystem::path meta_path(const std::filesystem::path& checkpoint) {
  return std::filesystem::path(checkpoint.string() + ".meta");
}

struct CheckpointMeta {
  int stage = 1;
  double lambda = 0.0;
  long steps = 0;
  std::uint64_t seed = 0;
  ModelConfig model;
};

inline void save_checkpoint(const Model<float>& m, const CheckpointMeta& meta, const std::filesystem::path& path) {
  save_weights(m.registry, path);
  auto kv = m.config.to_map();
  kv["stage"] = std::to_string(meta.stage);
  kv["lambda"] = ModelConfig::format_double(meta.lambda);
  kv["steps"] = std::to_string(meta.steps);
  kv["train_seed"] = std::to_string(meta.seed);
  write_kv_file(meta_path(path), kv);
}

inline CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  CheckpointMeta meta;
  const auto mp = meta_path(path);
  if (!std::filesystem::exists(mp)) return meta;
  const auto kv = read_kv_file(mp);
  meta.model.apply(kv);
  try {
    if (auto it = kv.find("stage"); it != kv.end()) meta.stage = std::stoi(it->second);
    if (auto it = kv.find("lambda"); it != kv.end()) meta.lambda = std::stod(it->second);
    if (auto it = kv.find("steps"); it != kv.end()) meta.steps = std::stol(it->second);
    if (auto it = kv.find("train_seed"); it != kv.end()) meta.seed = std::stoull(it->second);
  } catch (const std::logic_error&) {
    fail(ErrorKind::kFormat, mp.string() + ": malformed value");
  }
  return meta;
}

/// Builds a model from a checkpoint and its sidecar (defaults when the
/// sidecar is absent).
inline std::unique_ptr<Model<float>> load_model(const std::filesystem::path& path, CheckpointMeta* meta_out = nullptr) {
  CheckpointMeta meta = read_checkpoint_meta(path);
  auto m = std::make_unique<Model<float>>(meta.model);
  load_weights(m->registry, path);
  if (meta_out) *meta_out = meta;
  return m;
}

}  // namespace wavecc
