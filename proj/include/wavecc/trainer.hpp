#pragma once

// Rate-distortion objective, deterministic patch batching and the two
// training stages (luma-only, then chroma context modules only).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "wavecc/fpenv.hpp"
#include "wavecc/optim.hpp"
#include "wavecc/pipeline.hpp"

namespace wavecc {

// ------------------------------------------------------------------ data

struct Dataset {
  std::vector<YCbCrPlanes> images;
  std::vector<std::string> names;
};

inline Dataset load_dataset(const std::filesystem::path& dir, std::ostream* warn = &std::cerr) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::kIo, "dataset: " + dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
    if (ext == ".png" || ext == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  Dataset ds;
  for (const auto& f : files) {
    try {
      ds.images.push_back(rgb_to_ycbcr(load_image(f)));
      ds.names.push_back(f.filename().string());
    } catch (const Error& e) {
      if (warn) *warn << "warning: skipping " << f.string() << ": " << e.what() << "\n";
    }
  }
  if (ds.images.empty()) fail(ErrorKind::kIo, "dataset: no readable images in " + dir.string());
  return ds;
}

/// One mini-batch; planes are [B,1,crop,crop].
struct Batch {
  Var<float> y, cb, cr;
};

/// Seeded stream of random crops. Images smaller than the crop are extended
/// by reflection.
class BatchStream {
 public:
  BatchStream(const Dataset& ds, std::size_t crop, std::size_t batch_size, std::uint64_t seed, bool chroma)
      : ds_(&ds), crop_(crop), batch_(batch_size), chroma_(chroma), rng_(seed) {
    if (ds.images.empty()) fail(ErrorKind::kUsage, "make_batches: dataset is empty");
    if (crop == 0 || batch_size == 0) fail(ErrorKind::kUsage, "make_batches: crop and batch size must be positive");
  }

  Batch next() {
    Tensor<float> y(Shape{batch_, 1, crop_, crop_});
    Tensor<float> cb, cr;
    if (chroma_) {
      cb = Tensor<float>(y.shape());
      cr = Tensor<float>(y.shape());
    }
    for (std::size_t b = 0; b < batch_; ++b) {
      const std::size_t idx = pick(ds_->images.size());
      const YCbCrPlanes& img = ds_->images[idx];
      const std::size_t w = img.y.width, h = img.y.height;
      const std::size_t x0 = w > crop_ ? pick(w - crop_ + 1) : 0;
      const std::size_t y0 = h > crop_ ? pick(h - crop_ + 1) : 0;
      copy_crop(img.y, x0, y0, y.ptr() + b * crop_ * crop_);
      if (chroma_) {
        copy_crop(img.cb, x0, y0, cb.ptr() + b * crop_ * crop_);
        copy_crop(img.cr, x0, y0, cr.ptr() + b * crop_ * crop_);
      }
    }
    Batch out;
    out.y = constant(std::move(y));
    if (chroma_) {
      out.cb = constant(std::move(cb));
      out.cr = constant(std::move(cr));
    }
    return out;
  }

 private:
  std::size_t pick(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }

  void copy_crop(const Plane& p, std::size_t x0, std::size_t y0, float* dst) const {
    for (std::size_t y = 0; y < crop_; ++y) {
      const std::size_t sy = detail::pad_source(y0 + y, p.height);
      for (std::size_t x = 0; x < crop_; ++x) dst[y * crop_ + x] = p.at(detail::pad_source(x0 + x, p.width), sy);
    }
  }

  const Dataset* ds_;
  std::size_t crop_, batch_;
  bool chroma_;
  std::mt19937_64 rng_;
};

inline BatchStream make_batches(const Dataset& ds, std::size_t crop, std::size_t batch_size, std::uint64_t seed,
                                int stage) {
  return BatchStream(ds, crop, batch_size, seed, stage == 2);
}

// ------------------------------------------------------------------ loss

template <class T>
struct LossReport {
  Var<T> loss;
  double loss_value = 0.0;
  double rate_bpp = 0.0;  // estimated bits per pixel, batch mean
  double mse = 0.0;
  double lambda = 0.0;
  std::vector<double> subband_bits;  // batch mean per subband
};

template <class T>
void require_finite_report(const LossReport<T>& r) {
  if (!std::isfinite(r.loss_value) || !std::isfinite(r.rate_bpp) || !std::isfinite(r.mse)) {
    fail(ErrorKind::kNumeric, "rd_loss: non-finite loss (rate_bpp=" + std::to_string(r.rate_bpp) +
                                  ", mse=" + std::to_string(r.mse) + ")");
  }
}

/// Luma objective: mean over the batch of bits / pixels + lambda * MSE.
template <class T>
LossReport<T> rd_loss(const Model<T>& m, const Var<T>& planes, double lambda, QuantMode mode = QuantMode::kRound) {
  require_rank(planes.shape(), 4, "rd_loss");
  const std::size_t batch = planes.dim(0);
  const double pixels = static_cast<double>(planes.dim(2) * planes.dim(3));
  SubbandPyramid<T> q = analyze(m, planes, mode);
  CodedContext<T> coded;
  ComponentRate<T> rate = component_rate(m, Component::kY, q, coded, std::nullopt);
  Var<T> recon = synthesize(m, q);
  Var<T> dist = mse(recon, planes);
  Var<T> rate_term = mul_const(sum(rate.bits), static_cast<T>(1.0 / (static_cast<double>(batch) * pixels)));
  LossReport<T> r;
  r.loss = add(rate_term, mul_const(dist, static_cast<T>(lambda)));
  r.loss_value = static_cast<double>(r.loss.value()[0]);
  r.rate_bpp = static_cast<double>(rate_term.value()[0]);
  r.mse = static_cast<double>(dist.value()[0]);
  r.lambda = lambda;
  for (double b : rate.subband_bits) r.subband_bits.push_back(b / static_cast<double>(batch));
  require_finite_report(r);
  return r;
}

struct ChromaOptions {
  bool ablate = false;
  bool with_distortion = true;
};

/// Chroma objective: (L_Cb + L_Cr) / 2 with the Y pass supplying context
/// and the initial predictor state.
template <class T>
LossReport<T> chroma_rd_loss(const Model<T>& m, const Var<T>& y, const Var<T>& cb, const Var<T>& cr, double lambda,
                             ChromaOptions opt = {}) {
  const std::size_t batch = y.dim(0);
  const double pixels = static_cast<double>(y.dim(2) * y.dim(3));
  CodedContext<T> coded;
  SubbandPyramid<T> qy = analyze(m, y);
  ComponentRate<T> luma = component_rate(m, Component::kY, qy, coded, std::nullopt, {opt.ablate, false});
  LossReport<T> r;
  r.lambda = lambda;
  Var<T> total;
  double mse_sum = 0.0;
  const Var<T>* planes[2] = {&cb, &cr};
  for (int k = 0; k < 2; ++k) {
    const Component c = k == 0 ? Component::kCb : Component::kCr;
    SubbandPyramid<T> q = analyze(m, *planes[k]);
    ComponentRate<T> rate =
        component_rate(m, c, q, coded, chroma_initial_state(m, luma, opt.ablate), {opt.ablate, true});
    Var<T> term = mul_const(sum(rate.bits), static_cast<T>(0.5 / (static_cast<double>(batch) * pixels)));
    if (opt.with_distortion) {
      double d = 0.0;
      {
        NoGradGuard guard;
        Var<T> recon = synthesize(m, q);
        d = static_cast<double>(mse(recon, *planes[k]).value()[0]);
      }
      mse_sum += d;
      term = add_const(term, static_cast<T>(0.5 * lambda * d));
    }
    total = total.defined() ? add(total, term) : term;
    if (r.subband_bits.empty()) r.subband_bits.assign(rate.subband_bits.size(), 0.0);
    for (std::size_t i = 0; i < rate.subband_bits.size(); ++i) {
      r.subband_bits[i] += 0.5 * rate.subband_bits[i] / static_cast<double>(batch);
    }
  }
  r.loss = total;
  r.mse = 0.5 * mse_sum;
  r.loss_value = static_cast<double>(total.value()[0]);
  r.rate_bpp = r.loss_value - lambda * r.mse;
  require_finite_report(r);
  return r;
}

// -------------------------------------------------------------- training

struct TrainConfig {
  int stage = 1;
  double lambda = 0.01;
  std::size_t batch_size = 16;
  std::size_t crop = 64;
  long steps = 300;
  double lr = 1e-4;
  double lr_min = 1e-6;
  double weight_decay = 0.0;
  std::uint64_t seed = 1;
};

struct StepLog {
  long step = 0;  // 1-based
  double lr = 0.0;
  double loss = 0.0;
  double rate_bpp = 0.0;
  double mse = 0.0;
};

inline void write_train_log(const std::vector<StepLog>& log, const std::filesystem::path& path) {
  std::string text = "step,lr,loss,rate_bpp,mse\n";
  char buf[160];
  for (const auto& s : log) {
    std::snprintf(buf, sizeof buf, "%ld,%.9g,%.9g,%.9g,%.9g\n", s.step, s.lr, s.loss, s.rate_bpp, s.mse);
    text += buf;
  }
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

using StepCallback = std::function<void(const StepLog&)>;

inline std::vector<StepLog> train_stage1(Model<float>& m, const Dataset& ds, const TrainConfig& cfg,
                                         const StepCallback& on_step = {}) {
  FloatModeGuard fp_mode;
  if (cfg.steps <= 0) fail(ErrorKind::kUsage, "train: steps must be positive");
  m.registry.set_all_trainable(true);
  m.registry.set_trainable("ctx.c.", false);
  BatchStream batches = make_batches(ds, cfg.crop, cfg.batch_size, cfg.seed, 1);
  AdamW<float> opt(m.registry, {0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<StepLog> log;
  for (long step = 0; step < cfg.steps; ++step) {
    const double lr = cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_min);
    Batch b = batches.next();
    m.registry.zero_grad();
    LossReport<float> r = rd_loss(m, b.y, cfg.lambda);
    backward(r.loss);
    opt.step(lr);
    m.project();
    log.push_back({step + 1, lr, r.loss_value, r.rate_bpp, r.mse});
    if (on_step) on_step(log.back());
  }
  m.registry.zero_grad();
  return log;
}

/// Serialised bytes of every parameter outside the chroma context modules.
inline std::vector<std::uint8_t> frozen_bytes(const Model<float>& m) {
  std::vector<std::uint8_t> out;
  for (const auto& [name, var] : m.registry.entries()) {
    if (name.rfind("ctx.c.", 0) == 0) continue;
    const auto* p = reinterpret_cast<const std::uint8_t*>(var.value().ptr());
    out.insert(out.end(), name.begin(), name.end());
    out.insert(out.end(), p, p + var.size() * sizeof(float));
  }
  return out;
}

/// Stage 2: the chroma predictor and fusion modules are initialised from the
/// luma ones and trained alone; everything else is frozen and verified
/// unchanged afterwards.
inline std::vector<StepLog> train_stage2(Model<float>& m, const Dataset& ds, const TrainConfig& cfg,
                                         const StepCallback& on_step = {}, bool init_from_luma = true) {
  FloatModeGuard fp_mode;
  if (cfg.steps <= 0) fail(ErrorKind::kUsage, "train: steps must be positive");
  if (init_from_luma) init_chroma_from_luma(m);
  m.registry.set_all_trainable(false);
  m.registry.set_trainable("ctx.c.", true);
  const auto before = frozen_bytes(m);
  BatchStream batches = make_batches(ds, cfg.crop, cfg.batch_size, cfg.seed, 2);
  AdamW<float> opt(m.registry, {0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<StepLog> log;
  for (long step = 0; step < cfg.steps; ++step) {
    const double lr = cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_min);
    Batch b = batches.next();
    m.registry.zero_grad();
    LossReport<float> r = chroma_rd_loss(m, b.y, b.cb, b.cr, cfg.lambda);
    backward(r.loss);
    opt.step(lr);
    log.push_back({step + 1, lr, r.loss_value, r.rate_bpp, r.mse});
    if (on_step) on_step(log.back());
  }
  m.registry.zero_grad();
  m.registry.set_all_trainable(true);
  if (frozen_bytes(m) != before) fail(ErrorKind::kState, "train_stage2: a frozen tensor changed during training");
  return log;
}

}  // namespace wavecc
