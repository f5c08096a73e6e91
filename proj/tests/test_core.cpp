#include <gtest/gtest.h>

#include <random>

#include "wavecc/grad_check.hpp"
#include "wavecc/nn.hpp"
#include "wavecc/optim.hpp"

using namespace wavecc;

namespace {

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// Whole-sample symmetric extension written independently of the library.
int mirror(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Half-sample symmetric extension: x[-1] = x[0].
int half_mirror(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

// Direct cross-correlation; masked taps given as a 3x3 keep-table.
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& k, const Tensor<double>* bias, Padding pad,
                           const bool keep[3][3] = nullptr) {
  const int B = int(x.dim(0)), C = int(x.dim(1)), H = int(x.dim(2)), W = int(x.dim(3));
  const int O = int(k.dim(0)), KH = int(k.dim(2)), KW = int(k.dim(3));
  Tensor<double> out(Shape{x.dim(0), k.dim(0), x.dim(2), x.dim(3)});
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          double acc = bias ? (*bias)[o] : 0.0;
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < KH; ++ky)
              for (int kx = 0; kx < KW; ++kx) {
                if (keep && !keep[ky][kx]) continue;
                int sy = y + ky - KH / 2, sx = xx + kx - KW / 2;
                if (pad == Padding::kSymmetric) {
                  sy = mirror(sy, H);
                  sx = mirror(sx, W);
                } else if (pad == Padding::kHalfSymmetric) {
                  sy = half_mirror(sy, H);
                  sx = half_mirror(sx, W);
                } else if (sy < 0 || sy >= H || sx < 0 || sx >= W) {
                  continue;
                }
                acc += k[((o * C + c) * KH + ky) * KW + kx] * x.at(b, c, sy, sx);
              }
          out.at(b, o, y, xx) = acc;
        }
  return out;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST(Conv2d, OneByOneKernelDoubles) {
  std::mt19937_64 rng(1);
  Var<double> x(random_tensor({2, 1, 5, 4}, rng));
  Var<double> k(Tensor<double>(Shape{1, 1, 1, 1}, 2.0));
  Var<double> y = conv2d(x, k, Var<double>(), Padding::kSymmetric);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y.value()[i], 2.0 * x.value()[i]);
}

TEST(Conv2d, ZeroKernelGivesBias) {
  std::mt19937_64 rng(2);
  Var<double> x(random_tensor({1, 2, 4, 4}, rng));
  Var<double> k(Tensor<double>(Shape{3, 2, 3, 3}));
  Var<double> b(Tensor<double>(Shape{3}, std::vector<double>{0.5, -1.0, 2.0}));
  Var<double> y = conv2d(x, k, b, Padding::kZero);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t p = 0; p < 16; ++p) EXPECT_DOUBLE_EQ(y.value()[o * 16 + p], b.value()[o]);
}

TEST(Conv2d, MatchesBruteForceOracle) {
  std::mt19937_64 rng(3);
  for (Padding pad : {Padding::kSymmetric, Padding::kHalfSymmetric, Padding::kZero}) {
    for (auto shape : {Shape{1, 1, 4, 4}, Shape{2, 3, 5, 7}, Shape{1, 2, 1, 6}}) {
      Tensor<double> x = random_tensor(shape, rng);
      Tensor<double> k = random_tensor({4, shape[1], 3, 3}, rng);
      Tensor<double> b = random_tensor({4}, rng);
      Var<double> y = conv2d(Var<double>(x), Var<double>(k), Var<double>(b), pad);
      EXPECT_LT(max_abs_diff(y.value(), conv_oracle(x, k, &b, pad)), 1e-12);
    }
  }
  // Non-square kernels as used by the lifting filters.
  Tensor<double> x = random_tensor({1, 1, 8, 3}, rng);
  Tensor<double> k = random_tensor({2, 1, 3, 1}, rng);
  for (Padding pad : {Padding::kSymmetric, Padding::kHalfSymmetric}) {
    Var<double> y = conv2d(Var<double>(x), Var<double>(k), Var<double>(), pad);
    EXPECT_LT(max_abs_diff(y.value(), conv_oracle(x, k, nullptr, pad)), 1e-12);
  }
}

TEST(Conv2d, MaskAIgnoresCentre) {
  Tensor<double> x(Shape{1, 1, 3, 3});
  x.at(0, 0, 1, 1) = 5.0;
  Var<double> k(Tensor<double>(Shape{1, 1, 3, 3}, 1.0));
  Var<double> y = conv2d(Var<double>(x), k, Var<double>(), Padding::kZero, ConvMask::kA);
  EXPECT_DOUBLE_EQ(y.value().at(0, 0, 1, 1), 0.0);
}

TEST(Conv2d, MaskAOnTwoByTwoByHand) {
  // kernel taps: row -1: a b c, row 0: d (e) (f) ...
  Tensor<double> k(Shape{1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 100, 100, 100, 100, 100});
  Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{10, 20, 30, 40});
  Var<double> y = conv2d(Var<double>(x), Var<double>(k), Var<double>(), Padding::kZero, ConvMask::kA);
  // (0,0): nothing above or left. (0,1): left=10 via d. (1,0): above=10 (b), above-right=20 (c).
  // (1,1): above-left 10 (a), above 20 (b), left 30 (d).
  EXPECT_DOUBLE_EQ(y.value()[0], 0.0);
  EXPECT_DOUBLE_EQ(y.value()[1], 40.0);
  EXPECT_DOUBLE_EQ(y.value()[2], 2 * 10 + 3 * 20);
  EXPECT_DOUBLE_EQ(y.value()[3], 1 * 10 + 2 * 20 + 4 * 30);
}

TEST(Conv2d, MaskedMatchesRasterOracle) {
  std::mt19937_64 rng(4);
  const bool keep_a[3][3] = {{1, 1, 1}, {1, 0, 0}, {0, 0, 0}};
  const bool keep_b[3][3] = {{1, 1, 1}, {1, 1, 0}, {0, 0, 0}};
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<double> x = random_tensor({2, 2, 6, 5}, rng);
    Tensor<double> k = random_tensor({3, 2, 3, 3}, rng);
    Var<double> ya = conv2d(Var<double>(x), Var<double>(k), Var<double>(), Padding::kZero, ConvMask::kA);
    Var<double> yb = conv2d(Var<double>(x), Var<double>(k), Var<double>(), Padding::kZero, ConvMask::kB);
    EXPECT_LT(max_abs_diff(ya.value(), conv_oracle(x, k, nullptr, Padding::kZero, keep_a)), 1e-12);
    EXPECT_LT(max_abs_diff(yb.value(), conv_oracle(x, k, nullptr, Padding::kZero, keep_b)), 1e-12);
  }
}

TEST(Conv2d, MaskBIdentityCentre) {
  std::mt19937_64 rng(5);
  Tensor<double> x = random_tensor({1, 1, 4, 4}, rng);
  Tensor<double> k(Shape{1, 1, 3, 3});
  k[4] = 1.0;
  Var<double> y = conv2d(Var<double>(x), Var<double>(k), Var<double>(), Padding::kZero, ConvMask::kB);
  EXPECT_LT(max_abs_diff(y.value(), x), 1e-15);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (auto mask : {ConvMask::kNone, ConvMask::kA, ConvMask::kB}) {
    for (auto pad : {Padding::kSymmetric, Padding::kHalfSymmetric, Padding::kZero}) {
      Var<double> x(random_tensor({2, 2, 5, 4}, rng), true);
      Var<double> k(random_tensor({3, 2, 3, 3}, rng), true);
      Var<double> b(random_tensor({3}, rng), true);
      Var<double> w(random_tensor({2, 3, 5, 4}, rng));
      auto loss = [&] { return sum(mul(tanh(conv2d(x, k, b, pad, mask)), w)); };
      auto r = grad_check(loss, {{"x", x}, {"k", k}, {"b", b}}, 1e-5, 40);
      EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_param << "[" << r.worst_index << "]";
    }
  }
}

TEST(ConvLstm, ZeroWeightsZeroState) {
  ParamRegistry<double> reg;
  auto cell = ConvLstmCell<double>::create(reg, "l", 2, 3, 1);
  for (auto& [n, v] : reg.entries()) const_cast<Var<double>&>(v).mutable_value().fill(0.0);
  std::mt19937_64 rng(7);
  auto s = conv_lstm_step(Var<double>(random_tensor({1, 2, 4, 4}, rng)), cell.zero_state(1, 4, 4), cell);
  for (double v : s.h.value().storage()) EXPECT_EQ(v, 0.0);
  for (double v : s.c.value().storage()) EXPECT_EQ(v, 0.0);
}

TEST(ConvLstm, SaturatedForgetGateKeepsCell) {
  ParamRegistry<double> reg;
  auto cell = ConvLstmCell<double>::create(reg, "l", 1, 2, 1);
  cell.gates.weight.mutable_value().fill(0.0);
  auto& b = cell.gates.bias.mutable_value();
  b.fill(0.0);
  for (std::size_t i = 2; i < 4; ++i) b[i] = 10.0;   // forget
  for (std::size_t i = 0; i < 2; ++i) b[i] = -10.0;  // input gate closed
  std::mt19937_64 rng(8);
  LstmState<double> st{constant(Tensor<double>(Shape{1, 2, 3, 3})), constant(random_tensor({1, 2, 3, 3}, rng))};
  auto next = conv_lstm_step(Var<double>(random_tensor({1, 1, 3, 3}, rng)), st, cell);
  EXPECT_LT(max_abs_diff(next.c.value(), st.c.value()), 1e-4);
}

TEST(ConvLstm, MatchesCompositionalOracle) {
  ParamRegistry<double> reg;
  auto cell = ConvLstmCell<double>::create(reg, "l", 2, 3, 11);
  std::mt19937_64 rng(9);
  cell.gates.bias.mutable_value() = random_tensor({12}, rng);
  Tensor<double> x = random_tensor({2, 2, 4, 5}, rng);
  Tensor<double> h = random_tensor({2, 3, 4, 5}, rng);
  Tensor<double> c = random_tensor({2, 3, 4, 5}, rng);
  auto next = conv_lstm_step(Var<double>(x), {Var<double>(h), Var<double>(c)}, cell);

  Tensor<double> xin(Shape{2, 5, 4, 5});
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t y = 0; y < 4; ++y)
      for (std::size_t xx = 0; xx < 5; ++xx) {
        for (std::size_t ch = 0; ch < 2; ++ch) xin.at(b, ch, y, xx) = x.at(b, ch, y, xx);
        for (std::size_t ch = 0; ch < 3; ++ch) xin.at(b, 2 + ch, y, xx) = h.at(b, ch, y, xx);
      }
  Tensor<double> z = conv_oracle(xin, cell.gates.weight.value(), &cell.gates.bias.value(), Padding::kSymmetric);
  double err = 0.0;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t xx = 0; xx < 5; ++xx) {
          const double ig = sigm(z.at(b, ch, y, xx)), fg = sigm(z.at(b, 3 + ch, y, xx));
          const double gg = std::tanh(z.at(b, 6 + ch, y, xx)), og = sigm(z.at(b, 9 + ch, y, xx));
          const double cn = fg * c.at(b, ch, y, xx) + ig * gg;
          const double hn = og * std::tanh(cn);
          err = std::max({err, std::abs(cn - next.c.value().at(b, ch, y, xx)),
                          std::abs(hn - next.h.value().at(b, ch, y, xx))});
        }
  EXPECT_LT(err, 1e-12);
}

TEST(ConvLstm, GradCheck) {
  ParamRegistry<double> reg;
  auto cell = ConvLstmCell<double>::create(reg, "l", 1, 2, 3);
  std::mt19937_64 rng(10);
  Var<double> x(random_tensor({1, 1, 4, 4}, rng));
  LstmState<double> st{Var<double>(random_tensor({1, 2, 4, 4}, rng)), Var<double>(random_tensor({1, 2, 4, 4}, rng))};
  Var<double> w(random_tensor({1, 2, 4, 4}, rng));
  auto loss = [&] {
    auto s = conv_lstm_step(x, st, cell);
    return add(sum(mul(s.h, w)), sum(mul(s.c, w)));
  };
  auto r = grad_check(loss, {{"w", cell.gates.weight}, {"b", cell.gates.bias}}, 1e-5, 64);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Ops, SoftmaxEqualLogits) {
  Var<double> x(Tensor<double>(Shape{1, 3, 2, 2}, 0.7));
  Var<double> y = channel_softmax(x);
  for (double v : y.value().storage()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Ops, UpsampleNearest) {
  Var<double> x(Tensor<double>(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  Var<double> y = upsample_nearest2(x);
  const std::vector<double> want{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  EXPECT_EQ(y.value().storage(), want);
}

TEST(Ops, TanhGradientAtZero) {
  Var<double> x(Tensor<double>(Shape{1}, 0.0), true);
  backward(sum(tanh(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Autodiff, DotGradientIsInput) {
  std::mt19937_64 rng(11);
  Var<double> w(random_tensor({6}, rng), true);
  Var<double> x(random_tensor({6}, rng));
  backward(sum(mul(w, x)));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(w.grad()[i], x.value()[i]);
}

TEST(Autodiff, MseGradient) {
  std::mt19937_64 rng(12);
  Var<double> x(random_tensor({5}, rng), true);
  Var<double> t(random_tensor({5}, rng));
  backward(mse(x, t));
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(x.grad()[i], 2.0 * (x.value()[i] - t.value()[i]) / 5.0, 1e-15);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  Var<double> x(Tensor<double>(Shape{1}, 3.0), true);
  Var<double> y = mul(x, x);
  backward(sum(add(y, y)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Autodiff, NoGradGuardRecordsNothing) {
  Var<double> x(Tensor<double>(Shape{1}, 3.0), true);
  NoGradGuard g;
  Var<double> y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(Autodiff, ElementwiseOpsGradCheck) {
  std::mt19937_64 rng(13);
  Var<double> a(random_tensor({2, 3, 2, 2}, rng), true);
  Var<double> b(random_tensor({2, 3, 2, 2}, rng, 0.5, 1.5), true);
  Var<double> s(Tensor<double>(Shape{1}, 1.3), true);
  Var<double> w(random_tensor({2, 3, 4, 4}, rng));
  auto loss = [&] {
    Var<double> t = add(mul(sigmoid(a), log(b)), exp(mul_const(a, 0.5)));
    t = sub(t, square(divide(b, s)));
    t = add(t, scale(clamp(a, -0.5, 0.5), s));
    t = concat_channels<double>({slice_channels(t, 1, 2), channel_softmax(t)});
    t = transpose_hw(upsample_nearest2(t));
    return add(mean(mul(slice_channels(t, 0, 3), w)), dot(a, b));
  };
  auto r = grad_check(loss, {{"a", a}, {"b", b}, {"s", s}}, 1e-6, 24);
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst_param;
}

TEST(GradCheck, QuadraticIsExact) {
  std::mt19937_64 rng(14);
  Var<double> x(random_tensor({8}, rng), true);
  auto loss = [&] { return sum(square(add_const(x, 0.3))); };
  auto r = grad_check(loss, {{"x", x}}, 1e-4);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ParamRegistry<double> reg;
  Var<double> th = reg.add("t", Tensor<double>(Shape{1}, 0.0));
  th.grad_buffer()[0] = 1.0;
  AdamW<double> opt(reg, {0.9, 0.999, 1e-8, 0.0});
  opt.step(0.1);
  EXPECT_NEAR(th.value()[0], -0.1, 1e-8);
}

TEST(AdamW, ZeroGradientNoDecayIsNoop) {
  ParamRegistry<double> reg;
  Var<double> th = reg.add("t", Tensor<double>(Shape{2}, std::vector<double>{0.5, -2.0}));
  th.grad_buffer();
  AdamW<double> opt(reg, {0.9, 0.999, 1e-8, 0.0});
  opt.step(0.1);
  EXPECT_EQ(th.value()[0], 0.5);
  EXPECT_EQ(th.value()[1], -2.0);
}

TEST(AdamW, PureDecay) {
  ParamRegistry<double> reg;
  Var<double> th = reg.add("t", Tensor<double>(Shape{1}, 2.0));
  AdamW<double> opt(reg, {0.9, 0.999, 1e-8, 0.1});
  opt.step(1.0);
  EXPECT_NEAR(th.value()[0], 1.8, 1e-12);
}

TEST(Params, SaveLoadRoundTrip) {
  ParamRegistry<float> a, b;
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<float> u(-1, 1);
  for (auto* r : {&a, &b}) {
    r->add("x", Tensor<float>(Shape{3, 4}));
    r->add("y.z", Tensor<float>(Shape{5}));
  }
  for (auto& [n, v] : a.entries())
    for (auto& e : const_cast<Var<float>&>(v).mutable_value().storage()) e = u(rng);
  load_weights_bytes(b, serialize_weights(a));
  for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(a.entries()[k].second.value().storage(), b.entries()[k].second.value().storage());
  EXPECT_EQ(weights_digest(a), weights_digest(b));
}

TEST(Params, TruncatedFileLeavesRegistryUntouched) {
  ParamRegistry<float> a;
  a.add("x", Tensor<float>(Shape{4}, 1.5f));
  auto bytes = serialize_weights(a);
  bytes.resize(bytes.size() - 3);
  const_cast<Var<float>&>(a.at("x")).mutable_value().fill(7.0f);
  EXPECT_THROW(load_weights_bytes(a, bytes), Error);
  for (float v : a.at("x").value().storage()) EXPECT_EQ(v, 7.0f);
}

TEST(Params, DuplicateNameRejected) {
  ParamRegistry<float> a;
  a.add("x", Tensor<float>(Shape{1}));
  EXPECT_THROW(a.add("x", Tensor<float>(Shape{1})), Error);
}
