#include "bldgmpc/rnn.hpp"

#include <gtest/gtest.h>

#include <array>
#include <random>

using namespace bldgmpc;
using namespace bldgmpc::rnn;

namespace {

ModelShape toy_shape(int hidden = 8) {
  ModelShape s;
  s.inputs = 3;
  s.outputs = 2;
  s.energy = 1;
  s.hidden = hidden;
  s.encoder_steps = 4;
  s.head_hidden = {6, 5};
  return s;
}

Mat randn(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Mat M(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) M(i, j) = g(rng);
  return M;
}

SeqBatch random_batch(const EncoderDecoderModel& m, int B, int L, std::mt19937_64& rng) {
  SeqBatch b;
  for (int t = 0; t < m.encoder_steps; ++t) b.enc_in.push_back(randn(m.history_dim(), B, rng));
  for (int k = 0; k < L; ++k) {
    b.dec_in.push_back(randn(m.inputs, B, rng));
    b.target.push_back(randn(m.head_outputs(), B, rng));
  }
  return b;
}

// Perturbs the model so biases and normalization are non-trivial.
EncoderDecoderModel random_model(std::uint64_t seed, int hidden = 8) {
  EncoderDecoderModel m = make_model(toy_shape(hidden), seed);
  std::mt19937_64 rng(seed + 1000);
  Vec theta = m.w.flatten();
  theta += randn(theta.size(), 1, rng, 0.3).col(0);
  m.w.assign(theta);
  m.u_norm.mean = randn(m.inputs, 1, rng).col(0);
  m.u_norm.std = randn(m.inputs, 1, rng).col(0).cwiseAbs().array() + 0.5;
  m.y_norm.mean = randn(m.outputs, 1, rng).col(0);
  m.y_norm.std = randn(m.outputs, 1, rng).col(0).cwiseAbs().array() + 0.5;
  m.z_norm.mean = Vec::Constant(1, 2.0);
  m.z_norm.std = Vec::Constant(1, 1.7);
  return m;
}

bool close_rel(double a, double b, double rel, double floor = 1e-6) {
  return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace

TEST(Normalizer, RoundTrip) {
  std::mt19937_64 rng(1);
  const Mat x = randn(50, 4, rng, 30.0);
  const Normalizer n = Normalizer::fit(x);
  EXPECT_LT((n.denormalize(n.normalize(x)) - x).cwiseAbs().maxCoeff(), 1e-12 * 30.0);
  const Mat z = n.normalize(x);
  EXPECT_LT(z.colwise().mean().cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encode, ZeroModelHasZeroState) {
  EncoderDecoderModel m = make_model(toy_shape(), 3);
  m.w.assign(Vec::Zero(m.w.size()));
  const auto s = encode(m, Mat::Zero(4, m.history_dim()));
  EXPECT_EQ(s.c, Vec::Zero(8));
  EXPECT_EQ(s.h, Vec::Zero(8));
}

TEST(Encode, OrderSensitiveAndDeterministic) {
  const EncoderDecoderModel m = random_model(5);
  std::mt19937_64 rng(6);
  const Mat hist = randn(4, m.history_dim(), rng);
  Mat reversed = hist.colwise().reverse();
  const auto a = encode(m, hist), b = encode(m, hist), r = encode(m, reversed);
  EXPECT_EQ(a.h, b.h);
  EXPECT_EQ(a.c, b.c);
  EXPECT_GT((a.h - r.h).norm(), 1e-6);
  EXPECT_THROW(encode(m, hist.topRows(3)), InvalidInput);
}

TEST(Decode, ZeroModelOutputsDenormalizedBias) {
  EncoderDecoderModel m = make_model(toy_shape(), 4);
  m.w.assign(Vec::Zero(m.w.size()));
  m.w.head.back().b << 0.5, -1.0, 2.0;
  m.y_norm.mean << 20.0, 21.0;
  m.y_norm.std << 2.0, 3.0;
  m.z_norm.mean << 1.0;
  m.z_norm.std << 4.0;
  const auto d = decode(m, encode(m, Mat::Ones(4, m.history_dim())), Mat::Ones(5, 3));
  for (int k = 0; k < 5; ++k) {
    EXPECT_DOUBLE_EQ(d.y(k, 0), 21.0);
    EXPECT_DOUBLE_EQ(d.y(k, 1), 18.0);
    EXPECT_DOUBLE_EQ(d.z(k, 0), 9.0);
  }
}

TEST(Decode, CausalPrefix) {
  const EncoderDecoderModel m = random_model(7);
  std::mt19937_64 rng(8);
  const auto s = encode(m, randn(4, m.history_dim(), rng));
  const Mat u = randn(2, 3, rng);
  const auto one = decode(m, s, u.topRows(1));
  const auto two = decode(m, s, u);
  EXPECT_EQ(one.y.row(0), two.y.row(0));
  EXPECT_EQ(one.z(0, 0), two.z(0, 0));
}

TEST(Decode, MatchesScalarReferenceCell) {
  // Two hidden units, one decoder input, no hidden head layer.
  ModelShape shape;
  shape.inputs = 1;
  shape.outputs = 1;
  shape.energy = 1;
  shape.hidden = 2;
  shape.encoder_steps = 1;
  shape.head_hidden = {};
  EncoderDecoderModel m = make_model(shape, 11);
  std::mt19937_64 rng(12);
  Vec theta = m.w.flatten();
  theta += randn(theta.size(), 1, rng, 0.5).col(0);
  m.w.assign(theta);
  const std::array<double, 3> u{0.3, -1.2, 0.8};
  const std::array<double, 2> c0{0.1, -0.4}, h0{0.25, 0.05};

  // Reference: explicit gate equations with scalar loops.
  auto sig = [](double a) { return 1.0 / (1.0 + std::exp(-a)); };
  const LstmCell& cell = m.w.dec;
  std::array<double, 2> c = c0, h = h0;
  std::vector<std::array<double, 2>> expected;
  for (double x : u) {
    std::array<double, 8> a{};
    for (int r = 0; r < 8; ++r) a[r] = cell.b[r] + cell.W(r, 0) * x + cell.W(r, 1) * h[0] + cell.W(r, 2) * h[1];
    std::array<double, 2> cn{}, hn{};
    for (int q = 0; q < 2; ++q) {
      const double ig = sig(a[q]), fg = sig(a[2 + q]), gg = std::tanh(a[4 + q]), og = sig(a[6 + q]);
      cn[q] = fg * c[q] + ig * gg;
      hn[q] = og * std::tanh(cn[q]);
    }
    c = cn;
    h = hn;
    const Dense& out = m.w.head[0];
    expected.push_back({out.b[0] + out.W(0, 0) * h[0] + out.W(0, 1) * h[1],
                        out.b[1] + out.W(1, 0) * h[0] + out.W(1, 1) * h[1]});
  }
  HiddenState s{Vec(2), Vec(2)};
  s.c << c0[0], c0[1];
  s.h << h0[0], h0[1];
  Mat useq(3, 1);
  useq << u[0], u[1], u[2];
  const auto d = decode(m, s, useq);
  for (int k = 0; k < 3; ++k) {
    EXPECT_NEAR(d.y(k, 0), expected[k][0], 1e-14);
    EXPECT_NEAR(d.z(k, 0), expected[k][1], 1e-14);
  }
}

TEST(Gradients, MatchFiniteDifferencesOnManyDraws) {
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    const EncoderDecoderModel m = random_model(100 + draw);
    std::mt19937_64 rng(200 + draw);
    const SeqBatch batch = random_batch(m, 3, 3, rng);
    Weights grad;
    loss_and_gradients(m, batch, &grad);
    const Vec g = grad.flatten();
    const Vec theta = m.w.flatten();
    EncoderDecoderModel probe = m;
    int bad = 0;
    for (Eigen::Index j = 0; j < theta.size(); ++j) {
      const double h = 1e-5;
      Vec tp = theta, tm = theta;
      tp[j] += h;
      tm[j] -= h;
      probe.w.assign(tp);
      const double lp = loss_and_gradients(probe, batch, nullptr);
      probe.w.assign(tm);
      const double lm = loss_and_gradients(probe, batch, nullptr);
      const double fd = (lp - lm) / (2 * h);
      if (!close_rel(fd, g[j], 1e-4)) {
        ++bad;
        ADD_FAILURE() << "draw " << draw << " param " << j << ": analytic " << g[j] << " fd " << fd;
      }
    }
    ASSERT_EQ(bad, 0);
  }
}

TEST(Gradients, ZeroErrorBatchHasZeroGradient) {
  const EncoderDecoderModel m = random_model(9);
  std::mt19937_64 rng(10);
  SeqBatch batch = random_batch(m, 2, 4, rng);
  // Replace targets with the model's own (normalized) outputs.
  Mat c = Mat::Zero(8, 2), h = Mat::Zero(8, 2);
  for (const auto& x : batch.enc_in) detail::lstm_forward(m.w.enc, x, c, h, nullptr);
  for (std::size_t k = 0; k < batch.dec_in.size(); ++k) {
    detail::lstm_forward(m.w.dec, batch.dec_in[k], c, h, nullptr);
    batch.target[k] = detail::head_forward(m.w.head, h, nullptr);
  }
  Weights grad;
  EXPECT_EQ(loss_and_gradients(m, batch, &grad), 0.0);
  EXPECT_EQ(grad.flatten().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Gradients, ClippingBoundsGlobalNorm) {
  const EncoderDecoderModel m = random_model(13);
  std::mt19937_64 rng(14);
  const SeqBatch batch = random_batch(m, 4, 5, rng);
  Weights grad;
  loss_and_gradients(m, batch, &grad);
  Weights scaled = grad;
  scaled.assign(grad.flatten() * 1e3);
  const double before = clip_gradients(scaled, 1.0);
  EXPECT_GT(before, 1.0);
  EXPECT_LE(scaled.flatten().norm(), 1.0 + 1e-12);
  // Direction preserved.
  EXPECT_NEAR(scaled.flatten().normalized().dot(grad.flatten().normalized()), 1.0, 1e-12);
}

TEST(Jacobian, MatchesFiniteDifferencesAndIsCausal) {
  const std::vector<int> mask{0, 2};
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    const EncoderDecoderModel m = random_model(300 + draw);
    std::mt19937_64 rng(400 + draw);
    const auto s = encode(m, randn(4, m.history_dim(), rng));
    const Mat u = randn(5, 3, rng);
    const auto d = decode(m, s, u, mask);
    ASSERT_EQ(d.jacobian.rows(), 5 * 3);
    ASSERT_EQ(d.jacobian.cols(), 5 * 2);
    for (int k = 0; k < 5; ++k)
      for (int j = 0; j < 5; ++j)
        for (int mi = 0; mi < 2; ++mi) {
          const double h = 1e-5;
          Mat up = u, um = u;
          up(j, mask[mi]) += h;
          um(j, mask[mi]) -= h;
          const auto dp = decode(m, s, up), dm = decode(m, s, um);
          for (int o = 0; o < 3; ++o) {
            const double vp = o < 2 ? dp.y(k, o) : dp.z(k, 0);
            const double vm = o < 2 ? dm.y(k, o) : dm.z(k, 0);
            const double an = d.jacobian(k * 3 + o, j * 2 + mi);
            if (j > k) {
              ASSERT_EQ(an, 0.0);
              ASSERT_EQ(vp, vm);  // later inputs leave earlier outputs bit-identical
            } else {
              ASSERT_TRUE(close_rel((vp - vm) / (2 * h), an, 1e-4))
                  << "draw " << draw << " out " << k << "/" << o << " in " << j << "/" << mi << ": " << an << " vs "
                  << (vp - vm) / (2 * h);
            }
          }
        }
  }
}

TEST(Jacobian, ZeroDecoderInputWeightsGiveZero) {
  EncoderDecoderModel m = random_model(15);
  m.w.dec.W.leftCols(m.inputs).setZero();
  std::mt19937_64 rng(16);
  const auto d = decode(m, encode(m, randn(4, m.history_dim(), rng)), randn(6, 3, rng), {0, 1, 2});
  EXPECT_EQ(d.jacobian.cwiseAbs().maxCoeff(), 0.0);
}

namespace {

SequenceData synthetic_series(int N, std::uint64_t seed, bool constant) {
  std::mt19937_64 rng(seed);
  SequenceData d;
  d.u = randn(N, 3, rng);
  d.y.resize(N, 2);
  d.z.resize(N, 1);
  double s = 0.0;
  for (int k = 0; k < N; ++k) {
    s = 0.8 * s + 0.5 * d.u(k, 0) - 0.2 * d.u(k, 1);
    d.y(k, 0) = constant ? 21.0 : 20.0 + s;
    d.y(k, 1) = constant ? 19.0 : 19.0 + 0.5 * s + 0.3 * d.u(k, 2);
    d.z(k, 0) = constant ? 3.0 : std::max(0.0, d.u(k, 0) + 0.5);
  }
  return d;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.learning_rate = 5e-3;
  cfg.decode_lengths = {2, 4, 8};
  cfg.epochs = 8;
  cfg.iterations_per_epoch = 20;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(Train, LearnsConstantTarget) {
  const SequenceData data = synthetic_series(300, 1, true);
  auto cfg = quick_config();
  cfg.epochs = 15;
  const auto r = train(make_model(toy_shape(), 2), data, cfg);
  EXPECT_LT(r.epoch_loss.back(), 1e-3);
  HiddenState s = encode(r.model, history_matrix(data.u.topRows(4), data.y.topRows(4), data.z.topRows(4)));
  const auto d = decode(r.model, s, data.u.middleRows(4, 3));
  EXPECT_NEAR(d.y(2, 0), 21.0, 0.05);
  EXPECT_NEAR(d.z(2, 0), 3.0, 0.05);
}

TEST(Train, HeldOutLossDropsAndSeedReproduces) {
  const SequenceData data = synthetic_series(600, 2, false);
  const SequenceData held = synthetic_series(200, 3, false);
  const auto cfg = quick_config();
  EncoderDecoderModel init = make_model(toy_shape(), 4);
  const auto a = train(init, data, cfg);
  const auto b = train(init, data, cfg);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(a.model.w.flatten(), b.model.w.flatten());

  std::vector<Eigen::Index> starts;
  for (Eigen::Index s = 4; s + 8 <= held.length(); s += 7) starts.push_back(s);
  EncoderDecoderModel untrained = init;
  untrained.u_norm = a.model.u_norm;
  untrained.y_norm = a.model.y_norm;
  untrained.z_norm = a.model.z_norm;
  EXPECT_LT(evaluate_loss(a.model, held, starts, 8), 0.5 * evaluate_loss(untrained, held, starts, 8));
  EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
}

TEST(Train, DivergenceIsReported) {
  SequenceData data = synthetic_series(300, 5, false);
  data.u(10, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train(make_model(toy_shape(), 1), data, quick_config()), InvalidInput);
  auto cfg = quick_config();
  cfg.learning_rate = 1e200;
  EXPECT_THROW(train(make_model(toy_shape(), 1), synthetic_series(300, 5, false), cfg), TrainingDivergence);
}
