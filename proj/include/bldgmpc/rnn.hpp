#pragma once

// LSTM encoder-decoder predictor. The encoder consumes the recent history
// (u, y, z) and hands its cell/hidden state to the decoder, which rolls out
// from future inputs u only; a small perceptron head maps every decoder hidden
// state to (zone temperatures, thermal electric power).

#include "bldgmpc/common.hpp"

#include <algorithm>
#include <functional>
#include <random>
#include <vector>

namespace bldgmpc::rnn {

/// Per-column affine normalization x_n = (x - mean) / std.
struct Normalizer {
  Vec mean, std;

  static Normalizer identity(int dim) { return {Vec::Zero(dim), Vec::Ones(dim)}; }

  // Columns with (near) zero spread keep unit scale so constants map to 0.
  static Normalizer fit(const Mat& data) {
    require(data.rows() >= 1, "normalizer: need data");
    Normalizer n;
    n.mean = data.colwise().mean().transpose();
    n.std.resize(data.cols());
    for (Eigen::Index c = 0; c < data.cols(); ++c) {
      const double s = std::sqrt((data.col(c).array() - n.mean[c]).square().mean());
      n.std[c] = s > 1e-8 ? s : 1.0;
    }
    return n;
  }

  int dim() const { return static_cast<int>(mean.size()); }
  // Rows are samples.
  Mat normalize(const Mat& x) const { return (x.rowwise() - mean.transpose()) * std.cwiseInverse().asDiagonal(); }
  Mat denormalize(const Mat& x) const { return (x * std.asDiagonal()).rowwise() + mean.transpose(); }
};

struct LstmCell {
  Mat W;  // 4p x (input + p), gate blocks ordered input, forget, cell, output
  Vec b;  // 4p

  int hidden() const { return static_cast<int>(b.size() / 4); }
  int input() const { return static_cast<int>(W.cols()) - hidden(); }
};

struct Dense {
  Mat W;
  Vec b;
};

/// All trainable parameters. Gradients use the same shape.
struct Weights {
  LstmCell enc, dec;
  std::vector<Dense> head;  // tanh on every layer except the last (linear)

  Eigen::Index size() const {
    Eigen::Index n = enc.W.size() + enc.b.size() + dec.W.size() + dec.b.size();
    for (const auto& l : head) n += l.W.size() + l.b.size();
    return n;
  }

  template <class F>
  void for_each(F&& f) {
    f(enc.W.data(), enc.W.size());
    f(enc.b.data(), enc.b.size());
    f(dec.W.data(), dec.W.size());
    f(dec.b.data(), dec.b.size());
    for (auto& l : head) {
      f(l.W.data(), l.W.size());
      f(l.b.data(), l.b.size());
    }
  }

  Vec flatten() const {
    Vec out(size());
    Eigen::Index at = 0;
    const_cast<Weights*>(this)->for_each([&](double* p, Eigen::Index n) {
      out.segment(at, n) = Eigen::Map<Vec>(p, n);
      at += n;
    });
    return out;
  }

  void assign(const Vec& flat) {
    require(flat.size() == size(), "weights: flat vector has wrong length");
    Eigen::Index at = 0;
    for_each([&](double* p, Eigen::Index n) {
      Eigen::Map<Vec>(p, n) = flat.segment(at, n);
      at += n;
    });
  }

  Weights zeros_like() const {
    Weights z = *this;
    z.for_each([](double* p, Eigen::Index n) { std::fill(p, p + n, 0.0); });
    return z;
  }

  bool all_finite() const {
    bool ok = true;
    const_cast<Weights*>(this)->for_each([&](double* p, Eigen::Index n) {
      ok = ok && Eigen::Map<Vec>(p, n).allFinite();
    });
    return ok;
  }
};

struct EncoderDecoderModel {
  int inputs = 12;       // ex: setpoints + weather
  int outputs = 8;       // end: zone temperatures
  int energy = 1;        // nl: thermal electric power
  int encoder_steps = 48;
  Weights w;
  Normalizer u_norm, y_norm, z_norm;

  int hidden() const { return w.enc.hidden(); }
  int history_dim() const { return inputs + outputs + energy; }
  int head_outputs() const { return outputs + energy; }

  void validate() const {
    require(w.enc.hidden() == w.dec.hidden(), "encoder-decoder: encoder and decoder hidden sizes differ");
    require(w.enc.input() == history_dim() && w.dec.input() == inputs, "encoder-decoder: cell input sizes inconsistent");
    require(!w.head.empty() && w.head.front().W.cols() == hidden() && w.head.back().W.rows() == head_outputs(),
            "encoder-decoder: perceptron head shape inconsistent");
    require(u_norm.dim() == inputs && y_norm.dim() == outputs && z_norm.dim() == energy,
            "encoder-decoder: normalization statistics have wrong size");
    require(w.all_finite(), "encoder-decoder: parameters must be finite");
  }
};

struct ModelShape {
  int inputs = 12;
  int outputs = 8;
  int energy = 1;
  int hidden = 64;
  int encoder_steps = 48;
  std::vector<int> head_hidden{64, 32};
};

/// Random initialization: uniform(+-1/sqrt(p)) for the recurrent cells with
/// forget-gate bias 1, Glorot-uniform for the head, identity normalization.
inline EncoderDecoderModel make_model(const ModelShape& shape, std::uint64_t seed) {
  require(shape.inputs >= 1 && shape.outputs >= 1 && shape.energy >= 0 && shape.hidden >= 1 &&
              shape.encoder_steps >= 1,
          "make_model: dimensions must be positive");
  std::mt19937_64 rng(seed);
  auto fill = [&](Mat& M, double r) {
    std::uniform_real_distribution<double> u(-r, r);
    for (Eigen::Index j = 0; j < M.cols(); ++j)
      for (Eigen::Index i = 0; i < M.rows(); ++i) M(i, j) = u(rng);
  };
  EncoderDecoderModel m;
  m.inputs = shape.inputs;
  m.outputs = shape.outputs;
  m.energy = shape.energy;
  m.encoder_steps = shape.encoder_steps;
  const int p = shape.hidden;
  const double r = 1.0 / std::sqrt(static_cast<double>(p));
  auto cell = [&](int in) {
    LstmCell c;
    c.W.resize(4 * p, in + p);
    fill(c.W, r);
    c.b = Vec::Zero(4 * p);
    c.b.segment(p, p).setOnes();
    return c;
  };
  m.w.enc = cell(m.history_dim());
  m.w.dec = cell(m.inputs);
  int prev = p;
  std::vector<int> sizes = shape.head_hidden;
  sizes.push_back(m.head_outputs());
  for (int s : sizes) {
    Dense d;
    d.W.resize(s, prev);
    fill(d.W, std::sqrt(6.0 / (s + prev)));
    d.b = Vec::Zero(s);
    m.w.head.push_back(std::move(d));
    prev = s;
  }
  m.u_norm = Normalizer::identity(m.inputs);
  m.y_norm = Normalizer::identity(m.outputs);
  m.z_norm = Normalizer::identity(m.energy);
  return m;
}

// ---------------------------------------------------------------------------
// Batched forward/backward primitives. Matrices hold one sequence per column.

namespace detail {

inline Mat sigmoid(const Mat& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }

struct LstmTape {
  Mat xh, i, f, g, o, c_prev, tc;
};

inline void lstm_forward(const LstmCell& cell, const Mat& x, Mat& c, Mat& h, LstmTape* tape) {
  const int p = cell.hidden();
  Mat xh(x.rows() + p, x.cols());
  xh << x, h;
  Mat a = cell.W * xh;
  a.colwise() += cell.b;
  Mat i = sigmoid(a.topRows(p));
  Mat f = sigmoid(a.middleRows(p, p));
  Mat g = a.middleRows(2 * p, p).array().tanh().matrix();
  Mat o = sigmoid(a.bottomRows(p));
  Mat c_new = f.cwiseProduct(c) + i.cwiseProduct(g);
  Mat tc = c_new.array().tanh().matrix();
  h = o.cwiseProduct(tc);
  if (tape) {
    tape->xh = std::move(xh);
    tape->c_prev = c;
    tape->i = std::move(i);
    tape->f = std::move(f);
    tape->g = std::move(g);
    tape->o = std::move(o);
    tape->tc = std::move(tc);
  }
  c = std::move(c_new);
}

// On entry dh/dc are the loss gradients w.r.t. this step's (h, c); on exit
// they hold the gradients w.r.t. the previous step's (h, c).
inline void lstm_backward(const LstmCell& cell, const LstmTape& t, Mat& dh, Mat& dc, LstmCell& grad) {
  const int p = cell.hidden();
  const Eigen::Index B = dh.cols();
  const Mat dct = dc + dh.cwiseProduct(t.o).cwiseProduct((1.0 - t.tc.array().square()).matrix());
  Mat da(4 * p, B);
  da.topRows(p) = dct.cwiseProduct(t.g).cwiseProduct((t.i.array() * (1.0 - t.i.array())).matrix());
  da.middleRows(p, p) = dct.cwiseProduct(t.c_prev).cwiseProduct((t.f.array() * (1.0 - t.f.array())).matrix());
  da.middleRows(2 * p, p) = dct.cwiseProduct(t.i).cwiseProduct((1.0 - t.g.array().square()).matrix());
  da.bottomRows(p) = dh.cwiseProduct(t.tc).cwiseProduct((t.o.array() * (1.0 - t.o.array())).matrix());
  grad.W.noalias() += da * t.xh.transpose();
  grad.b += da.rowwise().sum();
  dh = (cell.W.rightCols(p).transpose() * da).eval();
  dc = dct.cwiseProduct(t.f);
}

struct HeadTape {
  std::vector<Mat> acts;  // acts[0] = input, acts[l+1] = output of layer l
};

inline Mat head_forward(const std::vector<Dense>& head, const Mat& h, HeadTape* tape) {
  Mat a = h;
  if (tape) tape->acts.assign(1, a);
  for (std::size_t l = 0; l < head.size(); ++l) {
    Mat z = head[l].W * a;
    z.colwise() += head[l].b;
    a = (l + 1 < head.size()) ? Mat(z.array().tanh().matrix()) : z;
    if (tape) tape->acts.push_back(a);
  }
  return a;
}

inline Mat head_backward(const std::vector<Dense>& head, const HeadTape& t, const Mat& dout,
                         std::vector<Dense>& grad) {
  Mat d = dout;
  for (std::size_t l = head.size(); l-- > 0;) {
    if (l + 1 < head.size()) d = d.cwiseProduct((1.0 - t.acts[l + 1].array().square()).matrix());
    grad[l].W.noalias() += d * t.acts[l].transpose();
    grad[l].b += d.rowwise().sum();
    d = (head[l].W.transpose() * d).eval();
  }
  return d;
}

}  // namespace detail

/// A batch of normalized sequences: enc_in[t] is history_dim x B,
/// dec_in[k] is inputs x B, target[k] is head_outputs x B.
struct SeqBatch {
  std::vector<Mat> enc_in, dec_in, target;
  Eigen::Index batch() const { return dec_in.empty() ? 0 : dec_in.front().cols(); }
};

/// Mean-squared error over all decoded outputs in normalized units; when
/// `grad` is non-null it receives the exact gradient (backprop through time).
inline double loss_and_gradients(const EncoderDecoderModel& m, const SeqBatch& batch, Weights* grad) {
  require(!batch.dec_in.empty() && batch.dec_in.size() == batch.target.size(), "gradients: malformed batch");
  const Eigen::Index B = batch.batch();
  const int p = m.hidden();
  Mat c = Mat::Zero(p, B), h = Mat::Zero(p, B);
  const std::size_t n = batch.enc_in.size(), L = batch.dec_in.size();
  std::vector<detail::LstmTape> enc_tape(grad ? n : 0), dec_tape(grad ? L : 0);
  std::vector<detail::HeadTape> head_tape(grad ? L : 0);
  for (std::size_t t = 0; t < n; ++t) detail::lstm_forward(m.w.enc, batch.enc_in[t], c, h, grad ? &enc_tape[t] : nullptr);
  const double count = static_cast<double>(B) * static_cast<double>(L) * m.head_outputs();
  double loss = 0.0;
  std::vector<Mat> dout(grad ? L : 0);
  for (std::size_t k = 0; k < L; ++k) {
    detail::lstm_forward(m.w.dec, batch.dec_in[k], c, h, grad ? &dec_tape[k] : nullptr);
    const Mat out = detail::head_forward(m.w.head, h, grad ? &head_tape[k] : nullptr);
    const Mat err = out - batch.target[k];
    loss += err.squaredNorm();
    if (grad) dout[k] = (2.0 / count) * err;
  }
  loss /= count;
  if (!grad) return loss;

  *grad = m.w.zeros_like();
  Mat dh = Mat::Zero(p, B), dc = Mat::Zero(p, B);
  for (std::size_t k = L; k-- > 0;) {
    dh += detail::head_backward(m.w.head, head_tape[k], dout[k], grad->head);
    detail::lstm_backward(m.w.dec, dec_tape[k], dh, dc, grad->dec);
  }
  for (std::size_t t = n; t-- > 0;) detail::lstm_backward(m.w.enc, enc_tape[t], dh, dc, grad->enc);
  return loss;
}

/// Rescales `g` so its global norm is at most `max_norm`; returns the norm
/// before clipping.
inline double clip_gradients(Weights& g, double max_norm) {
  double sq = 0.0;
  g.for_each([&](double* p, Eigen::Index n) { sq += Eigen::Map<Vec>(p, n).squaredNorm(); });
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    g.for_each([&](double* p, Eigen::Index n) { Eigen::Map<Vec>(p, n) *= s; });
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Single-sequence inference on raw (denormalized) data.

struct HiddenState {
  Vec c, h;
};

/// Encoder recursion from zero state over `history` (encoder_steps rows of
/// [u, y, z] in raw units).
inline HiddenState encode(const EncoderDecoderModel& m, const Mat& history) {
  require(history.rows() == m.encoder_steps, "encode: history length must equal the encoder length " +
                                                 std::to_string(m.encoder_steps));
  require(history.cols() == m.history_dim(), "encode: history has wrong width");
  Mat hist_n(history.rows(), history.cols());
  hist_n.leftCols(m.inputs) = m.u_norm.normalize(history.leftCols(m.inputs));
  hist_n.middleCols(m.inputs, m.outputs) = m.y_norm.normalize(history.middleCols(m.inputs, m.outputs));
  if (m.energy > 0) hist_n.rightCols(m.energy) = m.z_norm.normalize(history.rightCols(m.energy));
  Mat c = Mat::Zero(m.hidden(), 1), h = Mat::Zero(m.hidden(), 1);
  for (Eigen::Index t = 0; t < hist_n.rows(); ++t)
    detail::lstm_forward(m.w.enc, hist_n.row(t).transpose(), c, h, nullptr);
  return {c.col(0), h.col(0)};
}

inline Mat history_matrix(const Mat& u, const Mat& y, const Mat& z) {
  require(u.rows() == y.rows() && u.rows() == z.rows(), "history: series must align");
  Mat out(u.rows(), u.cols() + y.cols() + z.cols());
  out << u, y, z;
  return out;
}

struct Decoded {
  Mat y;  // steps x outputs
  Mat z;  // steps x energy
  Mat jacobian;  // (steps * (outputs + energy)) x (steps * |mask|), when requested
};

/// Decoder rollout; with a non-empty `controllable` mask the exact Jacobian of
/// every decoded raw output w.r.t. the masked raw inputs is propagated in
/// forward mode. Rows are ordered by step then [y, z]; columns by step then
/// mask entry.
inline Decoded decode(const EncoderDecoderModel& m, const HiddenState& s, const Mat& u_seq,
                      const std::vector<int>& controllable = {}) {
  require(u_seq.rows() >= 1, "decode: input sequence must be non-empty");
  require(u_seq.cols() == m.inputs, "decode: input width mismatch");
  const int p = m.hidden(), L = static_cast<int>(u_seq.rows()), no = m.head_outputs();
  const int nm = static_cast<int>(controllable.size());
  for (int idx : controllable) require(idx >= 0 && idx < m.inputs, "decode: controllable index out of range");
  const Mat un = m.u_norm.normalize(u_seq);
  Mat c = s.c, h = s.h;
  Mat out_n(L, no);
  Decoded r;
  const bool jac = nm > 0;
  Mat dc, dh;
  if (jac) {
    r.jacobian = Mat::Zero(static_cast<Eigen::Index>(L) * no, static_cast<Eigen::Index>(L) * nm);
    dc = Mat::Zero(p, L * nm);
    dh = Mat::Zero(p, L * nm);
  }
  Vec out_scale(no);
  out_scale << m.y_norm.std, m.z_norm.std;
  const LstmCell& cell = m.w.dec;
  for (int k = 0; k < L; ++k) {
    Vec xh(m.inputs + p);
    xh << un.row(k).transpose(), h;
    Vec a = cell.W * xh + cell.b;
    const Vec i = detail::sigmoid(a.head(p));
    const Vec f = detail::sigmoid(a.segment(p, p));
    const Vec g = a.segment(2 * p, p).array().tanh().matrix();
    const Vec o = detail::sigmoid(a.tail(p));
    const Vec c_new = f.cwiseProduct(c.col(0)) + i.cwiseProduct(g);
    const Vec tc = c_new.array().tanh().matrix();
    const Vec h_new = o.cwiseProduct(tc);

    detail::HeadTape ht;
    out_n.row(k) = detail::head_forward(m.w.head, h_new, jac ? &ht : nullptr).col(0).transpose();

    if (jac) {
      // Tangents are non-zero only for inputs at steps <= k.
      const int cols = (k + 1) * nm;
      Mat da = cell.W.rightCols(p) * dh.leftCols(cols);
      for (int j = 0; j < nm; ++j)
        da.col(k * nm + j) += cell.W.col(controllable[j]) / m.u_norm.std[controllable[j]];
      const Vec si = i.cwiseProduct((1.0 - i.array()).matrix());
      const Vec sf = f.cwiseProduct((1.0 - f.array()).matrix());
      const Vec sg = (1.0 - g.array().square()).matrix();
      const Vec so = o.cwiseProduct((1.0 - o.array()).matrix());
      const Vec cp = c.col(0);
      Mat dc_new = (sf.cwiseProduct(cp)).asDiagonal() * da.middleRows(p, p);
      dc_new += f.asDiagonal() * dc.leftCols(cols);
      dc_new += (si.cwiseProduct(g)).asDiagonal() * da.topRows(p);
      dc_new += (sg.cwiseProduct(i)).asDiagonal() * da.middleRows(2 * p, p);
      const Vec dtc = (1.0 - tc.array().square()).matrix();
      Mat dh_new = (so.cwiseProduct(tc)).asDiagonal() * da.bottomRows(p);
      dh_new += (o.cwiseProduct(dtc)).asDiagonal() * dc_new;
      dc.leftCols(cols) = dc_new;
      dh.leftCols(cols) = dh_new;

      Mat t = dh.leftCols(cols);
      for (std::size_t l = 0; l < m.w.head.size(); ++l) {
        t = m.w.head[l].W * t;
        if (l + 1 < m.w.head.size()) t = (1.0 - ht.acts[l + 1].col(0).array().square()).matrix().asDiagonal() * t;
      }
      r.jacobian.block(static_cast<Eigen::Index>(k) * no, 0, no, cols) = out_scale.asDiagonal() * t;
    }
    c.col(0) = c_new;
    h.col(0) = h_new;
  }
  r.y = m.y_norm.denormalize(out_n.leftCols(m.outputs));
  r.z = m.energy > 0 ? m.z_norm.denormalize(out_n.rightCols(m.energy)) : Mat(L, 0);
  return r;
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  int batch_size = 200;
  double learning_rate = 1e-4;
  double clip_norm = 1.0;
  std::vector<int> decode_lengths{2, 4, 6, 8, 10, 16, 24, 32, 64, 88, 144};
  int epochs = 10;
  int iterations_per_epoch = 50;
  std::uint64_t seed = 1;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  void validate() const {
    require(batch_size >= 1 && learning_rate > 0.0 && clip_norm > 0.0 && epochs >= 1 && iterations_per_epoch >= 1,
            "train config: batch size, learning rate, clip norm, epochs and iterations must be positive");
    require(!decode_lengths.empty(), "train config: decode length set must be non-empty");
    for (int L : decode_lengths) require(L >= 1, "train config: decode lengths must be >= 1");
  }
};

/// Aligned training series: row k holds the inputs applied during period k,
/// the zone temperatures at its end and the mean thermal power over it.
struct SequenceData {
  Mat u, y, z;
  Eigen::Index length() const { return u.rows(); }
};

struct TrainResult {
  EncoderDecoderModel model;
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

/// Normalized windows starting at the given decode positions.
inline SeqBatch make_batch(const EncoderDecoderModel& m, const Mat& un, const Mat& yn, const Mat& zn,
                           const std::vector<Eigen::Index>& starts, int L) {
  SeqBatch b;
  const auto B = static_cast<Eigen::Index>(starts.size());
  const int n = m.encoder_steps;
  b.enc_in.assign(n, Mat(m.history_dim(), B));
  b.dec_in.assign(L, Mat(m.inputs, B));
  b.target.assign(L, Mat(m.head_outputs(), B));
  for (Eigen::Index j = 0; j < B; ++j) {
    const Eigen::Index s = starts[j];
    for (int t = 0; t < n; ++t) {
      const Eigen::Index r = s - n + t;
      auto col = b.enc_in[t].col(j);
      col.head(m.inputs) = un.row(r).transpose();
      col.segment(m.inputs, m.outputs) = yn.row(r).transpose();
      col.tail(m.energy) = zn.row(r).transpose();
    }
    for (int k = 0; k < L; ++k) {
      b.dec_in[k].col(j) = un.row(s + k).transpose();
      b.target[k].col(j).head(m.outputs) = yn.row(s + k).transpose();
      b.target[k].col(j).tail(m.energy) = zn.row(s + k).transpose();
    }
  }
  return b;
}

/// Adam on minibatches of random windows with a decode length drawn
/// uniformly from the configured set at every iteration. Normalization
/// statistics are fitted on `data` before training starts.
inline TrainResult train(EncoderDecoderModel model, const SequenceData& data, const TrainConfig& cfg,
                         const std::function<void(int, double)>& on_epoch = {}) {
  cfg.validate();
  require(data.u.cols() == model.inputs && data.y.cols() == model.outputs && data.z.cols() == model.energy,
          "train: data width does not match the model");
  require(data.u.rows() == data.y.rows() && data.u.rows() == data.z.rows(), "train: series must align");
  require(data.u.allFinite() && data.y.allFinite() && data.z.allFinite(), "train: data must be finite");
  const int max_len = *std::max_element(cfg.decode_lengths.begin(), cfg.decode_lengths.end());
  const Eigen::Index n = model.encoder_steps;
  require(data.length() >= n + max_len, "train: series shorter than encoder length plus longest decode length");

  model.u_norm = Normalizer::fit(data.u);
  model.y_norm = Normalizer::fit(data.y);
  model.z_norm = Normalizer::fit(data.z);
  const Mat un = model.u_norm.normalize(data.u), yn = model.y_norm.normalize(data.y),
            zn = model.z_norm.normalize(data.z);

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick_len(0, cfg.decode_lengths.size() - 1);
  Vec theta = model.w.flatten();
  Vec m1 = Vec::Zero(theta.size()), m2 = Vec::Zero(theta.size());
  long long step = 0;
  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double acc = 0.0;
    for (int it = 0; it < cfg.iterations_per_epoch; ++it) {
      const int L = cfg.decode_lengths[pick_len(rng)];
      std::uniform_int_distribution<Eigen::Index> pick_start(n, data.length() - L);
      std::vector<Eigen::Index> starts(cfg.batch_size);
      for (auto& s : starts) s = pick_start(rng);
      const SeqBatch batch = make_batch(model, un, yn, zn, starts, L);
      Weights grad;
      const double loss = loss_and_gradients(model, batch, &grad);
      if (!std::isfinite(loss) || !grad.all_finite())
        throw TrainingDivergence("train: loss became non-finite at epoch " + std::to_string(epoch) + ", iteration " +
                                 std::to_string(it) + " (decode length " + std::to_string(L) +
                                 "); last epoch loss " +
                                 (result.epoch_loss.empty() ? std::string("n/a")
                                                            : std::to_string(result.epoch_loss.back())));
      clip_gradients(grad, cfg.clip_norm);
      const Vec g = grad.flatten();
      ++step;
      m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * g;
      m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * g.cwiseAbs2();
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      theta -= (cfg.learning_rate / bc1) * (m1.array() / ((m2.array() / bc2).sqrt() + cfg.adam_eps)).matrix();
      model.w.assign(theta);
      acc += loss;
    }
    result.epoch_loss.push_back(acc / cfg.iterations_per_epoch);
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
  }
  result.model = std::move(model);
  return result;
}

/// Loss of the model on fixed windows (normalization taken from the model).
inline double evaluate_loss(const EncoderDecoderModel& m, const SequenceData& data,
                            const std::vector<Eigen::Index>& starts, int L) {
  const Mat un = m.u_norm.normalize(data.u), yn = m.y_norm.normalize(data.y), zn = m.z_norm.normalize(data.z);
  return loss_and_gradients(m, make_batch(m, un, yn, zn, starts, L), nullptr);
}

}  // namespace bldgmpc::rnn
