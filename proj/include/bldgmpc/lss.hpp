#pragma once

// Linear state-space models identified with N4SID, forward-innovation Kalman
// state initialisation, and RBF kernel ridge regression for the non-linear
// electric-power output.

#include "bldgmpc/common.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <complex>
#include <numeric>
#include <string>
#include <vector>

namespace bldgmpc::lss {

/// x_{k+1} = A x_k + B u_k + K e_k,  y_k = C x_k + D u_k + e_k.
/// Inputs and outputs are deviations from (u_offset, y_offset); both offsets
/// are zero when the model was identified without centring.
struct StateSpaceModel {
  Mat A, B, C, D;
  Mat K;                      // steady-state Kalman gain (h x end)
  Mat innovation_covariance;  // end x end
  Vec u_offset, y_offset;
  double fit_rmse = 0.0;      // one-step innovation RMSE on the training data

  int order() const { return static_cast<int>(A.rows()); }
  int inputs() const { return static_cast<int>(B.cols()); }
  int outputs() const { return static_cast<int>(C.rows()); }

  double spectral_radius() const {
    if (A.size() == 0) return 0.0;
    Eigen::EigenSolver<Mat> es(A, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }

  void validate() const {
    const auto h = A.rows();
    require(A.cols() == h && B.rows() == h && C.cols() == h && D.rows() == C.rows() && D.cols() == B.cols(),
            "state-space model: inconsistent matrix dimensions");
    require(K.rows() == h && K.cols() == C.rows(), "state-space model: Kalman gain has wrong shape");
    require(u_offset.size() == B.cols() && y_offset.size() == C.rows(), "state-space model: offsets have wrong size");
  }

  // Markov parameter C A^k B.
  Mat markov(int k) const {
    Mat M = B;
    for (int i = 0; i < k; ++i) M = A * M;
    return C * M;
  }
};

struct N4sidOptions {
  // Block rows of the past and future Hankel matrices; 0 picks the smallest i
  // with i * outputs >= 2 * order + 2.
  int horizon = 0;
  // Remove the sample mean of inputs and outputs before identification.
  bool center = true;
  // Identification requires at least this many Hankel columns per Hankel row.
  double min_columns_per_row = 5.0;
  // Inputs whose largest singular value ratio falls below this are rejected.
  double excitation_tolerance = 1e-9;
};

namespace detail {

// Block Hankel matrix of rows [first, first + blocks) with `cols` columns;
// data is N x dim (one sample per row).
inline Mat block_hankel(const Mat& data, int first, int blocks, int cols) {
  const int dim = static_cast<int>(data.cols());
  Mat H(blocks * dim, cols);
  for (int b = 0; b < blocks; ++b)
    H.middleRows(b * dim, dim) = data.middleRows(first + b, cols).transpose();
  return H;
}

// Least-squares row-space solve: returns X minimizing ||target - X * regressors||.
inline Mat lstsq_rows(const Mat& target, const Mat& regressors) {
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(regressors.transpose());
  return cod.solve(target.transpose()).transpose();
}

// Oblique projection of `future` along `along` onto `onto`.
inline Mat oblique(const Mat& future, const Mat& along, const Mat& onto) {
  Mat stacked(onto.rows() + along.rows(), onto.cols());
  stacked << onto, along;
  const Mat L = lstsq_rows(future, stacked);
  return L.leftCols(onto.rows()) * onto;
}

// Iterates the filtering Riccati equation to its fixed point and returns
// (P, K) for the predictor form with cross-covariance S.
inline std::pair<Mat, Mat> solve_dare(const Mat& A, const Mat& C, const Mat& Q, const Mat& R, const Mat& S) {
  const auto h = A.rows();
  Mat P = Q;
  Mat K = Mat::Zero(h, C.rows());
  for (int it = 0; it < 20000; ++it) {
    const Mat innov = C * P * C.transpose() + R;
    const Mat gain_num = A * P * C.transpose() + S;
    K = innov.ldlt().solve(gain_num.transpose()).transpose();
    Mat next = A * P * A.transpose() + Q - K * gain_num.transpose();
    next = 0.5 * (next + next.transpose());
    const double delta = (next - P).norm();
    P = std::move(next);
    if (delta <= 1e-13 * std::max(1.0, P.norm())) break;
  }
  return {P, K};
}

}  // namespace detail

inline int default_horizon(int order, int outputs) {
  const int rows = 2 * order + 2;
  return std::max(2, (rows + outputs - 1) / outputs);
}

/// Subspace identification (unweighted N4SID, combined deterministic-stochastic
/// variant with state-sequence regression). `inputs` is N x ex, `outputs` N x end.
inline StateSpaceModel fit_n4sid(const Mat& inputs, const Mat& outputs, int order, const N4sidOptions& opt = {}) {
  require(order >= 1, "n4sid: order must be >= 1");
  require(inputs.rows() == outputs.rows(), "n4sid: input and output series must have equal length");
  require(inputs.cols() >= 1 && outputs.cols() >= 1, "n4sid: need at least one input and one output");
  require(inputs.allFinite() && outputs.allFinite(), "n4sid: series contain missing or non-finite samples");
  const int N = static_cast<int>(inputs.rows());
  const int m = static_cast<int>(inputs.cols());
  const int l = static_cast<int>(outputs.cols());
  const int i = opt.horizon > 0 ? opt.horizon : default_horizon(order, l);
  const int j = N - 2 * i + 1;
  const int rows = 2 * i * (m + l);
  if (j < opt.min_columns_per_row * rows)
    throw InvalidInput("n4sid: series too short (" + std::to_string(N) + " samples) for horizon " +
                       std::to_string(i) + "; need at least " +
                       std::to_string(static_cast<int>(std::ceil(opt.min_columns_per_row * rows)) + 2 * i - 1));

  StateSpaceModel model;
  model.u_offset = opt.center ? Vec(inputs.colwise().mean().transpose()) : Vec::Zero(m);
  model.y_offset = opt.center ? Vec(outputs.colwise().mean().transpose()) : Vec::Zero(l);
  Mat U = inputs.rowwise() - model.u_offset.transpose();
  Mat Y = outputs.rowwise() - model.y_offset.transpose();

  // Per-channel scaling for conditioning; folded back into the matrices below.
  Vec su(m), sy(l);
  for (int c = 0; c < m; ++c) {
    const double s = std::sqrt(U.col(c).squaredNorm() / N);
    su[c] = s > 1e-12 ? s : 1.0;
  }
  for (int c = 0; c < l; ++c) {
    const double s = std::sqrt(Y.col(c).squaredNorm() / N);
    sy[c] = s > 1e-12 ? s : 1.0;
  }
  U = U * su.cwiseInverse().asDiagonal();
  Y = Y * sy.cwiseInverse().asDiagonal();

  // Channels that carry no variation cannot be identified; they get zero columns.
  std::vector<int> active;
  for (int c = 0; c < m; ++c)
    if (U.col(c).cwiseAbs().maxCoeff() > 1e-12) active.push_back(c);
  if (active.empty()) throw IdentificationError("n4sid: inputs carry no excitation (all channels constant)");
  Mat Ua(N, static_cast<Eigen::Index>(active.size()));
  for (std::size_t c = 0; c < active.size(); ++c) Ua.col(static_cast<Eigen::Index>(c)) = U.col(active[c]);
  const int ma = static_cast<int>(active.size());

  const Mat Uh = detail::block_hankel(Ua, 0, 2 * i, j);
  const Mat Yh = detail::block_hankel(Y, 0, 2 * i, j);
  {
    Eigen::BDCSVD<Mat> svd(Uh / std::sqrt(static_cast<double>(j)));
    const Vec& s = svd.singularValues();
    const double cond_ratio = s[s.size() - 1] / s[0];
    if (!(cond_ratio > opt.excitation_tolerance))
      throw IdentificationError("n4sid: input is not persistently exciting (singular value ratio " +
                                std::to_string(cond_ratio) + " of the input Hankel matrix)");
  }

  const Mat Up = Uh.topRows(i * ma), Uf = Uh.bottomRows(i * ma);
  const Mat Yp = Yh.topRows(i * l), Yf = Yh.bottomRows(i * l);
  Mat Wp(Up.rows() + Yp.rows(), j);
  Wp << Up, Yp;
  const Mat Oi = detail::oblique(Yf, Uf, Wp);

  // One block row shifted: past grows by one block, future shrinks by one.
  const Mat Upp = Uh.topRows((i + 1) * ma), Ufm = Uh.bottomRows((i - 1) * ma);
  const Mat Ypp = Yh.topRows((i + 1) * l), Yfm = Yh.bottomRows((i - 1) * l);
  Mat Wpp(Upp.rows() + Ypp.rows(), j);
  Wpp << Upp, Ypp;
  const Mat Oim = detail::oblique(Yfm, Ufm, Wpp);

  Eigen::BDCSVD<Mat> svd(Oi, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vec& sv = svd.singularValues();
  // Directions carrying less than this share of the future outputs are noise.
  const double tol = 1e-10 * Yf.norm();
  int rank = 0;
  while (rank < order && rank < sv.size() && sv[rank] > tol) ++rank;

  const int h = order;
  Mat A = Mat::Zero(h, h), Bs = Mat::Zero(h, ma), Cs = Mat::Zero(l, h), Ds(l, ma);
  Mat residual;
  const Mat Ui = Uh.middleRows(i * ma, ma);
  const Mat Yi = Yh.middleRows(i * l, l);
  Mat Xi, Xip;
  if (rank > 0) {
    const Vec sqrt_s = sv.head(rank).cwiseSqrt();
    const Mat gamma = svd.matrixU().leftCols(rank) * sqrt_s.asDiagonal();
    const Mat gamma_m = gamma.topRows((i - 1) * l);
    Xi = gamma.completeOrthogonalDecomposition().solve(Oi);
    Xip = gamma_m.completeOrthogonalDecomposition().solve(Oim);

    Mat regress(rank + ma, j);
    regress << Xi, Ui;
    Mat target(rank + l, j);
    target << Xip, Yi;
    Mat theta = detail::lstsq_rows(target, regress);
    Mat Ar = theta.topLeftCorner(rank, rank);

    Eigen::EigenSolver<Mat> es(Ar, false);
    if (es.eigenvalues().cwiseAbs().maxCoeff() >= 0.9999) {
      // Shift-invariance estimate with a zero-padded extended observability
      // matrix; guaranteed stable. B and D re-estimated for the new A.
      Mat shifted = Mat::Zero(gamma.rows(), rank);
      shifted.topRows(gamma.rows() - l) = gamma.bottomRows(gamma.rows() - l);
      Ar = gamma.completeOrthogonalDecomposition().solve(shifted);
      const Mat rhs = Xip - Ar * Xi;
      theta.topRightCorner(rank, ma) = detail::lstsq_rows(rhs, Ui);
      theta.topLeftCorner(rank, rank) = Ar;
    }
    A.topLeftCorner(rank, rank) = theta.topLeftCorner(rank, rank);
    Bs.topRows(rank) = theta.topRightCorner(rank, ma);
    Cs.leftCols(rank) = theta.bottomLeftCorner(l, rank);
    Ds = theta.bottomRightCorner(l, ma);
    residual = target - theta * regress;
  } else {
    Ds = detail::lstsq_rows(Yi, Ui);
    residual = Yi - Ds * Ui;
  }

  // Noise covariances from the regression residuals, then the innovation form.
  const Mat cov = residual * residual.transpose() / j;
  Mat Q = Mat::Zero(h, h), S = Mat::Zero(h, l), R = Mat::Zero(l, l);
  if (rank > 0) {
    Q.topLeftCorner(rank, rank) = cov.topLeftCorner(rank, rank);
    S.topRows(rank) = cov.topRightCorner(rank, l);
  }
  R = cov.bottomRightCorner(l, l);
  R += 1e-10 * Mat::Identity(l, l);
  auto [P, Ks] = detail::solve_dare(A, Cs, Q, R, S);
  const Mat innov_s = Cs * P * Cs.transpose() + R;

  // Undo channel scaling; re-insert inactive input columns as zeros.
  model.A = A;
  model.B = Mat::Zero(h, m);
  model.D = Mat::Zero(l, m);
  for (int c = 0; c < ma; ++c) {
    model.B.col(active[c]) = Bs.col(c) / su[active[c]];
    model.D.col(active[c]) = sy.asDiagonal() * Ds.col(c) / su[active[c]];
  }
  model.C = sy.asDiagonal() * Cs;
  model.K = Ks * sy.cwiseInverse().asDiagonal();
  model.innovation_covariance = sy.asDiagonal() * innov_s * sy.asDiagonal();
  model.fit_rmse = std::sqrt(innov_s.diagonal().cwiseProduct(sy.cwiseAbs2()).mean());
  return model;
}

/// Runs the forward-innovation filter from x = 0 over the history and returns
/// the state aligned with the sample that follows the history.
inline Vec kalman_init(const StateSpaceModel& model, const Mat& u_hist, const Mat& y_hist) {
  require(u_hist.rows() >= 1 && u_hist.rows() == y_hist.rows(), "kalman_init: history must be non-empty and aligned");
  require(u_hist.cols() == model.inputs() && y_hist.cols() == model.outputs(), "kalman_init: dimension mismatch");
  Vec x = Vec::Zero(model.order());
  for (Eigen::Index k = 0; k < u_hist.rows(); ++k) {
    const Vec u = u_hist.row(k).transpose() - model.u_offset;
    const Vec y = y_hist.row(k).transpose() - model.y_offset;
    const Vec e = y - model.C * x - model.D * u;
    x = model.A * x + model.B * u + model.K * e;
  }
  return x;
}

/// Noise-free rollout; `u_seq` is steps x ex, returns steps x end.
inline Mat predict(const StateSpaceModel& model, const Vec& x0, const Mat& u_seq) {
  require(u_seq.rows() >= 1, "predict: input sequence must be non-empty");
  require(u_seq.cols() == model.inputs() && x0.size() == model.order(), "predict: dimension mismatch");
  Mat y(u_seq.rows(), model.outputs());
  Vec x = x0;
  for (Eigen::Index k = 0; k < u_seq.rows(); ++k) {
    const Vec u = u_seq.row(k).transpose() - model.u_offset;
    y.row(k) = (model.C * x + model.D * u + model.y_offset).transpose();
    x = model.A * x + model.B * u;
  }
  return y;
}

/// Input-to-output block Toeplitz map of a rollout: y_k depends on u_j (j <= k)
/// through D (j = k) and C A^{k-j-1} B (j < k). Returns (steps*end) x (steps*ex),
/// row-major by step.
inline Mat rollout_jacobian(const StateSpaceModel& model, int steps) {
  const int l = model.outputs(), m = model.inputs();
  Mat T = Mat::Zero(static_cast<Eigen::Index>(steps) * l, static_cast<Eigen::Index>(steps) * m);
  std::vector<Mat> markov;
  markov.reserve(steps);
  markov.push_back(model.D);
  Mat AkB = model.B;
  for (int k = 1; k < steps; ++k) {
    markov.push_back(model.C * AkB);
    AkB = model.A * AkB;
  }
  for (int k = 0; k < steps; ++k)
    for (int j = 0; j <= k; ++j) T.block(k * l, j * m, l, m) = markov[k - j];
  return T;
}

// ---------------------------------------------------------------------------
// Kernel ridge regression.

/// z(w) = sum_i alpha_i exp(-gamma * || (w - w_i) / scale ||^2).
struct KernelRegressor {
  Mat support;     // N x dim, raw feature units
  Vec alpha;       // N
  Vec scale;       // dim, per-feature length scale (ones = plain RBF)
  double gamma = 0.1;
  double ridge = 1.0;

  int size() const { return static_cast<int>(support.rows()); }
  int dim() const { return static_cast<int>(support.cols()); }
};

struct KernelValue {
  double z;
  Vec grad;  // dz/dw
};

inline Mat gram_matrix(const Mat& points, const Vec& scale, double gamma) {
  const Mat P = points * scale.cwiseInverse().asDiagonal();
  const Vec sq = P.rowwise().squaredNorm();
  Mat G = -2.0 * P * P.transpose();
  G.colwise() += sq;
  G.rowwise() += sq.transpose();
  return (-gamma * G.cwiseMax(0.0)).array().exp().matrix();
}

inline KernelRegressor fit_kernel(const Mat& points, const Vec& targets, double gamma, double ridge,
                                  const Vec& scale = Vec()) {
  require(points.rows() >= 1, "fit_kernel: need at least one point");
  require(points.rows() == targets.size(), "fit_kernel: points and targets must align");
  require(points.allFinite() && targets.allFinite(), "fit_kernel: non-finite data");
  require(gamma > 0.0, "fit_kernel: gamma must be > 0");
  require(ridge >= 0.0, "fit_kernel: ridge must be >= 0");
  KernelRegressor reg;
  reg.support = points;
  reg.scale = scale.size() == 0 ? Vec::Ones(points.cols()) : scale;
  require(reg.scale.size() == points.cols() && (reg.scale.array() > 0.0).all(), "fit_kernel: invalid feature scale");
  reg.gamma = gamma;
  reg.ridge = ridge;

  if (ridge == 0.0) {
    for (Eigen::Index a = 0; a < points.rows(); ++a)
      for (Eigen::Index b = a + 1; b < points.rows(); ++b)
        if (points.row(a) == points.row(b))
          throw InvalidInput("fit_kernel: duplicated points " + std::to_string(a) + " and " + std::to_string(b) +
                             " make the unregularised Gram matrix singular");
  }
  Mat G = gram_matrix(points, reg.scale, gamma);
  G.diagonal().array() += ridge;
  Eigen::LLT<Mat> llt(G);
  if (llt.info() != Eigen::Success) throw NumericalError("fit_kernel: Gram system is not positive definite");
  reg.alpha = llt.solve(targets);
  // One step of iterative refinement keeps the normal-equation residual tiny.
  reg.alpha += llt.solve(targets - G * reg.alpha);
  return reg;
}

inline double kernel_predict(const KernelRegressor& reg, const Vec& w) {
  const Vec inv = reg.scale.cwiseInverse();
  const Mat diff = (reg.support.rowwise() - w.transpose()) * inv.asDiagonal();
  const Vec phi = (-reg.gamma * diff.rowwise().squaredNorm()).array().exp().matrix();
  return phi.dot(reg.alpha);
}

inline KernelValue kernel_predict_with_grad(const KernelRegressor& reg, const Vec& w) {
  require(w.size() == reg.dim() && w.allFinite(), "kernel_predict: point must be finite with matching dimension");
  const Vec inv2 = reg.scale.cwiseInverse().cwiseAbs2();
  const Mat diff = reg.support.rowwise() - w.transpose();  // w_i - w
  const Vec phi = (-reg.gamma * (diff * inv2.asDiagonal()).cwiseProduct(diff).rowwise().sum()).array().exp().matrix();
  const Vec weights = reg.alpha.cwiseProduct(phi);
  KernelValue out;
  out.z = weights.sum();
  // d/dw exp(-g |w - w_i|^2) = -2 g (w - w_i) phi = 2 g (w_i - w) phi
  out.grad = 2.0 * reg.gamma * inv2.cwiseProduct(diff.transpose() * weights);
  return out;
}

// Evenly spaced subset of `cap` row indices out of n (all rows when n <= cap).
inline std::vector<int> subsample_indices(int n, int cap) {
  std::vector<int> idx;
  if (cap <= 0 || n <= cap) {
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
  }
  idx.reserve(cap);
  for (int k = 0; k < cap; ++k) idx.push_back(static_cast<int>((static_cast<long long>(k) * n) / cap));
  return idx;
}

// ---------------------------------------------------------------------------
// LSS-NL composite.

struct LssNlModel {
  StateSpaceModel ss;
  KernelRegressor power;
};

// Per-feature length scales for the kernel. Range scaling maps every
// feature of the support set onto a unit interval; constant features get 1.
enum class FeatureScaling { kNone, kStd, kRange };

inline FeatureScaling parse_scaling(const std::string& s) {
  if (s == "none") return FeatureScaling::kNone;
  if (s == "std") return FeatureScaling::kStd;
  if (s == "range") return FeatureScaling::kRange;
  throw InvalidInput("unknown kernel feature scaling '" + s + "' (expected none, std or range)");
}

inline Vec feature_scale(const Mat& points, FeatureScaling mode) {
  Vec sc = Vec::Ones(points.cols());
  if (mode == FeatureScaling::kNone || points.rows() == 0) return sc;
  for (Eigen::Index c = 0; c < points.cols(); ++c) {
    const auto col = points.col(c);
    const double v = mode == FeatureScaling::kRange
                         ? col.maxCoeff() - col.minCoeff()
                         : std::sqrt((col.array() - col.mean()).square().mean());
    if (v > 1e-9) sc[c] = v;
  }
  return sc;
}

struct LssNlFitConfig {
  int order = 8;
  N4sidOptions n4sid;
  double gamma = 0.1;
  double ridge = 1.0;
  int support_cap = 2000;  // kernel support subsample, 0 = all points
  FeatureScaling scaling = FeatureScaling::kRange;
};

/// N4SID on (u, y), then kernel ridge regression of z on w = (u, y) over an
/// evenly spaced subsample of the same record.
inline LssNlModel fit_lss_nl(const Mat& u, const Mat& y, const Vec& z, const LssNlFitConfig& cfg) {
  require(u.rows() == y.rows() && u.rows() == z.size(), "fit_lss_nl: series must align");
  LssNlModel m{fit_n4sid(u, y, cfg.order, cfg.n4sid), {}};
  const auto idx = subsample_indices(static_cast<int>(u.rows()), cfg.support_cap);
  Mat pts(static_cast<Eigen::Index>(idx.size()), u.cols() + y.cols());
  Vec tgt(pts.rows());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(k);
    pts.row(i) << u.row(idx[k]), y.row(idx[k]);
    tgt[i] = z[idx[k]];
  }
  m.power = fit_kernel(pts, tgt, cfg.gamma, cfg.ridge, feature_scale(pts, cfg.scaling));
  return m;
}

struct LssNlForecast {
  Mat temps;   // steps x end
  Vec power;   // steps
};

inline Vec concat(const Vec& a, const Vec& b) {
  Vec out(a.size() + b.size());
  out << a, b;
  return out;
}

/// Kalman-initialises on the history, rolls the linear model forward, and
/// evaluates the kernel regressor on w_k = (u_k, y_k) with predicted y_k.
inline LssNlForecast lss_nl_forecast(const LssNlModel& model, const Mat& u_hist, const Mat& y_hist,
                                     const Mat& u_future) {
  const Vec x0 = kalman_init(model.ss, u_hist, y_hist);
  LssNlForecast out;
  out.temps = predict(model.ss, x0, u_future);
  out.power.resize(u_future.rows());
  for (Eigen::Index k = 0; k < u_future.rows(); ++k)
    out.power[k] = kernel_predict(model.power, concat(u_future.row(k).transpose(), out.temps.row(k).transpose()));
  return out;
}

}  // namespace bldgmpc::lss
