#pragma once

// Sequential quadratic programming with a damped limited-memory BFGS Hessian.
// Hard constraints: box bounds and linear inequalities. Soft constraints
// g(x) <= 0 enter through an exact l1 penalty rho * sum max(0, g), so every
// QP subproblem is feasible. Steps are safeguarded by a backtracking line
// search on the same l1 merit function.

#include "bldgmpc/common.hpp"

#include <algorithm>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <vector>

namespace bldgmpc::sqp {

// ---------------------------------------------------------------------------
// Limited-memory BFGS.

class Lbfgs {
 public:
  explicit Lbfgs(int memory = 10, double initial_scale = 1.0) : memory_(memory), scale_(initial_scale) {
    require(memory >= 1, "lbfgs: memory must be >= 1");
    require(initial_scale > 0.0, "lbfgs: initial scale must be > 0");
  }

  int size() const { return static_cast<int>(s_.size()); }
  double scale() const { return scale_; }

  /// Stores a curvature pair. Pairs with s'y <= 1e-8 |s||y| are Powell-damped
  /// (y replaced by theta y + (1 - theta) B s with s'y = 0.2 s'Bs). Returns
  /// true if damping was applied; zero-length steps are ignored.
  bool push(const Vec& s, Vec y) {
    require(s.size() == y.size(), "lbfgs: pair dimension mismatch");
    if (!s.allFinite() || !y.allFinite() || s.norm() == 0.0) return false;
    if (!s_.empty()) require(s.size() == s_.front().size(), "lbfgs: dimension changed");
    bool damped = false;
    const double sy = s.dot(y);
    if (sy <= 1e-8 * s.norm() * y.norm()) {
      const Vec Bs = apply(s);
      const double sBs = s.dot(Bs);
      const double theta = 0.8 * sBs / (sBs - sy);
      y = theta * y + (1.0 - theta) * Bs;
      damped = true;
    }
    s_.push_back(s);
    y_.push_back(std::move(y));
    if (static_cast<int>(s_.size()) > memory_) {
      s_.pop_front();
      y_.pop_front();
    }
    scale_ = y_.back().squaredNorm() / s_.back().dot(y_.back());
    return damped;
  }

  /// Dense B built by applying the stored updates to scale * I.
  Mat dense(int n) const {
    if (!s_.empty()) require(n == s_.front().size(), "lbfgs: dimension mismatch");
    Mat B = scale_ * Mat::Identity(n, n);
    for (std::size_t k = 0; k < s_.size(); ++k) {
      const Vec Bs = B * s_[k];
      B.noalias() -= (Bs * Bs.transpose()) / s_[k].dot(Bs);
      B.noalias() += (y_[k] * y_[k].transpose()) / y_[k].dot(s_[k]);
    }
    return B;
  }

  Vec apply(const Vec& v) const { return dense(static_cast<int>(v.size())) * v; }

  /// B^{-1} v by the two-loop recursion.
  Vec apply_inverse(const Vec& v) const {
    Vec q = v;
    const int m = size();
    std::vector<double> a(m);
    for (int k = m - 1; k >= 0; --k) {
      a[k] = s_[k].dot(q) / y_[k].dot(s_[k]);
      q -= a[k] * y_[k];
    }
    Vec r = q / scale_;
    for (int k = 0; k < m; ++k) {
      const double b = y_[k].dot(r) / y_[k].dot(s_[k]);
      r += (a[k] - b) * s_[k];
    }
    return r;
  }

 private:
  int memory_;
  double scale_;
  std::deque<Vec> s_, y_;
};

// ---------------------------------------------------------------------------
// l1-penalty QP by primal active set.

/// min  c'd + 0.5 d'Qd + rho * sum_i max(0, soft_A_i d - soft_b_i)
/// s.t. hard_A d <= hard_b,  lower <= d <= upper.
struct QpProblem {
  Mat Q;
  Vec c;
  Mat soft_A;
  Vec soft_b;
  Mat hard_A;
  Vec hard_b;
  Vec lower, upper;
  double rho = 10.0;

  int dim() const { return static_cast<int>(c.size()); }
  int n_soft() const { return static_cast<int>(soft_b.size()); }
  int n_hard() const { return static_cast<int>(hard_b.size()); }
};

enum class SoftState { kBelow, kActive, kAbove };

struct QpResult {
  Vec d;
  Vec soft_mult;   // in [0, rho]
  Vec hard_mult;   // >= 0
  Vec bound_mult;  // > 0 at an upper bound, < 0 at a lower bound
  std::vector<int> working;  // constraint ids (see QpSolver)
  int iterations = 0;
  bool converged = false;
  double model_value = 0.0;
};

/// Primal active-set solver. The Hessian factor is computed once; the
/// working-set Schur complement is kept as an upper-triangular factor with
/// column insertions and Givens deletions.
///
/// Constraint ids: soft i -> i; hard j -> ns + j; upper bound k -> ns + nh + k;
/// lower bound k -> ns + nh + n + k.
class QpSolver {
 public:
  explicit QpSolver(const QpProblem& p) : p_(p) {
    n_ = p.dim();
    ns_ = p.n_soft();
    nh_ = p.n_hard();
    require(p.Q.rows() == n_ && p.Q.cols() == n_, "qp: Hessian has wrong shape");
    require(p.soft_A.rows() == ns_ && (ns_ == 0 || p.soft_A.cols() == n_), "qp: soft constraint shape");
    require(p.hard_A.rows() == nh_ && (nh_ == 0 || p.hard_A.cols() == n_), "qp: hard constraint shape");
    require(p.lower.size() == n_ && p.upper.size() == n_ && (p.lower.array() <= p.upper.array()).all(),
            "qp: bounds malformed");
    require(p.rho > 0.0, "qp: penalty must be positive");
    llt_.compute(p.Q);
    if (llt_.info() != Eigen::Success) throw NumericalError("qp: Hessian is not positive definite");
    L_ = llt_.matrixL();
    soft_norm_ = ns_ > 0 ? Vec(p.soft_A.rowwise().norm()) : Vec(0);
    hard_norm_ = nh_ > 0 ? Vec(p.hard_A.rowwise().norm()) : Vec(0);
  }

  QpResult solve(const std::vector<int>& warm = {}, int max_iter = 0) {
    if (max_iter <= 0) max_iter = 10 * (n_ + ns_ + nh_) + 50;
    d_ = Vec::Zero(n_);
    state_.assign(ns_, SoftState::kBelow);
    for (int i = 0; i < ns_; ++i)
      if (-p_.soft_b[i] > 0.0) state_[i] = SoftState::kAbove;
    in_ws_.assign(ns_ + nh_ + 2 * n_, false);
    skip_.assign(in_ws_.size(), false);
    skipped_.clear();
    ws_.clear();
    Z_.resize(n_, 0);
    R_.resize(0, 0);
    for (int id : warm) {
      if (id < 0 || id >= static_cast<int>(in_ws_.size()) || in_ws_[id]) continue;
      if (std::abs(residual(id)) > 1e-12 * (1.0 + std::abs(rhs(id)))) continue;
      if (id < ns_) state_[id] = SoftState::kActive;
      if (!add(id) && id < ns_) state_[id] = SoftState::kBelow;
    }
    update_linear_term();

    QpResult out;
    Vec lambda;
    for (int it = 1; it <= max_iter; ++it) {
      out.iterations = it;
      Vec target = eqp(lambda);
      const Vec p = target - d_;
      const double pnorm = p.norm();

      // Ratio test over constraints outside the working set.
      double alpha = 1.0;
      int block = -1;
      // A roundoff-sized step is treated as zero; testing it against
      // degenerate rows would block at alpha = 0 indefinitely.
      if (pnorm > 1e-11 * (1.0 + d_.norm())) {
        // Slopes and residuals of all rows at once (row access is strided).
        const Vec s_soft = p_.soft_A * p, r_soft = p_.soft_A * d_ - p_.soft_b;
        const Vec s_hard = p_.hard_A * p, r_hard = p_.hard_A * d_ - p_.hard_b;
        for (int id = 0; id < static_cast<int>(in_ws_.size()); ++id) {
          if (in_ws_[id] || skip_[id]) continue;
          double s, r, nrm = 1.0;  // slope a'p, residual a'd - b, |a|
          if (id < ns_) {
            s = s_soft[id], r = r_soft[id], nrm = soft_norm_[id];
          } else if (id < ns_ + nh_) {
            s = s_hard[id - ns_], r = r_hard[id - ns_], nrm = hard_norm_[id - ns_];
          } else if (id < ns_ + nh_ + n_) {
            const int k = id - ns_ - nh_;
            s = p[k], r = d_[k] - p_.upper[k];
          } else {
            const int k = id - ns_ - nh_ - n_;
            s = -p[k], r = p_.lower[k] - d_[k];
          }
          const double scale = 1e-12 * nrm * pnorm;
          double a_i = std::numeric_limits<double>::infinity();
          if (id < ns_) {
            if (state_[id] == SoftState::kBelow && s > scale) a_i = -r / s;
            else if (state_[id] == SoftState::kAbove && s < -scale) a_i = -r / s;
          } else if (s > scale) {
            a_i = -r / s;
          }
          a_i = std::max(a_i, 0.0);
          if (a_i < alpha) {
            alpha = a_i;
            block = id;
          }
        }
      }
      d_ += alpha * p;
      if (block >= 0) {
        const bool was_above = block < ns_ && state_[block] == SoftState::kAbove;
        if (block < ns_) state_[block] = SoftState::kActive;
        if (!add(block)) {
          // Dependent on the working set. A soft row only changes the penalty
          // slope; a hard row has zero slope along p up to roundoff and is
          // ignored until the working set changes (otherwise it blocks forever).
          if (block < ns_) state_[block] = was_above ? SoftState::kBelow : SoftState::kAbove;
          else {
            skip_[block] = true;
            skipped_.push_back(block);
          }
        }
        if (was_above || block < ns_) update_linear_term();
        continue;
      }

      // Full step: d is the working-set minimizer. Check multipliers.
      int worst = -1;
      double worst_violation = 1e-10 * (1.0 + p_.rho);
      SoftState release_to = SoftState::kBelow;
      for (std::size_t k = 0; k < ws_.size(); ++k) {
        const int id = ws_[k];
        const double l = lambda[static_cast<Eigen::Index>(k)];
        if (id < ns_) {
          if (-l > worst_violation) {
            worst_violation = -l;
            worst = static_cast<int>(k);
            release_to = SoftState::kBelow;
          } else if (l - p_.rho > worst_violation) {
            worst_violation = l - p_.rho;
            worst = static_cast<int>(k);
            release_to = SoftState::kAbove;
          }
        } else if (-l > worst_violation) {
          worst_violation = -l;
          worst = static_cast<int>(k);
        }
      }
      if (worst < 0) {
        out.converged = true;
        break;
      }
      const int id = ws_[worst];
      remove(worst);
      if (id < ns_) {
        state_[id] = release_to;
        update_linear_term();
      }
    }

    // Final multipliers for reporting.
    eqp(lambda);
    out.d = d_;
    out.soft_mult = Vec::Zero(ns_);
    out.hard_mult = Vec::Zero(nh_);
    out.bound_mult = Vec::Zero(n_);
    for (int i = 0; i < ns_; ++i)
      if (state_[i] == SoftState::kAbove) out.soft_mult[i] = p_.rho;
    for (std::size_t k = 0; k < ws_.size(); ++k) {
      const int id = ws_[k];
      const double l = lambda[static_cast<Eigen::Index>(k)];
      if (id < ns_) out.soft_mult[id] = std::clamp(l, 0.0, p_.rho);
      else if (id < ns_ + nh_) out.hard_mult[id - ns_] = std::max(l, 0.0);
      else if (id < ns_ + nh_ + n_) out.bound_mult[id - ns_ - nh_] = std::max(l, 0.0);
      else out.bound_mult[id - ns_ - nh_ - n_] = -std::max(l, 0.0);
    }
    out.working = ws_;
    out.model_value = model_value(p_, d_);
    return out;
  }

  static double model_value(const QpProblem& p, const Vec& d) {
    double v = p.c.dot(d) + 0.5 * d.dot(p.Q * d);
    if (p.n_soft() > 0) v += p.rho * (p.soft_A * d - p.soft_b).cwiseMax(0.0).sum();
    return v;
  }

 private:
  double rhs(int id) const {
    if (id < ns_) return p_.soft_b[id];
    if (id < ns_ + nh_) return p_.hard_b[id - ns_];
    if (id < ns_ + nh_ + n_) return p_.upper[id - ns_ - nh_];
    return -p_.lower[id - ns_ - nh_ - n_];
  }

  double row_dot(int id, const Vec& v) const {
    if (id < ns_) return p_.soft_A.row(id).dot(v);
    if (id < ns_ + nh_) return p_.hard_A.row(id - ns_).dot(v);
    if (id < ns_ + nh_ + n_) return v[id - ns_ - nh_];
    return -v[id - ns_ - nh_ - n_];
  }

  Vec row(int id) const {
    if (id < ns_) return p_.soft_A.row(id).transpose();
    if (id < ns_ + nh_) return p_.hard_A.row(id - ns_).transpose();
    Vec e = Vec::Zero(n_);
    if (id < ns_ + nh_ + n_) e[id - ns_ - nh_] = 1.0;
    else e[id - ns_ - nh_ - n_] = -1.0;
    return e;
  }

  double residual(int id) const { return row_dot(id, d_) - rhs(id); }

  void update_linear_term() {
    Vec above = Vec::Zero(ns_);
    for (int i = 0; i < ns_; ++i)
      if (state_[i] == SoftState::kAbove) above[i] = p_.rho;
    Vec ct = p_.c;
    if (ns_ > 0) ct.noalias() += p_.soft_A.transpose() * above;
    w_ = L_.triangularView<Eigen::Lower>().solve(ct);
  }

  // Minimizer of the current piece of the model over the working set.
  Vec eqp(Vec& lambda) const {
    const auto m = static_cast<Eigen::Index>(ws_.size());
    Vec v = w_;
    if (m > 0) {
      Vec t = Z_.leftCols(m).transpose() * w_;
      for (Eigen::Index k = 0; k < m; ++k) t[k] += rhs(ws_[k]);
      const auto R = R_.topLeftCorner(m, m).triangularView<Eigen::Upper>();
      lambda = -R.solve(R.transpose().solve(t));
      v += Z_.leftCols(m) * lambda;
    } else {
      lambda.resize(0);
    }
    return -L_.transpose().triangularView<Eigen::Upper>().solve(v);
  }

  bool add(int id) {
    const Vec z = L_.triangularView<Eigen::Lower>().solve(row(id));
    const auto m = static_cast<Eigen::Index>(ws_.size());
    Vec r(m);
    if (m > 0) r = R_.topLeftCorner(m, m).transpose().triangularView<Eigen::Lower>().solve(Z_.leftCols(m).transpose() * z);
    const double rho2 = z.squaredNorm() - r.squaredNorm();
    if (rho2 <= 1e-18 * z.squaredNorm()) return false;
    if (Z_.cols() <= m) Z_.conservativeResize(n_, std::max<Eigen::Index>(2 * m, 8));
    Z_.col(m) = z;
    Mat Rn = Mat::Zero(m + 1, m + 1);
    if (m > 0) Rn.topLeftCorner(m, m) = R_.topLeftCorner(m, m);
    Rn.col(m).head(m) = r;
    Rn(m, m) = std::sqrt(rho2);
    R_ = std::move(Rn);
    ws_.push_back(id);
    in_ws_[id] = true;
    clear_skips();
    return true;
  }

  void clear_skips() {
    for (int id : skipped_) skip_[id] = false;
    skipped_.clear();
  }

  void remove(int k) {
    clear_skips();
    const auto m = static_cast<Eigen::Index>(ws_.size());
    in_ws_[ws_[k]] = false;
    ws_.erase(ws_.begin() + k);
    for (Eigen::Index j = k; j + 1 < m; ++j) Z_.col(j) = Z_.col(j + 1);
    Mat H(m, m - 1);
    H.leftCols(k) = R_.topLeftCorner(m, k);
    H.rightCols(m - 1 - k) = R_.topRightCorner(m, m - 1 - k);
    for (Eigen::Index j = k; j < m - 1; ++j) {
      Eigen::JacobiRotation<double> G;
      G.makeGivens(H(j, j), H(j + 1, j));
      H.applyOnTheLeft(j, j + 1, G.adjoint());
      H(j + 1, j) = 0.0;
    }
    R_ = H.topRows(m - 1);
  }

  const QpProblem& p_;
  int n_ = 0, ns_ = 0, nh_ = 0;
  Eigen::LLT<Mat> llt_;
  Mat L_;
  Vec d_, w_, soft_norm_, hard_norm_;
  std::vector<SoftState> state_;
  std::vector<bool> in_ws_, skip_;
  std::vector<int> skipped_;
  std::vector<int> ws_;
  Mat Z_, R_;
};

inline QpResult solve_qp(const QpProblem& p, const std::vector<int>& warm = {}, int max_iter = 0) {
  QpSolver solver(p);
  return solver.solve(warm, max_iter);
}

// ---------------------------------------------------------------------------
// SQP driver.

struct NlpProblem {
  int dim = 0;
  Vec lower, upper;
  Mat hard_A;  // optional linear hard constraints hard_A x <= hard_b
  Vec hard_b;
  double rho = 10.0;
  // f(x); fills the gradient when the pointer is non-null.
  std::function<double(const Vec&, Vec*)> objective;
  // Soft constraints g(x) <= 0; fills the Jacobian when the pointer is non-null.
  // May be empty when the problem has none.
  std::function<Vec(const Vec&, Mat*)> constraints;

  void validate() const {
    require(dim >= 1, "nlp: dimension must be positive");
    require(lower.size() == dim && upper.size() == dim && (lower.array() <= upper.array()).all(),
            "nlp: bounds malformed (lower <= upper required)");
    require(hard_A.rows() == hard_b.size() && (hard_A.rows() == 0 || hard_A.cols() == dim),
            "nlp: hard constraint shape");
    require(rho > 0.0, "nlp: penalty must be positive");
    require(static_cast<bool>(objective), "nlp: objective callback missing");
  }
};

struct SqpConfig {
  int max_iterations = 12;
  double step_tolerance = 1e-3;
  int memory = 10;
  int qp_max_iterations = 0;  // 0 = automatic
  double armijo = 1e-4;
  int max_backtracks = 20;

  void validate() const {
    require(max_iterations >= 1 && step_tolerance > 0.0 && memory >= 1 && qp_max_iterations >= 0 && armijo > 0.0 &&
                max_backtracks >= 1,
            "sqp config: iteration counts and tolerances must be positive");
  }
};

enum class Termination { kTolerance, kMaxIter, kQpFailure };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::kTolerance: return "tolerance";
    case Termination::kMaxIter: return "max_iter";
    case Termination::kQpFailure: return "qp_failure";
  }
  return "?";
}

struct SqpTraceRow {
  int iter;
  double objective;
  double violation;
  double step_norm;
  double merit;
};

struct SqpResult {
  Vec x;
  double objective = 0.0;
  double violation = 0.0;  // max soft constraint violation
  double merit = 0.0;
  int iterations = 0;
  Termination termination = Termination::kMaxIter;
  bool merit_monotone = true;
  std::vector<SqpTraceRow> trace;  // row 0 is the starting point
};

namespace detail {

struct Point {
  Vec x;
  double f = 0.0;
  Vec grad;
  Vec g;
  Mat jac;
  double merit = 0.0;
  double violation = 0.0;
};

inline void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NumericalError(std::string("sqp: callback returned non-finite ") + what);
}

inline Point evaluate(const NlpProblem& p, const Vec& x, bool derivatives) {
  Point pt;
  pt.x = x;
  pt.f = p.objective(x, derivatives ? &pt.grad : nullptr);
  check_finite(pt.f, "objective");
  if (derivatives) {
    require(pt.grad.size() == p.dim, "sqp: objective gradient has wrong size");
    if (!pt.grad.allFinite()) throw NumericalError("sqp: callback returned non-finite objective gradient");
  }
  if (p.constraints) {
    pt.g = p.constraints(x, derivatives ? &pt.jac : nullptr);
    if (!pt.g.allFinite()) throw NumericalError("sqp: callback returned non-finite constraint values");
    if (derivatives) {
      require(pt.jac.rows() == pt.g.size() && pt.jac.cols() == p.dim, "sqp: constraint Jacobian has wrong shape");
      if (!pt.jac.allFinite()) throw NumericalError("sqp: callback returned non-finite constraint Jacobian");
    }
  } else {
    pt.g = Vec(0);
    pt.jac = Mat(0, p.dim);
  }
  const Vec pos = pt.g.cwiseMax(0.0);
  pt.violation = pos.size() ? pos.maxCoeff() : 0.0;
  pt.merit = pt.f + p.rho * pos.sum();
  return pt;
}

// Largest alpha in [0, cap] keeping x + alpha d inside the hard constraints.
inline double max_feasible_step(const NlpProblem& p, const Vec& x, const Vec& d, double cap) {
  double a = cap;
  for (int k = 0; k < p.dim; ++k) {
    if (d[k] > 0.0) a = std::min(a, (p.upper[k] - x[k]) / d[k]);
    else if (d[k] < 0.0) a = std::min(a, (p.lower[k] - x[k]) / d[k]);
  }
  for (Eigen::Index j = 0; j < p.hard_A.rows(); ++j) {
    const double s = p.hard_A.row(j).dot(d);
    if (s > 0.0) a = std::min(a, (p.hard_b[j] - p.hard_A.row(j).dot(x)) / s);
  }
  return std::max(a, 0.0);
}

}  // namespace detail

/// Solves the soft-constrained NLP from u0 (clipped into the box). The hard
/// linear constraints must hold at the clipped start.
inline SqpResult solve(const NlpProblem& problem, const Vec& u0, const SqpConfig& cfg = {}) {
  problem.validate();
  cfg.validate();
  require(u0.size() == problem.dim, "sqp: start point has wrong size");
  require(u0.allFinite(), "sqp: start point must be finite");
  Vec x = u0.cwiseMax(problem.lower).cwiseMin(problem.upper);
  if (problem.hard_A.rows() > 0) {
    const Vec r = problem.hard_A * x - problem.hard_b;
    require(r.maxCoeff() <= 1e-9, "sqp: start point violates the hard linear constraints");
  }
  const int n = problem.dim;

  detail::Point cur = detail::evaluate(problem, x, true);
  SqpResult res;
  res.trace.push_back({0, cur.f, cur.violation, 0.0, cur.merit});
  Lbfgs hess(cfg.memory);
  std::vector<int> warm;
  res.termination = Termination::kMaxIter;

  for (int it = 1; it <= cfg.max_iterations; ++it) {
    QpProblem qp;
    qp.Q = hess.dense(n);
    qp.c = cur.grad;
    qp.soft_A = cur.jac;
    qp.soft_b = -cur.g;
    qp.hard_A = problem.hard_A;
    qp.hard_b = problem.hard_A.rows() > 0 ? Vec(problem.hard_b - problem.hard_A * cur.x) : Vec(0);
    qp.lower = problem.lower - cur.x;
    qp.upper = problem.upper - cur.x;
    qp.rho = problem.rho;
    const QpResult q = solve_qp(qp, warm, cfg.qp_max_iterations);
    res.iterations = it;
    if (!q.converged || !q.d.allFinite()) {
      res.termination = Termination::kQpFailure;
      break;
    }
    warm = q.working;
    const Vec& d = q.d;

    // Directional derivative of the merit along d.
    double D = cur.grad.dot(d);
    if (cur.g.size() > 0) {
      const Vec Jd = cur.jac * d;
      for (Eigen::Index i = 0; i < cur.g.size(); ++i) {
        if (cur.g[i] > 0.0) D += problem.rho * Jd[i];
        else if (cur.g[i] == 0.0) D += problem.rho * std::max(0.0, Jd[i]);
      }
    }
    if (d.lpNorm<Eigen::Infinity>() <= cfg.step_tolerance * 1e-3 || D >= 0.0) {
      res.trace.push_back({it, cur.f, cur.violation, 0.0, cur.merit});
      res.termination = Termination::kTolerance;
      break;
    }

    // Backtracking on the merit; on acceptance of the unit step, one
    // quadratic-interpolation trial (exact on quadratic merits).
    auto merit_at = [&](double a) {
      Vec xa = (cur.x + a * d).cwiseMax(problem.lower).cwiseMin(problem.upper);
      return detail::evaluate(problem, xa, false).merit;
    };
    double alpha = 1.0;
    double phi = merit_at(1.0);
    bool accepted = phi <= cur.merit + cfg.armijo * D;
    if (accepted) {
      const double curv = phi - cur.merit - D;
      if (curv > 0.0) {
        const double aq = std::min(-D / (2.0 * curv), detail::max_feasible_step(problem, cur.x, d, 10.0));
        if (aq > 0.0 && std::abs(aq - 1.0) > 1e-6) {
          const double pq = merit_at(aq);
          if (pq < phi && pq <= cur.merit + cfg.armijo * aq * D) {
            alpha = aq;
            phi = pq;
          }
        }
      }
    } else {
      for (int b = 0; b < cfg.max_backtracks && !accepted; ++b) {
        const double curv = phi - cur.merit - D * alpha;
        double next = curv > 0.0 ? -D * alpha * alpha / (2.0 * curv) : 0.5 * alpha;
        next = std::clamp(next, 0.1 * alpha, 0.5 * alpha);
        alpha = next;
        phi = merit_at(alpha);
        accepted = phi <= cur.merit + cfg.armijo * alpha * D;
      }
    }
    if (!accepted) {
      res.trace.push_back({it, cur.f, cur.violation, 0.0, cur.merit});
      res.termination = Termination::kTolerance;  // no further decrease possible along the QP step
      break;
    }

    Vec xn = (cur.x + alpha * d).cwiseMax(problem.lower).cwiseMin(problem.upper);
    detail::Point next = detail::evaluate(problem, xn, true);
    if (next.merit > cur.merit) res.merit_monotone = false;

    const Vec s = next.x - cur.x;
    Vec y = next.grad - cur.grad;
    if (cur.g.size() > 0) y += (next.jac - cur.jac).transpose() * q.soft_mult;
    hess.push(s, y);

    const double step = s.lpNorm<Eigen::Infinity>();
    cur = std::move(next);
    res.trace.push_back({it, cur.f, cur.violation, step, cur.merit});
    if (step <= cfg.step_tolerance) {
      res.termination = Termination::kTolerance;
      break;
    }
  }
  res.x = cur.x;
  res.objective = cur.f;
  res.violation = cur.violation;
  res.merit = cur.merit;
  return res;
}

}  // namespace bldgmpc::sqp
