#include "bldgmpc/sqp.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace bldgmpc;
using namespace bldgmpc::sqp;

namespace {

Mat random_spd(int n, std::uint64_t seed, double min_eig = 0.5) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Mat M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = g(rng);
  return M * M.transpose() + min_eig * Mat::Identity(n, n);
}

Vec random_vec(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = g(rng);
  return v;
}

NlpProblem quadratic_nlp(const Mat& A, const Vec& b, double box) {
  NlpProblem p;
  p.dim = static_cast<int>(b.size());
  p.lower = Vec::Constant(p.dim, -box);
  p.upper = Vec::Constant(p.dim, box);
  p.objective = [A, b](const Vec& x, Vec* g) {
    if (g) *g = A * x - b;
    return 0.5 * x.dot(A * x) - b.dot(x);
  };
  return p;
}

double rosenbrock(const Vec& x, Vec* g) {
  const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
  if (g) {
    g->resize(2);
    (*g)[0] = -2.0 * a - 400.0 * x[0] * b;
    (*g)[1] = 200.0 * b;
  }
  return a * a + 100.0 * b * b;
}

}  // namespace

// ---------------------------------------------------------------------------
// L-BFGS

TEST(Lbfgs, EmptyHistoryIsScaledIdentity) {
  Lbfgs h(5, 2.5);
  EXPECT_EQ(h.dense(3), 2.5 * Mat::Identity(3, 3));
  const Vec v = random_vec(3, 1);
  EXPECT_LT((h.apply_inverse(v) - v / 2.5).norm(), 1e-15);
}

TEST(Lbfgs, ConjugatePairsReproduceHessian) {
  const int n = 5;
  const Mat A = random_spd(n, 2);
  // A-conjugate directions by Gram-Schmidt in the A inner product.
  std::vector<Vec> dirs;
  for (int k = 0; k < n; ++k) {
    Vec v = random_vec(n, 10 + k);
    for (const auto& q : dirs) v -= (q.dot(A * v) / q.dot(A * q)) * q;
    dirs.push_back(v);
  }
  Lbfgs h(n);
  for (const auto& s : dirs) EXPECT_FALSE(h.push(s, A * s));
  const Mat B = h.dense(n);
  for (const auto& s : dirs) EXPECT_LT((B * s - A * s).norm(), 1e-8 * (A * s).norm());
  EXPECT_LT((B - A).norm(), 1e-8 * A.norm());
  // Two-loop recursion is the inverse of the dense operator.
  const Vec v = random_vec(n, 99);
  EXPECT_LT((B * h.apply_inverse(v) - v).norm(), 1e-9 * v.norm());
}

TEST(Lbfgs, PartialMemoryHonoursStoredSecants) {
  const int n = 6;
  const Mat A = random_spd(n, 3);
  Lbfgs h(3);
  std::vector<Vec> dirs;
  for (int k = 0; k < 3; ++k) {
    Vec v = random_vec(n, 20 + k);
    for (const auto& q : dirs) v -= (q.dot(A * v) / q.dot(A * q)) * q;
    dirs.push_back(v);
    h.push(v, A * v);
  }
  const Mat B = h.dense(n);
  for (const auto& s : dirs) EXPECT_LT((B * s - A * s).norm(), 1e-8 * (A * s).norm());
}

TEST(Lbfgs, DampingKeepsPositiveDefinite) {
  Lbfgs h(4);
  h.push(Vec::Unit(3, 0), Vec::Unit(3, 0) * 2.0);
  Vec s(3), y(3);
  s << 1.0, 1.0, 0.0;
  y << -1.0, 0.5, 0.2;  // s'y < 0
  EXPECT_TRUE(h.push(s, y));
  const Mat B = h.dense(3);
  Eigen::SelfAdjointEigenSolver<Mat> es(B);
  EXPECT_GT(es.eigenvalues().minCoeff(), 0.0);
  for (int t = 0; t < 100; ++t) {
    const Vec d = random_vec(3, 300 + t);
    EXPECT_GT(d.dot(B * d), 0.0);
  }
}

// ---------------------------------------------------------------------------
// QP

TEST(Qp, UnconstrainedIsNewtonStep) {
  QpProblem p;
  p.Q = random_spd(4, 5);
  p.c = random_vec(4, 6);
  p.lower = Vec::Constant(4, -1e6);
  p.upper = Vec::Constant(4, 1e6);
  const auto r = solve_qp(p);
  ASSERT_TRUE(r.converged);
  EXPECT_LT((r.d + p.Q.ldlt().solve(p.c)).norm(), 1e-10);
}

TEST(Qp, HandSolvedKktPoint) {
  // min 0.5 (d1^2 + d2^2) - d1 - 2 d2  s.t. d1 + d2 <= 1.
  // KKT: d = (1 - l, 2 - l), d1 + d2 = 1 -> l = 1, d = (0, 1).
  QpProblem p;
  p.Q = Mat::Identity(2, 2);
  p.c = Vec(2);
  p.c << -1.0, -2.0;
  p.hard_A = Mat(1, 2);
  p.hard_A << 1.0, 1.0;
  p.hard_b = Vec::Constant(1, 1.0);
  p.lower = Vec::Constant(2, -10.0);
  p.upper = Vec::Constant(2, 10.0);
  const auto r = solve_qp(p);
  ASSERT_TRUE(r.converged);
  EXPECT_NEAR(r.d[0], 0.0, 1e-8);
  EXPECT_NEAR(r.d[1], 1.0, 1e-8);
  EXPECT_NEAR(r.hard_mult[0], 1.0, 1e-8);
}

TEST(Qp, InfeasibleSoftConstraintGivesFiniteSlack) {
  // d <= -5 and -d <= -5 (d >= 5) cannot both hold; penalties balance.
  QpProblem p;
  p.Q = Mat::Identity(1, 1);
  p.c = Vec::Zero(1);
  p.soft_A = Mat(2, 1);
  p.soft_A << 1.0, -1.0;
  p.soft_b = Vec::Constant(2, -5.0);
  p.lower = Vec::Constant(1, -100.0);
  p.upper = Vec::Constant(1, 100.0);
  p.rho = 10.0;
  const auto r = solve_qp(p);
  ASSERT_TRUE(r.converged);
  EXPECT_TRUE(r.d.allFinite());
  EXPECT_NEAR(r.d[0], 0.0, 1e-10);
  EXPECT_NEAR(QpSolver::model_value(p, r.d), 100.0, 1e-9);
}

TEST(Qp, SoftPenaltySaturatesAtRho) {
  // min 0.5 d^2 - 20 d + rho * max(0, d - 1): optimum where slope 20 - rho = d,
  // i.e. d = 10 for rho = 10 (penalty paid, multiplier = rho).
  QpProblem p;
  p.Q = Mat::Identity(1, 1);
  p.c = Vec::Constant(1, -20.0);
  p.soft_A = Mat::Ones(1, 1);
  p.soft_b = Vec::Ones(1);
  p.lower = Vec::Constant(1, -100.0);
  p.upper = Vec::Constant(1, 100.0);
  const auto r = solve_qp(p);
  EXPECT_NEAR(r.d[0], 10.0, 1e-10);
  EXPECT_NEAR(r.soft_mult[0], 10.0, 1e-12);
  // With a weaker pull the constraint is active with interior multiplier.
  p.c[0] = -5.0;
  const auto s = solve_qp(p);
  EXPECT_NEAR(s.d[0], 1.0, 1e-10);
  EXPECT_NEAR(s.soft_mult[0], 4.0, 1e-10);
}

namespace {

// KKT certificate: stationarity with the returned multipliers, primal
// feasibility, complementarity, and soft multipliers matching the residual sign.
bool kkt_holds(const QpProblem& p, const QpResult& r, double tol) {
  const Vec& d = r.d;
  Vec grad = p.c + p.Q * d;
  if (p.n_soft()) grad += p.soft_A.transpose() * r.soft_mult;
  if (p.n_hard()) grad += p.hard_A.transpose() * r.hard_mult;
  grad += r.bound_mult;
  if (grad.lpNorm<Eigen::Infinity>() > tol) return false;
  for (int k = 0; k < p.dim(); ++k) {
    if (d[k] < p.lower[k] - tol || d[k] > p.upper[k] + tol) return false;
    if (r.bound_mult[k] > tol && std::abs(d[k] - p.upper[k]) > tol) return false;
    if (r.bound_mult[k] < -tol && std::abs(d[k] - p.lower[k]) > tol) return false;
  }
  for (int j = 0; j < p.n_hard(); ++j) {
    const double res = p.hard_A.row(j).dot(d) - p.hard_b[j];
    if (res > tol || (r.hard_mult[j] > tol && std::abs(res) > tol)) return false;
  }
  for (int i = 0; i < p.n_soft(); ++i) {
    const double res = p.soft_A.row(i).dot(d) - p.soft_b[i];
    const double l = r.soft_mult[i];
    if (res > tol && std::abs(l - p.rho) > tol) return false;
    if (res < -tol && l > tol) return false;
  }
  return true;
}

}  // namespace

TEST(Qp, RandomProblemsSatisfyKkt) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const int n = 6 + static_cast<int>(seed % 5);
    QpProblem p;
    p.Q = random_spd(n, 1000 + seed, 0.2);
    p.c = 5.0 * random_vec(n, 2000 + seed);
    p.soft_A = Mat(8, n);
    for (int i = 0; i < 8; ++i) p.soft_A.row(i) = random_vec(n, 3000 + 10 * seed + i).transpose();
    p.soft_b = random_vec(8, 4000 + seed);
    p.hard_A = Mat(3, n);
    for (int j = 0; j < 3; ++j) p.hard_A.row(j) = random_vec(n, 5000 + 10 * seed + j).transpose();
    p.hard_b = random_vec(3, 6000 + seed).cwiseAbs();  // d = 0 feasible
    p.lower = -Vec::Constant(n, 0.5 + 0.1 * static_cast<double>(seed % 3));
    p.upper = Vec::Constant(n, 0.7);
    p.rho = 3.0;
    const auto r = solve_qp(p);
    ASSERT_TRUE(r.converged) << "seed " << seed;
    EXPECT_TRUE(kkt_holds(p, r, 1e-8)) << "seed " << seed;
    // Warm start from the final working set reproduces the solution.
    const auto w = solve_qp(p, r.working);
    EXPECT_LT((w.d - r.d).norm(), 1e-9) << "seed " << seed;
  }
}

TEST(Qp, DependentBoundsAndCouplingHandled) {
  // x_t <= x_h with both at their lower bound: three dependent constraints.
  QpProblem p;
  p.Q = Mat::Identity(2, 2);
  p.c = Vec(2);
  p.c << 1.0, -0.5;  // pushes x_h down, x_t up
  p.hard_A = Mat(1, 2);
  p.hard_A << -1.0, 1.0;  // x_t - x_h <= 0
  p.hard_b = Vec::Zero(1);
  p.lower = Vec::Zero(2);
  p.upper = Vec::Ones(2);
  const auto r = solve_qp(p);
  ASSERT_TRUE(r.converged);
  // Optimum: x_h = x_t = t minimizing 0.5*2 t^2 + 0.5 t -> t = 0 (bounded below).
  EXPECT_NEAR(r.d[0], 0.0, 1e-12);
  EXPECT_NEAR(r.d[1], 0.0, 1e-12);
  EXPECT_TRUE(kkt_holds(p, r, 1e-10));
}

// ---------------------------------------------------------------------------
// SQP

TEST(Sqp, ClippedScalarQuadratic) {
  NlpProblem p;
  p.dim = 1;
  p.lower = Vec::Zero(1);
  p.upper = Vec::Constant(1, 2.0);
  p.objective = [](const Vec& x, Vec* g) {
    if (g) *g = Vec::Constant(1, 2.0 * (x[0] - 3.0));
    return (x[0] - 3.0) * (x[0] - 3.0);
  };
  const auto r = solve(p, Vec::Constant(1, 0.5));
  EXPECT_EQ(r.x[0], 2.0);
  EXPECT_EQ(r.violation, 0.0);
}

TEST(Sqp, ScalarQuadraticInThreeIterations) {
  const Mat A = Mat::Constant(1, 1, 4.0);
  const Vec b = Vec::Constant(1, 2.0);
  SqpConfig cfg;
  cfg.max_iterations = 3;
  cfg.step_tolerance = 1e-12;
  const auto r = solve(quadratic_nlp(A, b, 10.0), Vec::Constant(1, 7.0), cfg);
  EXPECT_NEAR(r.x[0], 0.5, 1e-6);
  EXPECT_LE(r.iterations, 3);
}

TEST(Sqp, ConvexQuadraticsWithinDimensionIterations) {
  for (int n : {2, 3, 5}) {
    const Mat A = random_spd(n, 40 + n);
    const Vec b = random_vec(n, 50 + n);
    const Vec xstar = A.ldlt().solve(b);
    SqpConfig cfg;
    cfg.max_iterations = n;
    cfg.step_tolerance = 1e-14;
    const auto r = solve(quadratic_nlp(A, b, 1e3), Vec::Zero(n), cfg);
    EXPECT_LT((r.x - xstar).lpNorm<Eigen::Infinity>(), 1e-6) << "n=" << n;
  }
}

TEST(Sqp, BoxActiveConvexQuadratic) {
  // min 0.5|x - t|^2 over [0,1]^3 with t outside the box -> projection of t.
  const Mat A = Mat::Identity(3, 3);
  Vec t(3);
  t << 2.0, -1.0, 0.4;
  NlpProblem p = quadratic_nlp(A, t, 1.0);
  p.lower = Vec::Zero(3);
  SqpConfig cfg;
  cfg.step_tolerance = 1e-12;
  const auto r = solve(p, Vec::Constant(3, 0.5), cfg);
  EXPECT_NEAR(r.x[0], 1.0, 1e-6);
  EXPECT_NEAR(r.x[1], 0.0, 1e-6);
  EXPECT_NEAR(r.x[2], 0.4, 1e-6);
}

TEST(Sqp, RosenbrockMatchesGradientDescentOracle) {
  // Oracle: plain gradient descent with Armijo backtracking from the same start,
  // run until the gradient vanishes to machine-level tolerance.
  Vec z(2);
  z << -1.2, 1.0;
  for (int it = 0; it < 2000000; ++it) {
    Vec g;
    const double f = rosenbrock(z, &g);
    if (g.norm() < 1e-10) break;
    double a = 1.0;
    while (rosenbrock(z - a * g, nullptr) > f - 1e-4 * a * g.squaredNorm()) a *= 0.5;
    z -= a * g;
  }
  ASSERT_NEAR(z[0], 1.0, 1e-6);
  ASSERT_NEAR(z[1], 1.0, 1e-6);

  NlpProblem p;
  p.dim = 2;
  p.lower = Vec::Constant(2, -5.0);
  p.upper = Vec::Constant(2, 5.0);
  p.objective = rosenbrock;
  SqpConfig cfg;
  cfg.max_iterations = 500;
  cfg.step_tolerance = 1e-12;
  Vec x0(2);
  x0 << -1.2, 1.0;
  const auto r = solve(p, x0, cfg);
  EXPECT_LT((r.x - z).lpNorm<Eigen::Infinity>(), 1e-4);
  EXPECT_TRUE(r.merit_monotone);
  for (std::size_t k = 1; k < r.trace.size(); ++k) EXPECT_LE(r.trace[k].merit, r.trace[k - 1].merit);
}

TEST(Sqp, SoftConstraintsAndHardCoupling) {
  // min (x0 - 2)^2 + (x1 - 2)^2, soft x0 + x1 <= 2, hard x1 <= x0, box [0, 3].
  NlpProblem p;
  p.dim = 2;
  p.lower = Vec::Zero(2);
  p.upper = Vec::Constant(2, 3.0);
  p.hard_A = Mat(1, 2);
  p.hard_A << -1.0, 1.0;
  p.hard_b = Vec::Zero(1);
  p.rho = 10.0;
  p.objective = [](const Vec& x, Vec* g) {
    if (g) *g = 2.0 * (x.array() - 2.0).matrix();
    return (x.array() - 2.0).square().sum();
  };
  p.constraints = [](const Vec& x, Mat* J) {
    if (J) *J = Mat::Ones(1, 2);
    return Vec::Constant(1, x[0] + x[1] - 2.0);
  };
  SqpConfig cfg;
  cfg.max_iterations = 50;
  cfg.step_tolerance = 1e-12;
  Vec x0(2);
  x0 << 0.2, 0.1;
  const auto r = solve(p, x0, cfg);
  EXPECT_NEAR(r.x[0], 1.0, 1e-6);
  EXPECT_NEAR(r.x[1], 1.0, 1e-6);
  EXPECT_LE(r.violation, 1e-6);
  EXPECT_LE(r.x[1], r.x[0] + 1e-12);
  EXPECT_TRUE(r.merit_monotone);
}

TEST(Sqp, DeterministicAndBoxFeasible) {
  NlpProblem p;
  p.dim = 2;
  p.lower = Vec::Constant(2, -0.5);
  p.upper = Vec::Constant(2, 0.8);
  p.objective = rosenbrock;
  SqpConfig cfg;
  cfg.max_iterations = 40;
  Vec x0(2);
  x0 << -3.0, 4.0;  // projected into the box
  const auto a = solve(p, x0, cfg), b = solve(p, x0, cfg);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_TRUE((a.x.array() >= p.lower.array()).all() && (a.x.array() <= p.upper.array()).all());
}

TEST(Sqp, NonFiniteCallbackAborts) {
  NlpProblem p;
  p.dim = 1;
  p.lower = Vec::Zero(1);
  p.upper = Vec::Ones(1);
  p.objective = [](const Vec&, Vec* g) {
    if (g) *g = Vec::Zero(1);
    return std::nan("");
  };
  EXPECT_THROW(solve(p, Vec::Zero(1)), NumericalError);
}

TEST(Sqp, RejectsMalformedProblems) {
  NlpProblem p;
  p.dim = 2;
  p.lower = Vec::Ones(2);
  p.upper = Vec::Zero(2);
  p.objective = rosenbrock;
  EXPECT_THROW(solve(p, Vec::Zero(2)), InvalidInput);
  SqpConfig cfg;
  cfg.max_iterations = 0;
  p.lower = Vec::Zero(2);
  p.upper = Vec::Ones(2);
  EXPECT_THROW(solve(p, Vec::Zero(2), cfg), InvalidInput);
}
