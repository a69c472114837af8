#pragma once

// Receding-horizon controller: predictor wrappers with exact derivatives,
// the comfort/setpoint constraint vector, warm starting, and the rule-based
// baselines.

#include "bldgmpc/dataset.hpp"
#include "bldgmpc/lss.hpp"
#include "bldgmpc/rnn.hpp"
#include "bldgmpc/sqp.hpp"

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bldgmpc::mpc {

inline constexpr double kComfortLo = 19.0;
inline constexpr double kComfortHi = 24.0;

inline const std::array<SetpointRange, kNumSetpoints>& setpoint_ranges() {
  static const std::array<SetpointRange, kNumSetpoints> r{kHpSupplyRange, kTankRange, kTankRange, kTankRange,
                                                          kTankRange,     kZoneRange, kZoneRange, kZoneRange,
                                                          kZoneRange};
  return r;
}

// ---------------------------------------------------------------------------
// Objective and constraints on raw trajectories.

/// Sum over the horizon of |P_el - P_prod|.
inline double objective(const Vec& p_el, const Vec& p_prod) {
  require(p_el.size() == p_prod.size(), "objective: power sequences must have equal length");
  return (p_el - p_prod).cwiseAbs().sum();
}

/// Stacked g <= 0 vector for a trajectory: comfort rows (per step, per room:
/// T - 24 then 19 - T), box rows (per step, per decision: lo - v then v - hi),
/// coupling rows (per step, per tank: tank - (hp - 5)).
inline Vec constraint_vector(const Mat& temps, const std::vector<ControlSetpoints>& traj) {
  require(temps.rows() == static_cast<Eigen::Index>(traj.size()), "constraints: temperature and setpoint steps differ");
  const Eigen::Index H = temps.rows(), nz = temps.cols();
  Vec g(H * (2 * nz + 2 * kNumSetpoints + kTanks));
  Eigen::Index r = 0;
  for (Eigen::Index k = 0; k < H; ++k)
    for (Eigen::Index z = 0; z < nz; ++z) {
      g[r++] = temps(k, z) - kComfortHi;
      g[r++] = kComfortLo - temps(k, z);
    }
  const auto& ranges = setpoint_ranges();
  for (const auto& sp : traj) {
    const auto v = sp.to_vector();
    for (int j = 0; j < kNumSetpoints; ++j) {
      g[r++] = ranges[j].lo - v[j];
      g[r++] = v[j] - ranges[j].hi;
    }
  }
  for (const auto& sp : traj)
    for (int i = 0; i < kTanks; ++i) g[r++] = sp.tank_sp[i] - (sp.hp_supply - kTankSupplyGap);
  return g;
}

// ---------------------------------------------------------------------------
// Predictors.

/// Forecast over a horizon; derivatives are with respect to the raw
/// setpoints, columns ordered by step then setpoint index.
struct Prediction {
  Mat temps;      // H x zones
  Vec power;      // H, thermal electric power
  Mat d_temps;    // (H * zones) x (H * 9), rows by step then zone
  Mat d_power;    // H x (H * 9)
};

class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string kind() const = 0;
  virtual int history_required() const = 0;
  virtual int zones() const = 0;
  // History rows are consecutive trace periods, most recent last.
  virtual void initialize(const Mat& u_hist, const Mat& y_hist, const Mat& z_hist) = 0;
  virtual Prediction predict(const Mat& u_future, bool derivatives) = 0;
};

class LssNlPredictor : public Predictor {
 public:
  explicit LssNlPredictor(std::shared_ptr<const lss::LssNlModel> model, int history = 96)
      : model_(std::move(model)), history_(history) {
    require(model_ != nullptr, "LSS-NL predictor: model missing");
    model_->ss.validate();
    require(model_->ss.inputs() == kModelInputs, "LSS-NL predictor: model must take 12 inputs");
    require(model_->power.dim() == kModelInputs + model_->ss.outputs(), "LSS-NL predictor: regressor width mismatch");
    require(history_ >= 1, "LSS-NL predictor: history must be positive");
  }

  std::string kind() const override { return "LSS-NL"; }
  int history_required() const override { return history_; }
  int zones() const override { return model_->ss.outputs(); }

  void initialize(const Mat& u_hist, const Mat& y_hist, const Mat&) override {
    require(u_hist.rows() >= history_, "LSS-NL predictor: history too short");
    x0_ = lss::kalman_init(model_->ss, u_hist.bottomRows(history_), y_hist.bottomRows(history_));
  }

  Prediction predict(const Mat& u_future, bool derivatives) override {
    require(x0_.size() == model_->ss.order(), "LSS-NL predictor: initialize() must be called first");
    const int H = static_cast<int>(u_future.rows()), nz = zones();
    Prediction p;
    p.temps = lss::predict(model_->ss, x0_, u_future);
    p.power.resize(H);
    if (derivatives) {
      p.d_temps = toeplitz(H);
      p.d_power = Mat::Zero(H, static_cast<Eigen::Index>(H) * kNumSetpoints);
    }
    for (int k = 0; k < H; ++k) {
      const Vec w = lss::concat(u_future.row(k).transpose(), p.temps.row(k).transpose());
      if (!derivatives) {
        p.power[k] = lss::kernel_predict(model_->power, w);
        continue;
      }
      const lss::KernelValue kv = lss::kernel_predict_with_grad(model_->power, w);
      p.power[k] = kv.z;
      const Eigen::Index cols = static_cast<Eigen::Index>(k + 1) * kNumSetpoints;
      p.d_power.row(k).head(cols) =
          kv.grad.tail(nz).transpose() * p.d_temps.block(static_cast<Eigen::Index>(k) * nz, 0, nz, cols);
      p.d_power.row(k).segment(static_cast<Eigen::Index>(k) * kNumSetpoints, kNumSetpoints) +=
          kv.grad.head(kNumSetpoints).transpose();
    }
    return p;
  }

 private:
  // Controllable columns of the rollout Toeplitz map; fixed for a given H.
  const Mat& toeplitz(int H) {
    if (toeplitz_.cols() != static_cast<Eigen::Index>(H) * kNumSetpoints) {
      const Mat T = lss::rollout_jacobian(model_->ss, H);
      const int nz = zones();
      toeplitz_.resize(static_cast<Eigen::Index>(H) * nz, static_cast<Eigen::Index>(H) * kNumSetpoints);
      for (int j = 0; j < H; ++j)
        toeplitz_.middleCols(static_cast<Eigen::Index>(j) * kNumSetpoints, kNumSetpoints) =
            T.middleCols(static_cast<Eigen::Index>(j) * kModelInputs, kNumSetpoints);
    }
    return toeplitz_;
  }

  std::shared_ptr<const lss::LssNlModel> model_;
  int history_;
  Vec x0_;
  Mat toeplitz_;
};

class EncDecPredictor : public Predictor {
 public:
  explicit EncDecPredictor(std::shared_ptr<const rnn::EncoderDecoderModel> model) : model_(std::move(model)) {
    require(model_ != nullptr, "ENC-DEC predictor: model missing");
    model_->validate();
    require(model_->inputs == kModelInputs && model_->energy == 1, "ENC-DEC predictor: model must map 12 inputs to temps and one power");
    mask_.resize(kNumSetpoints);
    for (int j = 0; j < kNumSetpoints; ++j) mask_[j] = j;
  }

  std::string kind() const override { return "ENC-DEC"; }
  int history_required() const override { return model_->encoder_steps; }
  int zones() const override { return model_->outputs; }

  void initialize(const Mat& u_hist, const Mat& y_hist, const Mat& z_hist) override {
    const int n = model_->encoder_steps;
    require(u_hist.rows() >= n, "ENC-DEC predictor: history too short");
    state_ = rnn::encode(*model_, rnn::history_matrix(u_hist.bottomRows(n), y_hist.bottomRows(n), z_hist.bottomRows(n)));
  }

  Prediction predict(const Mat& u_future, bool derivatives) override {
    require(state_.has_value(), "ENC-DEC predictor: initialize() must be called first");
    const rnn::Decoded d = rnn::decode(*model_, *state_, u_future, derivatives ? mask_ : std::vector<int>{});
    const int H = static_cast<int>(u_future.rows()), nz = zones(), no = nz + 1;
    Prediction p;
    p.temps = d.y;
    p.power = d.z.col(0);
    if (derivatives) {
      p.d_temps.resize(static_cast<Eigen::Index>(H) * nz, d.jacobian.cols());
      p.d_power.resize(H, d.jacobian.cols());
      for (int k = 0; k < H; ++k) {
        p.d_temps.middleRows(static_cast<Eigen::Index>(k) * nz, nz) = d.jacobian.middleRows(static_cast<Eigen::Index>(k) * no, nz);
        p.d_power.row(k) = d.jacobian.row(static_cast<Eigen::Index>(k) * no + nz);
      }
    }
    return p;
  }

 private:
  std::shared_ptr<const rnn::EncoderDecoderModel> model_;
  std::vector<int> mask_;
  std::optional<rnn::HiddenState> state_;
};

// ---------------------------------------------------------------------------
// Decision scaling. Decisions are the setpoints mapped to [0,1], step-major.

inline Vec to_decision(const std::vector<ControlSetpoints>& traj) {
  const auto& r = setpoint_ranges();
  Vec x(static_cast<Eigen::Index>(traj.size()) * kNumSetpoints);
  for (std::size_t k = 0; k < traj.size(); ++k) {
    const auto v = traj[k].to_vector();
    for (int j = 0; j < kNumSetpoints; ++j)
      x[static_cast<Eigen::Index>(k) * kNumSetpoints + j] = (v[j] - r[j].lo) / r[j].width();
  }
  return x;
}

// Exact on the box faces; the coupling is restored by projection.
inline std::vector<ControlSetpoints> from_decision(const Vec& x) {
  const auto& r = setpoint_ranges();
  std::vector<ControlSetpoints> traj(static_cast<std::size_t>(x.size() / kNumSetpoints));
  for (std::size_t k = 0; k < traj.size(); ++k) {
    Vec v(kNumSetpoints);
    for (int j = 0; j < kNumSetpoints; ++j) {
      const double a = x[static_cast<Eigen::Index>(k) * kNumSetpoints + j];
      v[j] = a <= 0.0 ? r[j].lo : a >= 1.0 ? r[j].hi : r[j].lo + a * r[j].width();
    }
    traj[k] = ControlSetpoints::from_vector(v).projected();
  }
  return traj;
}

inline Mat input_matrix(const std::vector<ControlSetpoints>& traj, const std::vector<WeatherSample>& weather) {
  require(traj.size() == weather.size(), "input matrix: setpoints and weather must align");
  Mat u(static_cast<Eigen::Index>(traj.size()), kModelInputs);
  for (std::size_t k = 0; k < traj.size(); ++k) u.row(static_cast<Eigen::Index>(k)) = input_vector(traj[k], weather[k]).transpose();
  return u;
}

// ---------------------------------------------------------------------------
// Warm start.

inline ControlSetpoints mid_range() {
  const auto& r = setpoint_ranges();
  Vec v(kNumSetpoints);
  for (int j = 0; j < kNumSetpoints; ++j) v[j] = r[j].mid();
  return ControlSetpoints::from_vector(v).projected();
}

/// Drops the first step and repeats the last (before smoothing).
inline std::vector<ControlSetpoints> shift(const std::vector<ControlSetpoints>& prev) {
  require(!prev.empty(), "shift: trajectory must be non-empty");
  std::vector<ControlSetpoints> out(prev.begin() + 1, prev.end());
  out.push_back(prev.back());
  return out;
}

/// Centred moving average; the window is truncated at both ends.
inline std::vector<ControlSetpoints> smooth(const std::vector<ControlSetpoints>& traj, int window) {
  require(window >= 1 && window % 2 == 1, "smooth: window must be a positive odd number");
  const int H = static_cast<int>(traj.size()), half = window / 2;
  std::vector<ControlSetpoints> out(traj.size());
  for (int k = 0; k < H; ++k) {
    Vec acc = Vec::Zero(kNumSetpoints);
    int n = 0;
    for (int j = std::max(0, k - half); j <= std::min(H - 1, k + half); ++j, ++n) acc += traj[j].to_vector();
    out[k] = ControlSetpoints::from_vector(acc / n);
  }
  return out;
}

/// Shifted, smoothed and projected previous solution; mid-range when absent.
inline std::vector<ControlSetpoints> warm_start(const std::vector<ControlSetpoints>& prev, int H, int window = 3) {
  require(H >= 1, "warm_start: horizon must be positive");
  if (prev.empty()) return std::vector<ControlSetpoints>(H, mid_range());
  require(static_cast<int>(prev.size()) == H, "warm_start: previous solution has a different horizon");
  auto out = smooth(shift(prev), window);
  for (auto& sp : out) sp = sp.projected();
  return out;
}

// ---------------------------------------------------------------------------
// Controller.

struct MpcConfig {
  int horizon = 24;
  int smoothing_window = 3;
  double rho = 10.0;
  sqp::SqpConfig sqp;

  void validate() const {
    require(horizon >= 1 && horizon <= 144, "mpc: horizon must lie in [1, 144]");
    require(smoothing_window >= 1 && smoothing_window % 2 == 1, "mpc: smoothing window must be odd");
    require(rho > 0.0, "mpc: penalty must be positive");
    sqp.validate();
  }
};

/// Exogenous forecast over the horizon (perfect foresight).
struct Forecast {
  std::vector<WeatherSample> weather;
  Vec p_app;   // appliance load
  Vec p_prod;  // PV production
};

inline Forecast make_forecast(const WeatherSeries& weather, Timestamp t, int H, const PlantConfig& cfg) {
  Forecast f;
  f.p_app.resize(H);
  f.p_prod.resize(H);
  for (int k = 0; k < H; ++k) {
    const Timestamp tk = t.plus_minutes(k * cfg.control_period);
    f.weather.push_back(weather.at(tk));
    f.p_app[k] = occupancy_load(tk);
    f.p_prod[k] = pv_power(f.weather.back(), cfg);
  }
  return f;
}

/// The NLP of one control step. Objective and constraint callbacks share one
/// prediction per decision vector.
class StepProblem {
 public:
  StepProblem(Predictor& predictor, Forecast forecast, double rho)
      : predictor_(predictor), forecast_(std::move(forecast)), rho_(rho) {
    H_ = static_cast<int>(forecast_.weather.size());
    require(H_ >= 1 && forecast_.p_app.size() == H_ && forecast_.p_prod.size() == H_, "mpc: malformed forecast");
  }

  int horizon() const { return H_; }

  sqp::NlpProblem nlp() {
    const auto& r = setpoint_ranges();
    sqp::NlpProblem p;
    p.dim = H_ * kNumSetpoints;
    p.lower = Vec::Zero(p.dim);
    p.upper = Vec::Ones(p.dim);
    p.rho = rho_;
    // tank - (hp - gap) <= 0 in scaled units.
    p.hard_A = Mat::Zero(static_cast<Eigen::Index>(H_) * kTanks, p.dim);
    p.hard_b = Vec::Constant(static_cast<Eigen::Index>(H_) * kTanks, r[0].lo - kTankSupplyGap - r[1].lo);
    for (int k = 0; k < H_; ++k)
      for (int i = 0; i < kTanks; ++i) {
        p.hard_A(k * kTanks + i, k * kNumSetpoints + 1 + i) = r[1 + i].width();
        p.hard_A(k * kTanks + i, k * kNumSetpoints) = -r[0].width();
      }
    p.objective = [this](const Vec& x, Vec* grad) { return objective_at(x, grad); };
    p.constraints = [this](const Vec& x, Mat* jac) { return comfort_at(x, jac); };
    return p;
  }

  const Prediction& prediction(const Vec& x, bool derivatives) {
    if (cache_x_.size() == x.size() && cache_x_ == x && (cache_derivs_ || !derivatives)) return cache_;
    const Mat u = input_matrix(from_decision(x), forecast_.weather);
    cache_ = predictor_.predict(u, derivatives);
    if (!cache_.temps.allFinite() || !cache_.power.allFinite())
      throw NumericalError("mpc: predictor returned non-finite values");
    if (derivatives) {
      // Chain rule through the decision scaling.
      const auto& r = setpoint_ranges();
      for (Eigen::Index c = 0; c < cache_.d_temps.cols(); ++c) {
        const double w = r[c % kNumSetpoints].width();
        cache_.d_temps.col(c) *= w;
        cache_.d_power.col(c) *= w;
      }
    }
    cache_x_ = x;
    cache_derivs_ = derivatives;
    return cache_;
  }

  double objective_at(const Vec& x, Vec* grad) {
    const Prediction& p = prediction(x, grad != nullptr);
    const Vec resid = p.power + forecast_.p_app - forecast_.p_prod;
    if (grad) {
      // Subgradient of |.|; zero at the kink.
      const Vec sgn = resid.unaryExpr([](double v) { return double((v > 0.0) - (v < 0.0)); });
      *grad = p.d_power.transpose() * sgn;
    }
    return resid.cwiseAbs().sum();
  }

  // Comfort rows of the constraint vector (the box and coupling rows are
  // handled exactly by the solver).
  Vec comfort_at(const Vec& x, Mat* jac) {
    const Prediction& p = prediction(x, jac != nullptr);
    const Eigen::Index nz = p.temps.cols();
    Vec g(2 * nz * H_);
    if (jac) jac->resize(g.size(), x.size());
    for (int k = 0; k < H_; ++k)
      for (Eigen::Index z = 0; z < nz; ++z) {
        const Eigen::Index r = 2 * (k * nz + z);
        g[r] = p.temps(k, z) - kComfortHi;
        g[r + 1] = kComfortLo - p.temps(k, z);
        if (jac) {
          jac->row(r) = p.d_temps.row(k * nz + z);
          jac->row(r + 1) = -p.d_temps.row(k * nz + z);
        }
      }
    return g;
  }

  const Forecast& forecast() const { return forecast_; }

 private:
  Predictor& predictor_;
  Forecast forecast_;
  double rho_;
  int H_ = 0;
  Vec cache_x_;
  bool cache_derivs_ = false;
  Prediction cache_;
};

struct StepOutcome {
  ControlSetpoints applied;
  std::vector<ControlSetpoints> trajectory;  // full solution, for warm starting
  sqp::SqpResult result;
  double objective = 0.0;  // re-evaluated on the applied trajectory
  double solve_seconds = 0.0;
  std::string termination;  // solver termination, or "fallback"
  bool fallback = false;
  std::string error;
};

/// One receding-horizon step. On any failure the previous setpoints are
/// applied and the outcome is flagged.
inline StepOutcome mpc_step(Predictor& predictor, const Mat& u_hist, const Mat& y_hist, const Mat& z_hist,
                            const Forecast& forecast, const std::vector<ControlSetpoints>& previous_solution,
                            const ControlSetpoints& previous_applied, const MpcConfig& cfg) {
  cfg.validate();
  require(static_cast<int>(forecast.weather.size()) == cfg.horizon, "mpc_step: forecast length must equal H");
  StepOutcome out;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    predictor.initialize(u_hist, y_hist, z_hist);
    StepProblem problem(predictor, forecast, cfg.rho);
    const auto start = warm_start(previous_solution, cfg.horizon, cfg.smoothing_window);
    out.result = sqp::solve(problem.nlp(), to_decision(start), cfg.sqp);
    out.trajectory = from_decision(out.result.x);
    out.applied = out.trajectory.front();
    out.objective = problem.objective_at(out.result.x, nullptr);
    out.termination = sqp::to_string(out.result.termination);
  } catch (const Error& e) {
    out.fallback = true;
    out.error = e.what();
    out.applied = previous_applied.projected();
    out.trajectory.clear();
    out.termination = "fallback";
  }
  out.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.applied.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Rule-based baselines.

struct RuleBasedConfig {
  double zone_sp = 20.0;
  double tank_sp = 40.0;
  // Heating curve through (t_cold, hp_cold) and (t_warm, hp_warm).
  double t_cold = -5.0, hp_cold = 55.0;
  double t_warm = 15.0, hp_warm = 40.0;

  std::string name() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "RB %g", zone_sp);
    return buf;
  }
};

inline std::vector<RuleBasedConfig> standard_rule_based() {
  return {{19.0}, {19.5}, {20.0}, {21.0}};
}

inline double heating_curve(double t_out, const RuleBasedConfig& cfg) {
  const double s = (t_out - cfg.t_cold) / (cfg.t_warm - cfg.t_cold);
  return kHpSupplyRange.clamp(cfg.hp_cold + s * (cfg.hp_warm - cfg.hp_cold));
}

inline ControlSetpoints rule_based_step(double t_out, const RuleBasedConfig& cfg) {
  require(std::isfinite(t_out), "rule_based_step: outdoor temperature must be finite");
  ControlSetpoints sp;
  sp.hp_supply = heating_curve(t_out, cfg);
  // The tank setpoint yields to the supply/tank gap when the curve is low.
  sp.tank_sp.fill(std::min(kTankRange.clamp(cfg.tank_sp), sp.hp_supply - kTankSupplyGap));
  sp.zone_sp.fill(kZoneRange.clamp(cfg.zone_sp));
  sp.validate();
  return sp;
}

// ---------------------------------------------------------------------------
// Episodes.

struct EpisodeStep {
  Timestamp timestamp;
  ControlSetpoints applied;
  double objective = 0.0;
  double violation = 0.0;
  double solve_seconds = 0.0;
  std::string termination;
  bool merit_monotone = true;
  int sqp_iterations = 0;
};

struct Episode {
  std::string controller;
  Trace trace;                     // controlled period only
  std::vector<EpisodeStep> steps;  // aligned with trace rows
};

struct EpisodeSetup {
  PlantState initial;      // state at the end of the warm-up
  Trace warmup;            // history available to the predictors
  int steps = 14 * 96;
};

/// Runs the plant with RB 20 for `warmup_steps` to produce identical
/// predictor histories for every controller.
inline EpisodeSetup prepare_episode(const PlantConfig& cfg, const WeatherSeries& weather, Timestamp start,
                                    int warmup_steps, int steps, double t_zone0 = 20.5, double t_tank0 = 42.0) {
  require(warmup_steps >= 1 && steps >= 1, "episode: warm-up and length must be positive");
  EpisodeSetup s;
  s.steps = steps;
  PlantState st = PlantState::uniform(cfg, t_zone0, t_tank0, start);
  const RuleBasedConfig rb{20.0};
  for (int k = 0; k < warmup_steps; ++k) {
    const WeatherSample& w = weather.at(st.clock);
    const ControlSetpoints sp = rule_based_step(w.t_out, rb);
    const Timestamp t = st.clock;
    auto [next, out] = step(st, sp, w, cfg);
    st = std::move(next);
    s.warmup.rows.push_back({t, sp, w, std::move(out)});
  }
  s.initial = st;
  return s;
}

inline Episode run_rule_based(const EpisodeSetup& setup, const WeatherSeries& weather, const PlantConfig& cfg,
                              const RuleBasedConfig& rb) {
  Episode ep;
  ep.controller = rb.name();
  PlantState st = setup.initial;
  for (int k = 0; k < setup.steps; ++k) {
    const WeatherSample& w = weather.at(st.clock);
    const ControlSetpoints sp = rule_based_step(w.t_out, rb);
    const Timestamp t = st.clock;
    auto [next, out] = step(st, sp, w, cfg);
    st = std::move(next);
    ep.trace.rows.push_back({t, sp, w, std::move(out)});
    ep.steps.push_back({t, sp, 0.0, 0.0, 0.0, "rule", true, 0});
  }
  return ep;
}

/// Closed-loop MPC episode. `on_step` (optional) observes each step.
inline Episode run_mpc(const EpisodeSetup& setup, const WeatherSeries& weather, const PlantConfig& cfg,
                       Predictor& predictor, const MpcConfig& mcfg, const std::string& name,
                       const std::function<void(int, const StepOutcome&)>& on_step = {}) {
  mcfg.validate();
  const auto need = static_cast<std::size_t>(predictor.history_required());
  require(setup.warmup.size() >= need, "mpc episode: warm-up shorter than the predictor history");
  Episode ep;
  ep.controller = name;
  // Sliding window of the most recent `need` periods.
  Trace hist;
  hist.rows.assign(setup.warmup.rows.end() - static_cast<std::ptrdiff_t>(need), setup.warmup.rows.end());
  PlantState st = setup.initial;
  std::vector<ControlSetpoints> prev_solution;
  ControlSetpoints prev_applied = hist.rows.back().sp;
  for (int k = 0; k < setup.steps; ++k) {
    const Forecast fc = make_forecast(weather, st.clock, mcfg.horizon, cfg);
    StepOutcome o = mpc_step(predictor, hist.inputs(), hist.temps(), hist.thermal_power(), fc, prev_solution,
                             prev_applied, mcfg);
    if (on_step) on_step(k, o);
    const WeatherSample& w = weather.at(st.clock);
    const Timestamp t = st.clock;
    auto [next, out] = step(st, o.applied, w, cfg);
    st = std::move(next);
    TraceRow row{t, o.applied, w, std::move(out)};
    hist.rows.erase(hist.rows.begin());
    hist.rows.push_back(row);
    ep.trace.rows.push_back(std::move(row));
    ep.steps.push_back({t, o.applied, o.objective, o.fallback ? 0.0 : o.result.violation, o.solve_seconds,
                        o.termination, o.fallback || o.result.merit_monotone, o.result.iterations});
    prev_solution = o.trajectory;
    prev_applied = o.applied;
  }
  return ep;
}

}  // namespace bldgmpc::mpc
