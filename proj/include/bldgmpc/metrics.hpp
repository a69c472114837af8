#pragma once

// Control-performance metrics and sliding-window forecast scoring.

#include "bldgmpc/mpc.hpp"

#include <string>
#include <vector>

namespace bldgmpc::eval {

struct ControlMetrics {
  double p_mean = 0.0;     // mean |P_el - P_prod|, kW
  double p_th = 0.0;       // mean thermal electric power, kW
  double c_mean = 0.0;     // time-mean of room-summed comfort violation, degC
  double delta = 0.0;      // mean violation per violating sample, degC
  long n = 0;
  long n_out = 0;
};

// How N_out is counted: time samples with any room outside the band, or
// individual (sample, room) pairs.
enum class ViolationCount { kSample, kRoom };

inline ViolationCount parse_violation_count(const std::string& s) {
  if (s == "sample") return ViolationCount::kSample;
  if (s == "room") return ViolationCount::kRoom;
  throw InvalidInput("violation count mode must be 'sample' or 'room', got '" + s + "'");
}

/// `temps` is N x rooms. Delta is defined as 0 when N_out = 0.
inline ControlMetrics control_metrics(const Mat& temps, const Vec& p_el, const Vec& p_prod, const Vec& p_th,
                                      double lo = mpc::kComfortLo, double hi = mpc::kComfortHi,
                                      ViolationCount count = ViolationCount::kSample) {
  const Eigen::Index N = temps.rows();
  require(N >= 1, "control metrics: need at least one sample");
  require(p_el.size() == N && p_prod.size() == N && p_th.size() == N, "control metrics: series are misaligned");
  ControlMetrics m;
  m.n = N;
  double viol = 0.0;
  for (Eigen::Index k = 0; k < N; ++k) {
    double v = 0.0;
    long rooms_out = 0;
    for (Eigen::Index r = 0; r < temps.cols(); ++r) {
      const double t = temps(k, r);
      const double e = t > hi ? t - hi : (t < lo ? lo - t : 0.0);
      if (e > 0.0) ++rooms_out;
      v += e;
    }
    m.n_out += count == ViolationCount::kRoom ? rooms_out : (rooms_out > 0);
    viol += v;
  }
  m.p_mean = (p_el - p_prod).cwiseAbs().mean();
  m.p_th = p_th.mean();
  m.c_mean = viol / static_cast<double>(N);
  m.delta = m.n_out > 0 ? static_cast<double>(N) / static_cast<double>(m.n_out) * m.c_mean : 0.0;
  return m;
}

inline ControlMetrics control_metrics(const Trace& trace, ViolationCount count = ViolationCount::kSample) {
  require(!trace.empty(), "control metrics: empty trace");
  const auto N = static_cast<Eigen::Index>(trace.size());
  Vec p_el(N), p_prod(N), p_th(N);
  for (Eigen::Index k = 0; k < N; ++k) {
    const auto& o = trace.rows[static_cast<std::size_t>(k)].out;
    p_el[k] = o.p_el_thermal + o.p_el_appliances;
    p_prod[k] = o.p_pv;
    p_th[k] = o.p_el_thermal;
  }
  return control_metrics(trace.temps(), p_el, p_prod, p_th, mpc::kComfortLo, mpc::kComfortHi, count);
}

// ---------------------------------------------------------------------------

inline double mae(const Mat& pred, const Mat& obs) {
  require(pred.rows() == obs.rows() && pred.cols() == obs.cols() && pred.size() > 0, "mae: shapes differ");
  return (pred - obs).cwiseAbs().mean();
}

/// 2/N sum |p - o| / (|p| + |o|), with 0/0 taken as 0.
inline double smrae(const Mat& pred, const Mat& obs) {
  require(pred.rows() == obs.rows() && pred.cols() == obs.cols() && pred.size() > 0, "smrae: shapes differ");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) {
    const double p = pred.reshaped()[i], o = obs.reshaped()[i];
    const double den = std::abs(p) + std::abs(o);
    if (den > 0.0) acc += std::abs(p - o) / den;
  }
  return 2.0 * acc / static_cast<double>(pred.size());
}

struct ForecastMetrics {
  int m = 0;                 // window length
  int windows = 0;
  double days = 0.0;         // evaluated span
  double mae_temp = 0.0, mae_power = 0.0;
  double smrae_temp = 0.0, smrae_power = 0.0;
  Vec abs_err_temp;          // per-point |error| over all windows and rooms
};

/// Non-overlapping windows of length m tile [first, first + windows*m); each
/// is initialised from the rows before it and predicted open loop.
inline ForecastMetrics forecast_eval(mpc::Predictor& model, const Trace& data, int m, int first = -1) {
  require(m >= 1, "forecast_eval: window length must be positive");
  const int hist = model.history_required();
  if (first < 0) first = hist;
  require(first >= hist, "forecast_eval: first window needs a full history");
  const int windows = (static_cast<int>(data.size()) - first) / m;
  if (windows < 1) throw InvalidInput("forecast_eval: insufficient data for one window");
  const int nz = model.zones();
  Mat pt(static_cast<Eigen::Index>(windows) * m, nz), ot(pt.rows(), nz);
  Mat pp(pt.rows(), 1), op(pt.rows(), 1);
  const Mat u = data.inputs(), y = data.temps(), z = data.thermal_power();
  for (int w = 0; w < windows; ++w) {
    const int t = first + w * m;
    model.initialize(u.middleRows(t - hist, hist), y.middleRows(t - hist, hist), z.middleRows(t - hist, hist));
    const mpc::Prediction p = model.predict(u.middleRows(t, m), false);
    pt.middleRows(static_cast<Eigen::Index>(w) * m, m) = p.temps;
    pp.middleRows(static_cast<Eigen::Index>(w) * m, m) = p.power;
    ot.middleRows(static_cast<Eigen::Index>(w) * m, m) = y.middleRows(t, m);
    op.middleRows(static_cast<Eigen::Index>(w) * m, m) = z.middleRows(t, m);
  }
  ForecastMetrics r;
  r.m = m;
  r.windows = windows;
  r.days = static_cast<double>(windows) * m / 96.0;
  r.mae_temp = mae(pt, ot);
  r.mae_power = mae(pp, op);
  r.smrae_temp = smrae(pt, ot);
  r.smrae_power = smrae(pp, op);
  r.abs_err_temp = (pt - ot).cwiseAbs().reshaped();
  return r;
}

}  // namespace bldgmpc::eval
