#pragma once

// Closed-form plumbing around the plant: simulating setpoint schedules into
// traces and turning traces into aligned (u, y, z) identification data.

#include "bldgmpc/plant.hpp"

#include <algorithm>
#include <vector>

namespace bldgmpc {

// Model input layout: the nine setpoints followed by the weather channels.
inline constexpr int kWeatherChannels = 3;  // ghi, t_out, rel_humidity
inline constexpr int kModelInputs = kNumSetpoints + kWeatherChannels;

inline Vec input_vector(const ControlSetpoints& sp, const WeatherSample& w) {
  Vec u(kModelInputs);
  u.head(kNumSetpoints) = sp.to_vector();
  u[kNumSetpoints] = w.ghi;
  u[kNumSetpoints + 1] = w.t_out;
  u[kNumSetpoints + 2] = w.rel_humidity;
  return u;
}

/// One control period: setpoints applied during it, weather at its start,
/// and the plant response (temperatures at its end, mean powers over it).
struct TraceRow {
  Timestamp timestamp;
  ControlSetpoints sp;
  WeatherSample weather;
  PlantOutput out;
};

struct Trace {
  std::vector<TraceRow> rows;

  std::size_t size() const { return rows.size(); }
  bool empty() const { return rows.empty(); }

  Mat inputs(std::size_t first = 0, std::size_t count = static_cast<std::size_t>(-1)) const {
    count = std::min(count, rows.size() - first);
    Mat u(static_cast<Eigen::Index>(count), kModelInputs);
    for (std::size_t k = 0; k < count; ++k)
      u.row(static_cast<Eigen::Index>(k)) = input_vector(rows[first + k].sp, rows[first + k].weather).transpose();
    return u;
  }

  Mat temps(std::size_t first = 0, std::size_t count = static_cast<std::size_t>(-1)) const {
    count = std::min(count, rows.size() - first);
    const Eigen::Index nz = count ? rows[first].out.t_air.size() : 0;
    Mat y(static_cast<Eigen::Index>(count), nz);
    for (std::size_t k = 0; k < count; ++k) y.row(static_cast<Eigen::Index>(k)) = rows[first + k].out.t_air.transpose();
    return y;
  }

  Mat thermal_power(std::size_t first = 0, std::size_t count = static_cast<std::size_t>(-1)) const {
    count = std::min(count, rows.size() - first);
    Mat z(static_cast<Eigen::Index>(count), 1);
    for (std::size_t k = 0; k < count; ++k) z(static_cast<Eigen::Index>(k), 0) = rows[first + k].out.p_el_thermal;
    return z;
  }

  void append(const Trace& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }
};

/// Weather looked up by timestamp on a regular grid.
struct WeatherSeries {
  std::vector<WeatherSample> samples;
  double step_minutes = 15.0;

  Timestamp start() const {
    require(!samples.empty(), "weather series is empty");
    return samples.front().timestamp;
  }

  std::size_t index_of(Timestamp t) const {
    const std::int64_t step = static_cast<std::int64_t>(std::llround(step_minutes * 60.0));
    const std::int64_t offset = t.seconds - start().seconds;
    require(offset >= 0 && offset % step == 0, "weather: timestamp " + t.to_string() + " not on the series grid");
    const auto idx = static_cast<std::size_t>(offset / step);
    require(idx < samples.size(), "weather: timestamp " + t.to_string() + " beyond the end of the series");
    return idx;
  }

  const WeatherSample& at(Timestamp t) const { return samples[index_of(t)]; }
};

/// Runs the plant through a setpoint schedule, consuming weather on the
/// plant clock. `state` is advanced in place.
inline Trace simulate(PlantState& state, const std::vector<ControlSetpoints>& schedule, const WeatherSeries& weather,
                      const PlantConfig& cfg) {
  Trace trace;
  trace.rows.reserve(schedule.size());
  for (const auto& sp : schedule) {
    const WeatherSample& w = weather.at(state.clock);
    const Timestamp t = state.clock;
    auto [next, out] = step(state, sp, w, cfg);
    state = std::move(next);
    trace.rows.push_back({t, sp, w, std::move(out)});
  }
  return trace;
}

}  // namespace bldgmpc
