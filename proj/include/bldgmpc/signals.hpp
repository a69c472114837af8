#pragma once

// Setpoint excitation for identification and validation, plus a seeded
// synthetic weather generator for a Barcelona-like climate.

#include "bldgmpc/plant.hpp"

#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace bldgmpc::signals {

enum class ExcitationKind { kMultisine, kPiecewiseConstant, kSinusoidal, kSquare, kTriangular, kMixed };

inline std::string to_string(ExcitationKind k) {
  switch (k) {
    case ExcitationKind::kMultisine: return "multisine";
    case ExcitationKind::kPiecewiseConstant: return "piecewise-constant";
    case ExcitationKind::kSinusoidal: return "sinusoidal";
    case ExcitationKind::kSquare: return "square";
    case ExcitationKind::kTriangular: return "triangular";
    case ExcitationKind::kMixed: return "mixed";
  }
  return "unknown";
}

inline ExcitationKind parse_kind(const std::string& s) {
  for (auto k : {ExcitationKind::kMultisine, ExcitationKind::kPiecewiseConstant, ExcitationKind::kSinusoidal,
                 ExcitationKind::kSquare, ExcitationKind::kTriangular, ExcitationKind::kMixed})
    if (to_string(k) == s) return k;
  throw InvalidInput("unknown excitation kind '" + s + "'");
}

struct ExcitationSpec {
  ExcitationKind kind = ExcitationKind::kMultisine;
  std::uint64_t seed = 1;
  double step_minutes = 15.0;
  Timestamp start{};

  // Amplitude ranges per setpoint group; must lie inside the admissible boxes.
  SetpointRange hp_supply = kHpSupplyRange;
  SetpointRange tank = kTankRange;
  SetpointRange zone = kZoneRange;

  // Multisine.
  int tones = 8;
  double band_lo_per_hour = 1.0 / 24.0;
  double band_hi_per_hour = 1.0;

  // Piecewise-constant.
  double mean_dwell_hours = 6.0;

  // Periodic waveforms: period drawn per segment in [min, max].
  double min_period_hours = 2.0;
  double max_period_hours = 24.0;
  double segment_hours = 24.0;

  void validate() const {
    auto inside = [](const SetpointRange& r, const SetpointRange& box) {
      return std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi && r.lo >= box.lo && r.hi <= box.hi;
    };
    require(inside(hp_supply, kHpSupplyRange), "excitation: hp_supply range infeasible");
    require(inside(tank, kTankRange), "excitation: tank range infeasible");
    require(inside(zone, kZoneRange), "excitation: zone range infeasible");
    // The tank range must leave room below the supply range for the coupling.
    require(tank.lo <= hp_supply.hi - kTankSupplyGap, "excitation: tank range cannot satisfy supply coupling");
    require(step_minutes > 0.0, "excitation: step must be > 0");
    require(tones >= 0, "excitation: tones must be >= 0");
    require(band_lo_per_hour > 0.0 && band_lo_per_hour <= band_hi_per_hour, "excitation: invalid band");
    require(mean_dwell_hours > 0.0, "excitation: mean dwell must be > 0");
    require(min_period_hours > 0.0 && min_period_hours <= max_period_hours, "excitation: invalid periods");
    require(segment_hours > 0.0, "excitation: segment length must be > 0");
  }
};

namespace detail {

// Random-phase multisine on exact DFT bins of the horizon, affinely mapped to [0,1].
// Channels interleave on a shared log-spaced grid (channel c takes every
// `channels`-th bin from c) so no two channels share a frequency.
inline std::vector<double> multisine_unit(const ExcitationSpec& spec, int n, std::mt19937_64& rng, int channel = 0,
                                          int channels = 1) {
  std::vector<double> x(n, 0.5);
  if (spec.tones == 0 || n < 2) return x;
  const double hours = n * spec.step_minutes / 60.0;
  // Bin k has frequency k / hours (cycles per hour).
  int k_lo = static_cast<int>(std::ceil(spec.band_lo_per_hour * hours - 1e-9));
  int k_hi = static_cast<int>(std::floor(spec.band_hi_per_hour * hours + 1e-9));
  k_lo = std::max(k_lo, 1);
  k_hi = std::min(k_hi, (n - 1) / 2);
  if (k_hi < k_lo) return x;
  std::vector<int> grid;
  const int wanted = spec.tones * channels;
  const int available = k_hi - k_lo + 1;
  if (available <= wanted) {
    for (int k = k_lo; k <= k_hi; ++k) grid.push_back(k);
  } else {
    // Log-spaced selection so slow and fast dynamics are both excited.
    for (int t = 0; t < wanted; ++t) {
      const double frac = wanted == 1 ? 0.0 : static_cast<double>(t) / (wanted - 1);
      int k = static_cast<int>(std::lround(k_lo * std::pow(static_cast<double>(k_hi) / k_lo, frac)));
      if (!grid.empty() && k <= grid.back()) k = grid.back() + 1;
      if (k > k_hi) break;
      grid.push_back(k);
    }
  }
  std::vector<int> bins;
  for (std::size_t g = static_cast<std::size_t>(channel); g < grid.size(); g += static_cast<std::size_t>(channels))
    bins.push_back(grid[g]);
  if (bins.empty()) return x;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::vector<double> phases(bins.size());
  for (auto& p : phases) p = phase(rng);
  double lo = 1e300, hi = -1e300;
  for (int t = 0; t < n; ++t) {
    double v = 0.0;
    for (std::size_t b = 0; b < bins.size(); ++b)
      v += std::cos(2.0 * std::numbers::pi * bins[b] * t / n + phases[b]);
    x[t] = v;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  for (auto& v : x) v = span > 0.0 ? (v - lo) / span : 0.5;
  return x;
}

inline std::vector<double> piecewise_unit(const ExcitationSpec& spec, int n, std::mt19937_64& rng) {
  std::vector<double> x(n);
  const double steps_per_dwell = spec.mean_dwell_hours * 60.0 / spec.step_minutes;
  std::bernoulli_distribution change(std::min(1.0, 1.0 / std::max(steps_per_dwell, 1.0)));
  std::uniform_real_distribution<double> level(0.0, 1.0);
  double current = level(rng);
  for (int t = 0; t < n; ++t) {
    if (t > 0 && change(rng)) current = level(rng);
    x[t] = current;
  }
  return x;
}

inline double waveform(ExcitationKind kind, double phase01) {
  switch (kind) {
    case ExcitationKind::kSquare: return phase01 < 0.5 ? 1.0 : 0.0;
    case ExcitationKind::kTriangular: return phase01 < 0.5 ? 2.0 * phase01 : 2.0 - 2.0 * phase01;
    default: return 0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * phase01);
  }
}

// Periodic waveform whose period, amplitude, offset (and for kMixed, shape)
// are redrawn every segment. Phase is continuous across segment boundaries.
inline std::vector<double> periodic_unit(const ExcitationSpec& spec, int n, std::mt19937_64& rng) {
  std::vector<double> x(n);
  const int seg_steps = std::max(1, static_cast<int>(std::lround(spec.segment_hours * 60.0 / spec.step_minutes)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> shape(0, 2);
  const ExcitationKind shapes[3] = {ExcitationKind::kSinusoidal, ExcitationKind::kSquare,
                                    ExcitationKind::kTriangular};
  double phase = unit(rng);
  ExcitationKind kind = spec.kind;
  double period_steps = 1.0, amp = 1.0, offset = 0.0;
  for (int t = 0; t < n; ++t) {
    if (t % seg_steps == 0) {
      const double lp = std::log(spec.min_period_hours), hp = std::log(spec.max_period_hours);
      period_steps = std::exp(lp + (hp - lp) * unit(rng)) * 60.0 / spec.step_minutes;
      amp = 0.4 + 0.6 * unit(rng);
      offset = (1.0 - amp) * unit(rng);
      if (spec.kind == ExcitationKind::kMixed) kind = shapes[shape(rng)];
    }
    x[t] = offset + amp * waveform(kind, phase);
    phase += 1.0 / period_steps;
    phase -= std::floor(phase);
  }
  return x;
}

inline std::vector<double> unit_channel(const ExcitationSpec& spec, int n, std::uint64_t channel_seed, int channel) {
  std::mt19937_64 rng(channel_seed);
  switch (spec.kind) {
    case ExcitationKind::kMultisine: return multisine_unit(spec, n, rng, channel, kNumSetpoints);
    case ExcitationKind::kPiecewiseConstant: return piecewise_unit(spec, n, rng);
    default: return periodic_unit(spec, n, rng);
  }
}

}  // namespace detail

/// Generates `horizon` setpoint vectors. Each of the nine channels is an
/// independent unit signal mapped into its amplitude range; tank setpoints are
/// then capped at hp_supply - 5 so every sample is admissible.
inline std::vector<ControlSetpoints> generate(const ExcitationSpec& spec, int horizon) {
  spec.validate();
  require(horizon >= 0, "excitation: horizon must be >= 0");
  std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(spec.kind), std::uint64_t{0x5e7b01}};
  std::vector<std::uint64_t> channel_seeds(kNumSetpoints);
  {
    std::vector<std::uint32_t> raw(2 * kNumSetpoints);
    seq.generate(raw.begin(), raw.end());
    for (int c = 0; c < kNumSetpoints; ++c)
      channel_seeds[c] = (static_cast<std::uint64_t>(raw[2 * c]) << 32) | raw[2 * c + 1];
  }
  std::vector<std::vector<double>> unit(kNumSetpoints);
  for (int c = 0; c < kNumSetpoints; ++c) unit[c] = detail::unit_channel(spec, horizon, channel_seeds[c], c);

  std::vector<ControlSetpoints> out(horizon);
  for (int t = 0; t < horizon; ++t) {
    ControlSetpoints& sp = out[t];
    sp.hp_supply = spec.hp_supply.lo + spec.hp_supply.width() * unit[0][t];
    for (int i = 0; i < kTanks; ++i)
      sp.tank_sp[i] = std::min(spec.tank.lo + spec.tank.width() * unit[1 + i][t], sp.hp_supply - kTankSupplyGap);
    for (int i = 0; i < kApartments; ++i)
      sp.zone_sp[i] = spec.zone.lo + spec.zone.width() * unit[1 + kTanks + i][t];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic weather.

struct WeatherSpec {
  Timestamp start = Timestamp::from_day(0);
  double step_minutes = 15.0;
  // Seasonal mean: mean - amplitude * cos(2 pi (doy - coldest_day) / 365).
  double annual_mean = 15.5;
  double seasonal_amplitude = 6.5;
  double coldest_day = 20.0;
  double diurnal_amplitude = 4.0;   // half peak-to-peak, max at 15:00
  double day_noise_std = 2.2;       // AR(1) day-level anomaly
  double day_noise_corr = 0.7;
  double hour_noise_std = 0.3;
  double latitude_deg = 41.39;
};

/// Diurnal sinusoid + seasonal trend + seeded noise for temperature; Haurwitz
/// clear-sky GHI scaled by seeded cloudiness; humidity anti-correlated with the
/// diurnal cycle. Samples are at `step_minutes` spacing from `start`.
inline std::vector<WeatherSample> synth_weather(int days, std::uint64_t seed, const WeatherSpec& spec = {}) {
  require(days >= 1, "synth_weather: days must be >= 1");
  require(spec.step_minutes > 0.0, "synth_weather: step must be > 0");
  std::mt19937_64 rng(seed ^ 0x77e47e4ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int per_day = static_cast<int>(std::lround(24.0 * 60.0 / spec.step_minutes));
  const int n = days * per_day;
  // Per-day draws first so the series is stable regardless of resolution.
  std::vector<double> anomaly(days + 1), cloud(days + 1);
  double a = 0.0;
  for (int d = 0; d <= days; ++d) {
    a = spec.day_noise_corr * a + std::sqrt(1.0 - spec.day_noise_corr * spec.day_noise_corr) * spec.day_noise_std * gauss(rng);
    anomaly[d] = a;
    const double u = unit(rng);
    cloud[d] = u < 0.55 ? 0.85 + 0.15 * unit(rng) : 0.25 + 0.6 * unit(rng);
  }
  std::vector<WeatherSample> out(n);
  double hour_noise = 0.0;
  for (int k = 0; k < n; ++k) {
    WeatherSample& w = out[k];
    w.timestamp = spec.start.plus_minutes(k * spec.step_minutes);
    const double day_pos = static_cast<double>(k) / per_day;
    const int d = std::min(static_cast<int>(day_pos), days - 1);
    const double frac = day_pos - d;
    const double an = anomaly[d] + (anomaly[d + 1] - anomaly[d]) * frac;
    const double doy = w.timestamp.day_of_year() + w.timestamp.hour_of_day() / 24.0;
    const double seasonal =
        spec.annual_mean - spec.seasonal_amplitude * std::cos(2.0 * std::numbers::pi * (doy - spec.coldest_day) / 365.0);
    const double hour = w.timestamp.hour_of_day();
    const double diurnal = spec.diurnal_amplitude * std::cos(2.0 * std::numbers::pi * (hour - 15.0) / 24.0);
    hour_noise = 0.9 * hour_noise + std::sqrt(1.0 - 0.81) * spec.hour_noise_std * gauss(rng);
    w.t_out = seasonal + diurnal + an + hour_noise;

    const double sin_el = sun_position(w.timestamp, spec.latitude_deg).sin_elevation;
    if (sin_el > 0.0) {
      const double clear = 1098.0 * sin_el * std::exp(-0.057 / sin_el);
      const double flicker = 1.0 - 0.15 * unit(rng) * (1.0 - cloud[d]);
      w.ghi = std::max(0.0, clear * cloud[d] * flicker);
    } else {
      w.ghi = 0.0;
    }
    const double rh = 0.68 - 0.15 * std::cos(2.0 * std::numbers::pi * (hour - 15.0) / 24.0) +
                      0.15 * (1.0 - cloud[d]) + 0.03 * gauss(rng);
    w.rel_humidity = std::clamp(rh, 0.0, 1.0);
  }
  return out;
}

}  // namespace bldgmpc::signals
