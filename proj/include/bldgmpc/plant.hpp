#pragma once

// Surrogate residential building: eight thermal zones (two per apartment)
// modelled as air/wall RC pairs, four single-node hot-water tanks, a
// ground-source heat pump with hysteresis low-level control, and a PV array.
//
// Units: temperatures in degC, powers in kW, capacitances in kWh/K,
// resistances in K/kW, time in minutes unless stated otherwise.

#include "bldgmpc/common.hpp"

#include <algorithm>
#include <array>
#include <numbers>
#include <vector>

namespace bldgmpc {

// Admissible setpoint ranges.
struct SetpointRange {
  double lo;
  double hi;
  double width() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
  bool contains(double v) const { return v >= lo && v <= hi; }
  double clamp(double v) const { return std::clamp(v, lo, hi); }
};

inline constexpr SetpointRange kHpSupplyRange{40.0, 55.0};
inline constexpr SetpointRange kTankRange{35.0, 50.0};
inline constexpr SetpointRange kZoneRange{19.0, 25.0};
// Tank bottom setpoint must stay this far below the heat-pump supply.
inline constexpr double kTankSupplyGap = 5.0;
inline constexpr int kApartments = 4;
inline constexpr int kTanks = 4;
// Number of controllable setpoints: supply, four tanks, four zones.
inline constexpr int kNumSetpoints = 1 + kTanks + kApartments;

struct ControlSetpoints {
  double hp_supply = kHpSupplyRange.lo + 5.0;
  std::array<double, kTanks> tank_sp{40.0, 40.0, 40.0, 40.0};
  std::array<double, kApartments> zone_sp{20.0, 20.0, 20.0, 20.0};

  // Flat layout [hp_supply, tank_1..4, zone_1..4].
  Eigen::Matrix<double, kNumSetpoints, 1> to_vector() const {
    Eigen::Matrix<double, kNumSetpoints, 1> v;
    v[0] = hp_supply;
    for (int i = 0; i < kTanks; ++i) v[1 + i] = tank_sp[i];
    for (int i = 0; i < kApartments; ++i) v[1 + kTanks + i] = zone_sp[i];
    return v;
  }

  static ControlSetpoints from_vector(const Eigen::Ref<const Vec>& v) {
    require(v.size() == kNumSetpoints, "setpoint vector must have 9 entries");
    ControlSetpoints sp;
    sp.hp_supply = v[0];
    for (int i = 0; i < kTanks; ++i) sp.tank_sp[i] = v[1 + i];
    for (int i = 0; i < kApartments; ++i) sp.zone_sp[i] = v[1 + kTanks + i];
    return sp;
  }

  // Returns an empty string when valid, otherwise the first violation.
  std::string violation() const {
    auto fmt = [](const char* name, double v) { return std::string(name) + " = " + std::to_string(v); };
    if (!std::isfinite(hp_supply) || !kHpSupplyRange.contains(hp_supply))
      return fmt("hp_supply outside [40,55]: ", hp_supply);
    for (int i = 0; i < kTanks; ++i) {
      if (!std::isfinite(tank_sp[i]) || !kTankRange.contains(tank_sp[i]))
        return fmt("tank setpoint outside [35,50]: ", tank_sp[i]);
      if (tank_sp[i] > hp_supply - kTankSupplyGap)
        return fmt("tank setpoint above hp_supply - 5: ", tank_sp[i]);
    }
    for (int i = 0; i < kApartments; ++i)
      if (!std::isfinite(zone_sp[i]) || !kZoneRange.contains(zone_sp[i]))
        return fmt("zone setpoint outside [19,25]: ", zone_sp[i]);
    return {};
  }

  bool valid() const { return violation().empty(); }

  void validate() const {
    if (auto v = violation(); !v.empty()) throw InvalidInput("invalid setpoints: " + v);
  }

  // Clamp into the boxes and enforce the tank/supply coupling.
  ControlSetpoints projected() const {
    ControlSetpoints out = *this;
    out.hp_supply = kHpSupplyRange.clamp(hp_supply);
    for (auto& t : out.tank_sp) t = std::min(kTankRange.clamp(t), out.hp_supply - kTankSupplyGap);
    for (auto& z : out.zone_sp) z = kZoneRange.clamp(z);
    return out;
  }

  bool operator==(const ControlSetpoints&) const = default;
};

struct WeatherSample {
  Timestamp timestamp;
  double ghi = 0.0;           // W/m2
  double t_out = 10.0;        // degC
  double rel_humidity = 0.7;  // fraction

  void validate() const {
    require(std::isfinite(ghi) && ghi >= 0.0, "weather: ghi must be finite and >= 0");
    require(std::isfinite(t_out) && t_out > -60.0 && t_out < 60.0, "weather: t_out out of range");
    require(std::isfinite(rel_humidity) && rel_humidity >= 0.0 && rel_humidity <= 1.0,
            "weather: rel_humidity must lie in [0,1]");
  }
};

struct PlantConfig {
  int n_zones = 8;

  // Per-zone envelope parameters; resized by make_default().
  std::vector<double> c_air;        // kWh/K
  std::vector<double> c_wall;       // kWh/K
  std::vector<double> r_air_wall;   // K/kW
  std::vector<double> r_wall_amb;   // K/kW
  std::vector<double> r_air_amb;    // K/kW
  std::vector<double> fc_max;       // kW, fan-coil thermal ceiling
  std::vector<double> fc_conductance;  // kW/K, delivered = k * (supply - t_air)
  std::vector<double> solar_aperture;  // m2 of effective glazing

  double internal_gain_fraction = 0.8;  // share of appliance load released as heat

  // Tanks (identical).
  double c_tank = 0.3;              // kWh/K (~260 l)
  double tank_ua = 0.004;           // kW/K standing loss
  double tank_ambient = 18.0;       // degC
  double tank_coil_conductance = 0.5;  // kW/K
  double tank_coil_max = 4.0;       // kW
  double mains_temp = 12.0;         // degC cold-water inlet
  double dhw_daily_capacity = 0.14; // kWh/K drawn per tank per day

  // Heat pump and distribution.
  double hp_rated_electric = 6.0;   // kW compressor ceiling
  double carnot_efficiency = 0.45;
  double t_source = 12.0;           // ground-source temperature
  double cop_min = 1.5;
  double cop_max = 6.0;
  double pipe_loss_conductance = 0.1;  // kW/K distribution loss while running
  double pipe_ambient = 15.0;
  double hp_aux_power = 0.25;       // kW circulation pumps while running
  double fan_power = 0.03;          // kW per active fan coil
  double hysteresis_band = 0.5;     // degC

  // PV array.
  double pv_peak = 10.8;            // kW at 1000 W/m2 on-plane
  double pv_area = 58.0;            // m2
  double pv_tilt_deg = 40.0;
  double latitude_deg = 41.39;
  double ground_albedo = 0.2;

  double substep = 3.0;             // minutes
  double control_period = 15.0;     // minutes

  static PlantConfig make_default() {
    PlantConfig cfg;
    cfg.resize_zones(8);
    return cfg;
  }

  // Fills per-zone vectors for n zones. Even zones face south (larger glazing).
  void resize_zones(int n) {
    n_zones = n;
    c_air.assign(n, 0.8);
    c_wall.assign(n, 8.0);
    r_air_wall.assign(n, 1.0 / 0.6);
    r_wall_amb.assign(n, 5.0);
    r_air_amb.assign(n, 20.0);
    fc_max.assign(n, 5.0);
    fc_conductance.assign(n, 0.15);
    solar_aperture.assign(n, 0.0);
    for (int z = 0; z < n; ++z) {
      solar_aperture[z] = (z % 2 == 0) ? 2.5 : 0.8;
      // Top floor loses more through the roof, ground floor through the slab.
      const int floor = z / 2;
      if (floor == 0 || floor == n / 2 - 1) r_wall_amb[z] = 4.2;
    }
  }

  int substeps_per_period() const { return static_cast<int>(std::lround(control_period / substep)); }

  int apartment_of(int zone) const { return zone / (n_zones / kApartments); }

  void validate() const {
    require(n_zones > 0 && n_zones % kApartments == 0, "plant: n_zones must be a positive multiple of 4");
    const auto n = static_cast<std::size_t>(n_zones);
    for (const auto* v : {&c_air, &c_wall, &r_air_wall, &r_wall_amb, &r_air_amb, &fc_max, &fc_conductance,
                          &solar_aperture})
      require(v->size() == n, "plant: per-zone parameter arrays must have n_zones entries");
    for (const auto* v : {&c_air, &c_wall, &r_air_wall, &r_wall_amb, &r_air_amb})
      for (double x : *v) require(std::isfinite(x) && x > 0.0, "plant: capacitances/resistances must be > 0");
    for (double x : fc_max) require(x >= 0.0, "plant: fc_max must be >= 0");
    require(c_tank > 0.0 && tank_ua >= 0.0, "plant: tank parameters must be positive");
    require(hysteresis_band > 0.0, "plant: hysteresis_band must be > 0");
    require(carnot_efficiency > 0.0 && hp_rated_electric > 0.0, "plant: heat pump parameters must be > 0");
    require(pv_peak > 0.0 && pv_area > 0.0, "plant: PV parameters must be > 0");
    require(substep > 0.0 && control_period > 0.0, "plant: substep and control_period must be > 0");
    const double ratio = control_period / substep;
    require(std::abs(ratio - std::round(ratio)) < 1e-9 && std::round(ratio) >= 1.0,
            "plant: control_period must be an integer multiple of substep");
  }
};

struct PlantState {
  Vec t_air;
  Vec t_wall;
  std::array<double, kTanks> t_tank{45.0, 45.0, 45.0, 45.0};
  bool hp_on = false;
  std::vector<bool> fan_on;
  std::array<bool, kTanks> tank_on{false, false, false, false};
  Timestamp clock;

  static PlantState uniform(const PlantConfig& cfg, double t_zone, double t_tank_all, Timestamp clock) {
    PlantState s;
    s.t_air = Vec::Constant(cfg.n_zones, t_zone);
    s.t_wall = Vec::Constant(cfg.n_zones, t_zone);
    s.t_tank.fill(t_tank_all);
    s.fan_on.assign(cfg.n_zones, false);
    s.clock = clock;
    return s;
  }

  bool finite_and_plausible() const {
    auto ok = [](double t) { return std::isfinite(t) && t >= -30.0 && t <= 90.0; };
    for (Eigen::Index i = 0; i < t_air.size(); ++i)
      if (!ok(t_air[i]) || !ok(t_wall[i])) return false;
    return std::all_of(t_tank.begin(), t_tank.end(), ok);
  }

  void validate(const PlantConfig& cfg) const {
    require(t_air.size() == cfg.n_zones && t_wall.size() == cfg.n_zones &&
                fan_on.size() == static_cast<std::size_t>(cfg.n_zones),
            "plant state: arrays must be sized by n_zones");
    require(finite_and_plausible(), "plant state: temperatures must be finite and within [-30, 90] degC");
  }
};

struct PlantOutput {
  Vec t_air;                    // end-of-period zone temperatures
  std::array<double, kTanks> t_tank{};
  double p_el_thermal = 0.0;    // period-mean electric power of the heating system
  double p_el_appliances = 0.0; // period-mean appliance/lighting power
  double p_pv = 0.0;            // period-mean PV production
  double q_delivered = 0.0;     // period-mean heat-pump thermal output incl. losses
  bool hp_on = false;           // state at end of period
};

// Hourly appliance + lighting load of the whole building (kW), midnight first.
inline constexpr std::array<double, 24> kApplianceSchedule{
    0.45, 0.45, 0.45, 0.45, 0.45, 0.45, 0.80, 1.60, 1.50, 0.90, 0.70, 0.70,
    0.70, 1.00, 0.90, 0.70, 0.70, 0.90, 1.40, 1.90, 2.20, 2.00, 1.40, 0.80};
// Sum of kApplianceSchedule times one hour.
inline constexpr double kDailyApplianceEnergy = 23.5;  // kWh

// Share of the daily hot-water draw occurring in each hour; sums to one.
inline constexpr std::array<double, 24> kDhwProfile{
    0.00, 0.00, 0.00, 0.00, 0.00, 0.01, 0.04, 0.12, 0.12, 0.06, 0.04, 0.03,
    0.05, 0.05, 0.03, 0.02, 0.02, 0.03, 0.05, 0.08, 0.10, 0.08, 0.05, 0.02};

inline double occupancy_load(Timestamp t) {
  const int hour = static_cast<int>(t.hour_of_day()) % 24;
  return kApplianceSchedule[static_cast<std::size_t>(hour)];
}

// Hot-water draw of one tank as a heat-capacity rate (kW/K).
inline double dhw_draw_rate(Timestamp t, const PlantConfig& cfg) {
  const int hour = static_cast<int>(t.hour_of_day()) % 24;
  return cfg.dhw_daily_capacity * kDhwProfile[static_cast<std::size_t>(hour)];  // per hour == per kW
}

inline double heat_pump_cop(double supply, const PlantConfig& cfg) {
  const double lift = std::max(supply - cfg.t_source, 5.0);
  const double cop = cfg.carnot_efficiency * (supply + 273.15) / lift;
  return std::clamp(cop, cfg.cop_min, cfg.cop_max);
}

// ---------------------------------------------------------------------------
// Solar geometry and PV.

struct SunPosition {
  double sin_elevation;
  double declination;  // rad
  double hour_angle;   // rad
};

inline SunPosition sun_position(Timestamp t, double latitude_deg) {
  constexpr double pi = std::numbers::pi;
  const double n = t.day_of_year() + 1.0;
  const double decl = (23.45 * pi / 180.0) * std::sin(2.0 * pi * (284.0 + n) / 365.0);
  const double omega = (15.0 * pi / 180.0) * (t.hour_of_day() - 12.0);
  const double phi = latitude_deg * pi / 180.0;
  const double s = std::sin(phi) * std::sin(decl) + std::cos(phi) * std::cos(decl) * std::cos(omega);
  return {s, decl, omega};
}

// Linear module/inverter model: 1000 W/m2 on-plane produces pv_peak.
inline double pv_power_from_poa(double poa, const PlantConfig& cfg) {
  return std::clamp(cfg.pv_peak * poa / 1000.0, 0.0, cfg.pv_peak);
}

// Plane-of-array irradiance for a south-facing tilted plane under the
// isotropic-sky model, with an Erbs split of GHI into beam and diffuse parts.
inline double plane_of_array_irradiance(const WeatherSample& w, const PlantConfig& cfg) {
  if (w.ghi <= 0.0) return 0.0;
  constexpr double pi = std::numbers::pi;
  const SunPosition sun = sun_position(w.timestamp, cfg.latitude_deg);
  const double beta = cfg.pv_tilt_deg * pi / 180.0;
  const double phi = cfg.latitude_deg * pi / 180.0;
  const double sky = 0.5 * (1.0 + std::cos(beta));
  const double ground = cfg.ground_albedo * w.ghi * 0.5 * (1.0 - std::cos(beta));
  if (sun.sin_elevation < 0.03) return w.ghi * sky + ground;

  const double n = w.timestamp.day_of_year() + 1.0;
  const double extra = 1367.0 * (1.0 + 0.033 * std::cos(2.0 * pi * n / 365.0));
  const double kt = std::clamp(w.ghi / (extra * sun.sin_elevation), 0.0, 1.0);
  double diffuse_fraction;
  if (kt <= 0.22)
    diffuse_fraction = 1.0 - 0.09 * kt;
  else if (kt <= 0.80)
    diffuse_fraction = 0.9511 - 0.1604 * kt + 4.388 * kt * kt - 16.638 * std::pow(kt, 3) + 12.336 * std::pow(kt, 4);
  else
    diffuse_fraction = 0.165;
  const double dhi = diffuse_fraction * w.ghi;
  const double dni = (w.ghi - dhi) / sun.sin_elevation;
  const double cos_incidence = std::max(
      0.0, std::sin(phi - beta) * std::sin(sun.declination) +
               std::cos(phi - beta) * std::cos(sun.declination) * std::cos(sun.hour_angle));
  return dni * cos_incidence + dhi * sky + ground;
}

inline double pv_power(const WeatherSample& w, const PlantConfig& cfg) {
  w.validate();
  return pv_power_from_poa(plane_of_array_irradiance(w, cfg), cfg);
}

// ---------------------------------------------------------------------------
// Plant dynamics.

namespace detail {

inline void apply_hysteresis(bool& on, double value, double setpoint, double band) {
  if (value < setpoint - band) on = true;
  else if (value > setpoint + band) on = false;
}

}  // namespace detail

/// Advances the plant by one control period with explicit Euler substeps.
/// Low-level control is re-evaluated at the start of every substep.
inline std::pair<PlantState, PlantOutput> step(const PlantState& state, const ControlSetpoints& sp,
                                               const WeatherSample& w, const PlantConfig& cfg) {
  cfg.validate();
  state.validate(cfg);
  sp.validate();
  w.validate();

  const int nz = cfg.n_zones;
  const int substeps = cfg.substeps_per_period();
  const double dt = cfg.substep / 60.0;  // hours
  const double cop = heat_pump_cop(sp.hp_supply, cfg);
  const double solar_kw_per_m2 = w.ghi / 1000.0;

  PlantState s = state;
  PlantOutput out;
  double e_thermal = 0.0, e_app = 0.0, e_q = 0.0;
  Vec q_zone(nz), d_air(nz), d_wall(nz);

  for (int k = 0; k < substeps; ++k) {
    const Timestamp now = state.clock.plus_minutes(k * cfg.substep);

    int fans = 0;
    for (int z = 0; z < nz; ++z) {
      bool on = s.fan_on[z];
      detail::apply_hysteresis(on, s.t_air[z], sp.zone_sp[cfg.apartment_of(z)], cfg.hysteresis_band);
      s.fan_on[z] = on;
      fans += on ? 1 : 0;
    }
    bool any_tank = false;
    for (int i = 0; i < kTanks; ++i) {
      detail::apply_hysteresis(s.tank_on[i], s.t_tank[i], sp.tank_sp[i], cfg.hysteresis_band);
      any_tank = any_tank || s.tank_on[i];
    }
    s.hp_on = fans > 0 || any_tank;

    std::array<double, kTanks> q_tank{};
    double q_pipe = 0.0;
    double total = 0.0;
    for (int z = 0; z < nz; ++z) {
      q_zone[z] = (s.hp_on && s.fan_on[z])
                      ? std::min(cfg.fc_max[z], cfg.fc_conductance[z] * std::max(0.0, sp.hp_supply - s.t_air[z]))
                      : 0.0;
      total += q_zone[z];
    }
    for (int i = 0; i < kTanks; ++i) {
      q_tank[i] = s.tank_on[i] ? std::min(cfg.tank_coil_max,
                                          cfg.tank_coil_conductance * std::max(0.0, sp.hp_supply - s.t_tank[i]))
                               : 0.0;
      total += q_tank[i];
    }
    if (s.hp_on) {
      q_pipe = cfg.pipe_loss_conductance * std::max(0.0, sp.hp_supply - cfg.pipe_ambient);
      total += q_pipe;
    }
    // Compressor ceiling scales every consumer down proportionally.
    const double capacity = cfg.hp_rated_electric * cop;
    if (total > capacity) {
      const double scale = capacity / total;
      q_zone *= scale;
      for (auto& q : q_tank) q *= scale;
      q_pipe *= scale;
      total = capacity;
    }
    const double p_el = (s.hp_on ? total / cop + cfg.hp_aux_power : 0.0) + fans * cfg.fan_power;
    const double app = occupancy_load(now);
    const double internal = cfg.internal_gain_fraction * app / nz;

    for (int z = 0; z < nz; ++z) {
      const double ta = s.t_air[z], tw = s.t_wall[z];
      const double to_wall = (tw - ta) / cfg.r_air_wall[z];
      d_air[z] = (q_zone[z] + solar_kw_per_m2 * cfg.solar_aperture[z] + internal + to_wall +
                  (w.t_out - ta) / cfg.r_air_amb[z]) /
                 cfg.c_air[z];
      d_wall[z] = (-to_wall + (w.t_out - tw) / cfg.r_wall_amb[z]) / cfg.c_wall[z];
    }
    const double draw = dhw_draw_rate(now, cfg);
    for (int i = 0; i < kTanks; ++i) {
      const double tt = s.t_tank[i];
      const double d_tank =
          (q_tank[i] - cfg.tank_ua * (tt - cfg.tank_ambient) - draw * (tt - cfg.mains_temp)) / cfg.c_tank;
      s.t_tank[i] = tt + dt * d_tank;
    }
    s.t_air += dt * d_air;
    s.t_wall += dt * d_wall;

    e_thermal += p_el;
    e_app += app;
    e_q += total;
  }
  s.clock = state.clock.plus_minutes(cfg.control_period);
  if (!s.finite_and_plausible())
    throw SimulationFault("plant state left the admissible range at " + s.clock.to_string());

  out.t_air = s.t_air;
  out.t_tank = s.t_tank;
  out.p_el_thermal = e_thermal / substeps;
  out.p_el_appliances = e_app / substeps;
  out.q_delivered = e_q / substeps;
  out.p_pv = pv_power(w, cfg);
  out.hp_on = s.hp_on;
  return {std::move(s), std::move(out)};
}

}  // namespace bldgmpc
