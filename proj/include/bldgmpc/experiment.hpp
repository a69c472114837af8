#pragma once

// End-to-end comparison pipeline: data generation, five LSS-NL and five
// ENC-DEC instances, forecast scoring, rule-based and MPC episodes on shared
// weather, and the resulting tables, plots and report.
//
// Metric tables (forecast_m*.csv, control_*.csv, solver_stats.csv,
// preheat.csv) are pure functions of the configuration. Wall-clock data lives
// only in timing.csv, the episode logs and report.md.

#include "bldgmpc/io.hpp"
#include "bldgmpc/metrics.hpp"
#include "bldgmpc/plot.hpp"
#include "bldgmpc/serialize.hpp"
#include "bldgmpc/signals.hpp"

#include <yaml-cpp/yaml.h>

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <sstream>

namespace bldgmpc::experiment {

namespace fs = std::filesystem;

// Failure inside one pipeline stage; the message carries the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct LssInstance {
  std::string name;
  int points = 4000;
  std::uint64_t seed = 1;
};

struct RnnInstance {
  std::string name;
  int epochs = 8;
  std::uint64_t seed = 1;
};

struct Config {
  std::string output_dir = "artifacts";

  // Plant overrides applied on top of PlantConfig::make_default().
  PlantConfig plant = PlantConfig::make_default();

  // Weather: training data and evaluation use different synthetic years.
  std::uint64_t weather_train_seed = 1;
  std::uint64_t weather_eval_seed = 2;
  int weather_days = 730;
  std::string weather_eval_csv;  // optional import replacing the synthetic eval weather

  // LSS-NL identification.
  double lss_start_day = 10.0;
  int lss_order = 8;
  int lss_tones = 60;
  double lss_band_lo_per_hour = 1.0 / 72.0;
  double lss_band_hi_per_hour = 2.0;
  double kernel_gamma = 0.1;
  double kernel_ridge = 1.0;
  std::string kernel_scaling = "range";
  int kernel_support_cap = 2000;
  std::vector<LssInstance> lss{{"LSS-NL1", 4000, 11}, {"LSS-NL2", 4000, 12}, {"LSS-NL3", 2000, 13},
                               {"LSS-NL4", 2000, 14}, {"LSS-NL5", 750, 15}};

  // ENC-DEC training.
  int rnn_hidden = 64;
  std::vector<int> rnn_head{64, 32};
  int rnn_encoder_steps = 48;
  double rnn_train_start_day = 300.0;
  int rnn_train_days = 180;
  std::uint64_t rnn_data_seed = 2;
  double rnn_mean_dwell_hours = 6.0;
  double rnn_learning_rate = 1e-3;
  int rnn_batch_size = 32;
  double rnn_clip_norm = 1.0;
  std::vector<int> rnn_decode_lengths{2, 4, 6, 8, 10, 16, 24, 32};
  int rnn_iterations_per_epoch = 125;
  std::vector<RnnInstance> rnn{{"ENC-DEC1", 8, 21}, {"ENC-DEC2", 8, 22}, {"ENC-DEC3", 6, 23},
                               {"ENC-DEC4", 3, 24}, {"ENC-DEC5", 6, 25}};

  // Forecast validation on unseen periodic setpoint profiles.
  double validation_start_day = 370.0;
  int validation_days = 14;
  std::uint64_t validation_seed = 3;
  std::vector<int> validation_windows{4, 96};

  // Closed-loop evaluation.
  double control_start_day = 35.0;
  int control_days = 14;
  int warmup_steps = 96;
  std::vector<double> rule_based_zone_sp{19.0, 19.5, 20.0, 21.0};
  mpc::MpcConfig mpc;
  std::string violation_count = "sample";

  int history_steps() const { return std::max(96, rnn_encoder_steps); }

  void validate() const {
    plant.validate();
    mpc.validate();
    require(!lss.empty() && !rnn.empty(), "config: need at least one instance per architecture");
    for (const auto& i : lss) require(i.points >= 100 && !i.name.empty(), "config: LSS instance needs a name and >= 100 points");
    for (const auto& i : rnn) require(i.epochs >= 1 && !i.name.empty(), "config: RNN instance needs a name and >= 1 epoch");
    require(lss_order >= 1 && kernel_gamma > 0.0 && kernel_ridge >= 0.0 && kernel_support_cap >= 1,
            "config: invalid LSS-NL hyperparameters");
    parse_scaling_checked();
    eval::parse_violation_count(violation_count);
    require(rnn_hidden >= 1 && rnn_encoder_steps >= 1 && rnn_train_days >= 1 && rnn_iterations_per_epoch >= 1,
            "config: invalid ENC-DEC hyperparameters");
    require(validation_days >= 1 && control_days >= 1 && warmup_steps >= history_steps(),
            "config: validation/control spans must be positive and warm-up must cover the predictor history");
    for (int m : validation_windows) require(m >= 1, "config: window lengths must be positive");
    require(!rule_based_zone_sp.empty(), "config: at least one rule-based controller");
  }

  lss::FeatureScaling parse_scaling_checked() const { return lss::parse_scaling(kernel_scaling); }
};

// ---------------------------------------------------------------------------
// YAML (de)serialization.

namespace detail {

template <class T>
void read(const YAML::Node& n, const char* key, T& out) {
  if (!n || !n[key]) return;
  try {
    out = n[key].as<T>();
  } catch (const YAML::Exception& e) {
    throw InvalidInput(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

inline void check_keys(const YAML::Node& n, const std::string& where, std::initializer_list<const char*> known) {
  if (!n) return;
  if (!n.IsMap()) throw InvalidInput("config: '" + where + "' must be a mapping");
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (std::none_of(known.begin(), known.end(), [&](const char* k) { return key == k; }))
      throw InvalidInput("config: unknown key '" + key + "' in " + where);
  }
}

}  // namespace detail

inline Config parse_config(const YAML::Node& root) {
  using detail::read;
  Config c;
  detail::check_keys(root, "top level",
                     {"output_dir", "plant", "weather", "lss", "rnn", "validation", "control"});
  read(root, "output_dir", c.output_dir);

  const auto p = root["plant"];
  detail::check_keys(p, "plant",
                     {"carnot_efficiency", "t_source", "cop_min", "cop_max", "hp_rated_electric", "hp_aux_power",
                      "hysteresis_band", "pv_peak", "pv_area", "pv_tilt_deg", "latitude_deg", "substep",
                      "control_period"});
  read(p, "carnot_efficiency", c.plant.carnot_efficiency);
  read(p, "t_source", c.plant.t_source);
  read(p, "cop_min", c.plant.cop_min);
  read(p, "cop_max", c.plant.cop_max);
  read(p, "hp_rated_electric", c.plant.hp_rated_electric);
  read(p, "hp_aux_power", c.plant.hp_aux_power);
  read(p, "hysteresis_band", c.plant.hysteresis_band);
  read(p, "pv_peak", c.plant.pv_peak);
  read(p, "pv_area", c.plant.pv_area);
  read(p, "pv_tilt_deg", c.plant.pv_tilt_deg);
  read(p, "latitude_deg", c.plant.latitude_deg);
  read(p, "substep", c.plant.substep);
  read(p, "control_period", c.plant.control_period);

  const auto w = root["weather"];
  detail::check_keys(w, "weather", {"train_seed", "eval_seed", "days", "eval_csv"});
  read(w, "train_seed", c.weather_train_seed);
  read(w, "eval_seed", c.weather_eval_seed);
  read(w, "days", c.weather_days);
  read(w, "eval_csv", c.weather_eval_csv);

  const auto l = root["lss"];
  detail::check_keys(l, "lss",
                     {"start_day", "order", "tones", "band_lo_per_hour", "band_hi_per_hour", "gamma", "ridge",
                      "scaling", "support_cap", "instances"});
  read(l, "start_day", c.lss_start_day);
  read(l, "order", c.lss_order);
  read(l, "tones", c.lss_tones);
  read(l, "band_lo_per_hour", c.lss_band_lo_per_hour);
  read(l, "band_hi_per_hour", c.lss_band_hi_per_hour);
  read(l, "gamma", c.kernel_gamma);
  read(l, "ridge", c.kernel_ridge);
  read(l, "scaling", c.kernel_scaling);
  read(l, "support_cap", c.kernel_support_cap);
  if (l && l["instances"]) {
    c.lss.clear();
    for (const auto& i : l["instances"]) {
      detail::check_keys(i, "lss.instances", {"name", "points", "seed"});
      LssInstance li;
      read(i, "name", li.name);
      read(i, "points", li.points);
      read(i, "seed", li.seed);
      c.lss.push_back(li);
    }
  }

  const auto r = root["rnn"];
  detail::check_keys(r, "rnn",
                     {"hidden", "head", "encoder_steps", "train_start_day", "train_days", "data_seed",
                      "mean_dwell_hours", "learning_rate", "batch_size", "clip_norm", "decode_lengths",
                      "iterations_per_epoch", "instances"});
  read(r, "hidden", c.rnn_hidden);
  read(r, "head", c.rnn_head);
  read(r, "encoder_steps", c.rnn_encoder_steps);
  read(r, "train_start_day", c.rnn_train_start_day);
  read(r, "train_days", c.rnn_train_days);
  read(r, "data_seed", c.rnn_data_seed);
  read(r, "mean_dwell_hours", c.rnn_mean_dwell_hours);
  read(r, "learning_rate", c.rnn_learning_rate);
  read(r, "batch_size", c.rnn_batch_size);
  read(r, "clip_norm", c.rnn_clip_norm);
  read(r, "decode_lengths", c.rnn_decode_lengths);
  read(r, "iterations_per_epoch", c.rnn_iterations_per_epoch);
  if (r && r["instances"]) {
    c.rnn.clear();
    for (const auto& i : r["instances"]) {
      detail::check_keys(i, "rnn.instances", {"name", "epochs", "seed"});
      RnnInstance ri;
      read(i, "name", ri.name);
      read(i, "epochs", ri.epochs);
      read(i, "seed", ri.seed);
      c.rnn.push_back(ri);
    }
  }

  const auto v = root["validation"];
  detail::check_keys(v, "validation", {"start_day", "days", "seed", "windows"});
  read(v, "start_day", c.validation_start_day);
  read(v, "days", c.validation_days);
  read(v, "seed", c.validation_seed);
  read(v, "windows", c.validation_windows);

  const auto k = root["control"];
  detail::check_keys(k, "control",
                     {"start_day", "days", "warmup_steps", "rule_based_zone_sp", "horizon", "rho",
                      "smoothing_window", "violation_count", "sqp"});
  read(k, "start_day", c.control_start_day);
  read(k, "days", c.control_days);
  read(k, "warmup_steps", c.warmup_steps);
  read(k, "rule_based_zone_sp", c.rule_based_zone_sp);
  read(k, "horizon", c.mpc.horizon);
  read(k, "rho", c.mpc.rho);
  read(k, "smoothing_window", c.mpc.smoothing_window);
  read(k, "violation_count", c.violation_count);
  if (k && k["sqp"]) {
    const auto s = k["sqp"];
    detail::check_keys(s, "control.sqp",
                       {"max_iterations", "step_tolerance", "memory", "qp_max_iterations", "armijo",
                        "max_backtracks"});
    read(s, "max_iterations", c.mpc.sqp.max_iterations);
    read(s, "step_tolerance", c.mpc.sqp.step_tolerance);
    read(s, "memory", c.mpc.sqp.memory);
    read(s, "qp_max_iterations", c.mpc.sqp.qp_max_iterations);
    read(s, "armijo", c.mpc.sqp.armijo);
    read(s, "max_backtracks", c.mpc.sqp.max_backtracks);
  }
  c.validate();
  return c;
}

inline Config load_config(const std::string& path) {
  try {
    return parse_config(YAML::LoadFile(path));
  } catch (const YAML::Exception& e) {
    throw InvalidInput("config: " + path + ": " + e.what());
  }
}

inline std::string to_yaml(const Config& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "output_dir" << YAML::Value << c.output_dir;
  e << YAML::Key << "plant" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "carnot_efficiency" << YAML::Value << c.plant.carnot_efficiency;
  e << YAML::Key << "t_source" << YAML::Value << c.plant.t_source;
  e << YAML::Key << "cop_min" << YAML::Value << c.plant.cop_min;
  e << YAML::Key << "cop_max" << YAML::Value << c.plant.cop_max;
  e << YAML::Key << "hp_rated_electric" << YAML::Value << c.plant.hp_rated_electric;
  e << YAML::Key << "hp_aux_power" << YAML::Value << c.plant.hp_aux_power;
  e << YAML::Key << "hysteresis_band" << YAML::Value << c.plant.hysteresis_band;
  e << YAML::Key << "pv_peak" << YAML::Value << c.plant.pv_peak;
  e << YAML::Key << "pv_area" << YAML::Value << c.plant.pv_area;
  e << YAML::Key << "pv_tilt_deg" << YAML::Value << c.plant.pv_tilt_deg;
  e << YAML::Key << "latitude_deg" << YAML::Value << c.plant.latitude_deg;
  e << YAML::Key << "substep" << YAML::Value << c.plant.substep;
  e << YAML::Key << "control_period" << YAML::Value << c.plant.control_period;
  e << YAML::EndMap;
  e << YAML::Key << "weather" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "train_seed" << YAML::Value << c.weather_train_seed;
  e << YAML::Key << "eval_seed" << YAML::Value << c.weather_eval_seed;
  e << YAML::Key << "days" << YAML::Value << c.weather_days;
  e << YAML::Key << "eval_csv" << YAML::Value << c.weather_eval_csv;
  e << YAML::EndMap;
  e << YAML::Key << "lss" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "start_day" << YAML::Value << c.lss_start_day;
  e << YAML::Key << "order" << YAML::Value << c.lss_order;
  e << YAML::Key << "tones" << YAML::Value << c.lss_tones;
  e << YAML::Key << "band_lo_per_hour" << YAML::Value << c.lss_band_lo_per_hour;
  e << YAML::Key << "band_hi_per_hour" << YAML::Value << c.lss_band_hi_per_hour;
  e << YAML::Key << "gamma" << YAML::Value << c.kernel_gamma;
  e << YAML::Key << "ridge" << YAML::Value << c.kernel_ridge;
  e << YAML::Key << "scaling" << YAML::Value << c.kernel_scaling;
  e << YAML::Key << "support_cap" << YAML::Value << c.kernel_support_cap;
  e << YAML::Key << "instances" << YAML::Value << YAML::BeginSeq;
  for (const auto& i : c.lss)
    e << YAML::Flow << YAML::BeginMap << YAML::Key << "name" << YAML::Value << i.name << YAML::Key << "points"
      << YAML::Value << i.points << YAML::Key << "seed" << YAML::Value << i.seed << YAML::EndMap;
  e << YAML::EndSeq << YAML::EndMap;
  e << YAML::Key << "rnn" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "hidden" << YAML::Value << c.rnn_hidden;
  e << YAML::Key << "head" << YAML::Value << YAML::Flow << c.rnn_head;
  e << YAML::Key << "encoder_steps" << YAML::Value << c.rnn_encoder_steps;
  e << YAML::Key << "train_start_day" << YAML::Value << c.rnn_train_start_day;
  e << YAML::Key << "train_days" << YAML::Value << c.rnn_train_days;
  e << YAML::Key << "data_seed" << YAML::Value << c.rnn_data_seed;
  e << YAML::Key << "mean_dwell_hours" << YAML::Value << c.rnn_mean_dwell_hours;
  e << YAML::Key << "learning_rate" << YAML::Value << c.rnn_learning_rate;
  e << YAML::Key << "batch_size" << YAML::Value << c.rnn_batch_size;
  e << YAML::Key << "clip_norm" << YAML::Value << c.rnn_clip_norm;
  e << YAML::Key << "decode_lengths" << YAML::Value << YAML::Flow << c.rnn_decode_lengths;
  e << YAML::Key << "iterations_per_epoch" << YAML::Value << c.rnn_iterations_per_epoch;
  e << YAML::Key << "instances" << YAML::Value << YAML::BeginSeq;
  for (const auto& i : c.rnn)
    e << YAML::Flow << YAML::BeginMap << YAML::Key << "name" << YAML::Value << i.name << YAML::Key << "epochs"
      << YAML::Value << i.epochs << YAML::Key << "seed" << YAML::Value << i.seed << YAML::EndMap;
  e << YAML::EndSeq << YAML::EndMap;
  e << YAML::Key << "validation" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "start_day" << YAML::Value << c.validation_start_day;
  e << YAML::Key << "days" << YAML::Value << c.validation_days;
  e << YAML::Key << "seed" << YAML::Value << c.validation_seed;
  e << YAML::Key << "windows" << YAML::Value << YAML::Flow << c.validation_windows;
  e << YAML::EndMap;
  e << YAML::Key << "control" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "start_day" << YAML::Value << c.control_start_day;
  e << YAML::Key << "days" << YAML::Value << c.control_days;
  e << YAML::Key << "warmup_steps" << YAML::Value << c.warmup_steps;
  e << YAML::Key << "rule_based_zone_sp" << YAML::Value << YAML::Flow << c.rule_based_zone_sp;
  e << YAML::Key << "horizon" << YAML::Value << c.mpc.horizon;
  e << YAML::Key << "rho" << YAML::Value << c.mpc.rho;
  e << YAML::Key << "smoothing_window" << YAML::Value << c.mpc.smoothing_window;
  e << YAML::Key << "violation_count" << YAML::Value << c.violation_count;
  e << YAML::Key << "sqp" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "max_iterations" << YAML::Value << c.mpc.sqp.max_iterations;
  e << YAML::Key << "step_tolerance" << YAML::Value << c.mpc.sqp.step_tolerance;
  e << YAML::Key << "memory" << YAML::Value << c.mpc.sqp.memory;
  e << YAML::Key << "qp_max_iterations" << YAML::Value << c.mpc.sqp.qp_max_iterations;
  e << YAML::Key << "armijo" << YAML::Value << c.mpc.sqp.armijo;
  e << YAML::Key << "max_backtracks" << YAML::Value << c.mpc.sqp.max_backtracks;
  e << YAML::EndMap << YAML::EndMap << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// Data generation.

inline WeatherSeries train_weather(const Config& c) {
  return {signals::synth_weather(c.weather_days, c.weather_train_seed), c.plant.control_period};
}

inline WeatherSeries eval_weather(const Config& c) {
  if (!c.weather_eval_csv.empty()) return {io::read_weather(c.weather_eval_csv), c.plant.control_period};
  return {signals::synth_weather(c.weather_days, c.weather_eval_seed), c.plant.control_period};
}

// Open-loop plant response to a generated schedule, from a uniform initial state.
inline Trace excite(const PlantConfig& plant, const WeatherSeries& weather, const signals::ExcitationSpec& spec,
                    int steps) {
  PlantState st = PlantState::uniform(plant, 21.0, 42.0, spec.start);
  return simulate(st, signals::generate(spec, steps), weather, plant);
}

inline signals::ExcitationSpec lss_excitation(const Config& c, const LssInstance& inst) {
  signals::ExcitationSpec s;
  s.kind = signals::ExcitationKind::kMultisine;
  s.seed = inst.seed;
  s.step_minutes = c.plant.control_period;
  s.start = Timestamp::from_day(c.lss_start_day);
  s.tones = c.lss_tones;
  s.band_lo_per_hour = c.lss_band_lo_per_hour;
  s.band_hi_per_hour = c.lss_band_hi_per_hour;
  return s;
}

inline signals::ExcitationSpec rnn_excitation(const Config& c) {
  signals::ExcitationSpec s;
  s.kind = signals::ExcitationKind::kPiecewiseConstant;
  s.seed = c.rnn_data_seed;
  s.step_minutes = c.plant.control_period;
  s.start = Timestamp::from_day(c.rnn_train_start_day);
  s.mean_dwell_hours = c.rnn_mean_dwell_hours;
  return s;
}

inline signals::ExcitationSpec validation_excitation(const Config& c) {
  signals::ExcitationSpec s;
  s.kind = signals::ExcitationKind::kMixed;
  s.seed = c.validation_seed;
  s.step_minutes = c.plant.control_period;
  s.start = Timestamp::from_day(c.validation_start_day);
  return s;
}

inline int steps_per_day(const Config& c) { return static_cast<int>(std::lround(24.0 * 60.0 / c.plant.control_period)); }

// Validation trace: one predictor history followed by the scored span.
inline Trace validation_trace(const Config& c, const WeatherSeries& weather) {
  return excite(c.plant, weather, validation_excitation(c), c.history_steps() + c.validation_days * steps_per_day(c));
}

// ---------------------------------------------------------------------------
// Model fitting.

inline lss::LssNlFitConfig lss_fit_config(const Config& c) {
  lss::LssNlFitConfig f;
  f.order = c.lss_order;
  f.gamma = c.kernel_gamma;
  f.ridge = c.kernel_ridge;
  f.support_cap = c.kernel_support_cap;
  f.scaling = lss::parse_scaling(c.kernel_scaling);
  return f;
}

inline lss::LssNlModel fit_lss_instance(const Config& c, const WeatherSeries& weather, const LssInstance& inst) {
  const Trace t = excite(c.plant, weather, lss_excitation(c, inst), inst.points);
  return lss::fit_lss_nl(t.inputs(), t.temps(), t.thermal_power().col(0), lss_fit_config(c));
}

inline rnn::TrainConfig rnn_train_config(const Config& c, const RnnInstance& inst) {
  rnn::TrainConfig t;
  t.batch_size = c.rnn_batch_size;
  t.learning_rate = c.rnn_learning_rate;
  t.clip_norm = c.rnn_clip_norm;
  t.decode_lengths = c.rnn_decode_lengths;
  t.epochs = inst.epochs;
  t.iterations_per_epoch = c.rnn_iterations_per_epoch;
  t.seed = inst.seed;
  return t;
}

inline rnn::ModelShape rnn_shape(const Config& c) {
  rnn::ModelShape s;
  s.hidden = c.rnn_hidden;
  s.encoder_steps = c.rnn_encoder_steps;
  s.head_hidden = c.rnn_head;
  return s;
}

inline rnn::SequenceData rnn_training_data(const Config& c, const WeatherSeries& weather) {
  const Trace t = excite(c.plant, weather, rnn_excitation(c), c.rnn_train_days * steps_per_day(c));
  return {t.inputs(), t.temps(), t.thermal_power()};
}

// Initial weights are seeded by the instance seed; minibatch draws by seed + 1.
inline rnn::TrainResult fit_rnn_instance(const Config& c, const rnn::SequenceData& data, const RnnInstance& inst,
                                         const std::function<void(int, double)>& on_epoch = {}) {
  rnn::TrainConfig tc = rnn_train_config(c, inst);
  tc.seed = inst.seed + 1;
  return rnn::train(rnn::make_model(rnn_shape(c), inst.seed), data, tc, on_epoch);
}

// ---------------------------------------------------------------------------
// Results.

struct ForecastRow {
  std::string model;
  std::string architecture;
  eval::ForecastMetrics metrics;
};

struct ControlRow {
  std::string controller;
  std::string architecture;  // "RB", "LSS-NL" or "ENC-DEC"
  eval::ControlMetrics metrics;
  mpc::Episode episode;

  int steps_with(const std::string& termination) const {
    return static_cast<int>(std::count_if(episode.steps.begin(), episode.steps.end(),
                                          [&](const mpc::EpisodeStep& s) { return s.termination == termination; }));
  }
  bool merit_monotone() const {
    return std::all_of(episode.steps.begin(), episode.steps.end(),
                       [](const mpc::EpisodeStep& s) { return s.merit_monotone; });
  }
  double mean_iterations() const {
    double acc = 0.0;
    for (const auto& s : episode.steps) acc += s.sqp_iterations;
    return episode.steps.empty() ? 0.0 : acc / static_cast<double>(episode.steps.size());
  }
  double mean_solve_seconds() const {
    double acc = 0.0;
    for (const auto& s : episode.steps) acc += s.solve_seconds;
    return episode.steps.empty() ? 0.0 : acc / static_cast<double>(episode.steps.size());
  }
  double max_solve_seconds() const {
    double m = 0.0;
    for (const auto& s : episode.steps) m = std::max(m, s.solve_seconds);
    return m;
  }
};

struct Result {
  fs::path dir;
  std::vector<ForecastRow> forecasts;   // every model at every window length
  std::vector<ControlRow> rule_based;
  std::vector<ControlRow> mpc;
  std::vector<std::pair<std::string, double>> stage_seconds;

  const ForecastRow* forecast(const std::string& model, int m) const {
    for (const auto& f : forecasts)
      if (f.model == model && f.metrics.m == m) return &f;
    return nullptr;
  }
};

// Names of the deterministic metric tables, relative to the artifact directory.
inline std::vector<std::string> metric_tables(const Config& c) {
  std::vector<std::string> out;
  for (int m : c.validation_windows) out.push_back("forecast_m" + std::to_string(m) + ".csv");
  for (const char* n : {"control_rb.csv", "control_mpc.csv", "solver_stats.csv", "preheat.csv"}) out.push_back(n);
  return out;
}

inline std::string file_stem(const std::string& name) {
  std::string s;
  for (char ch : name) s += std::isalnum(static_cast<unsigned char>(ch)) ? static_cast<char>(std::tolower(ch)) : '_';
  return s;
}

// ---------------------------------------------------------------------------
// Table writers.

inline void write_forecast_table(const fs::path& path, const std::vector<ForecastRow>& rows, int m) {
  io::CsvWriter out(path.string());
  out.row({"model", "architecture", "window", "windows", "days", "mae_temp", "mae_power", "smrae_temp",
           "smrae_power"});
  for (const auto& r : rows) {
    if (r.metrics.m != m) continue;
    const auto& f = r.metrics;
    out.row({r.model, r.architecture, std::to_string(f.m), std::to_string(f.windows), io::num(f.days),
             io::num(f.mae_temp), io::num(f.mae_power), io::num(f.smrae_temp), io::num(f.smrae_power)});
  }
}

inline void write_control_table(const fs::path& path, const std::vector<ControlRow>& rows) {
  io::CsvWriter out(path.string());
  out.row({"controller", "architecture", "p_mean", "p_th", "c_mean", "delta", "n", "n_out"});
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    out.row({r.controller, r.architecture, io::num(m.p_mean), io::num(m.p_th), io::num(m.c_mean), io::num(m.delta),
             std::to_string(m.n), std::to_string(m.n_out)});
  }
}

inline void write_solver_stats(const fs::path& path, const std::vector<ControlRow>& rows) {
  io::CsvWriter out(path.string());
  out.row({"controller", "steps", "mean_sqp_iterations", "tolerance", "max_iter", "qp_failure", "fallback",
           "merit_monotone"});
  for (const auto& r : rows)
    out.row({r.controller, std::to_string(r.episode.steps.size()), io::num(r.mean_iterations()),
             std::to_string(r.steps_with("tolerance")), std::to_string(r.steps_with("max_iter")),
             std::to_string(r.steps_with("qp_failure")), std::to_string(r.steps_with("fallback")),
             r.merit_monotone() ? "1" : "0"});
}

inline void write_timing(const fs::path& path, const std::vector<ControlRow>& rows,
                         const std::vector<std::pair<std::string, double>>& stages) {
  io::CsvWriter out(path.string());
  out.row({"item", "mean_step_seconds", "max_step_seconds", "total_seconds"});
  for (const auto& r : rows) {
    double total = 0.0;
    for (const auto& s : r.episode.steps) total += s.solve_seconds;
    out.row({r.controller, io::num(r.mean_solve_seconds()), io::num(r.max_solve_seconds()), io::num(total)});
  }
  for (const auto& [stage, sec] : stages) out.row({"stage:" + stage, "", "", io::num(sec)});
}

// Mean zone setpoint by time of day: midday (PV available) versus night.
struct PreheatSummary {
  double midday_zone_sp = 0.0, night_zone_sp = 0.0;
  double midday_t_out = 0.0, night_t_out = 0.0;
  double midday_hp_supply = 0.0, night_hp_supply = 0.0;
};

inline PreheatSummary preheat_summary(const Trace& trace) {
  PreheatSummary p;
  int nm = 0, nn = 0;
  for (const auto& r : trace.rows) {
    const double h = r.timestamp.hour_of_day();
    double zone = 0.0;
    for (double z : r.sp.zone_sp) zone += z;
    zone /= static_cast<double>(r.sp.zone_sp.size());
    if (h >= 11.0 && h < 15.0) {
      p.midday_zone_sp += zone;
      p.midday_t_out += r.weather.t_out;
      p.midday_hp_supply += r.sp.hp_supply;
      ++nm;
    } else if (h < 5.0) {
      p.night_zone_sp += zone;
      p.night_t_out += r.weather.t_out;
      p.night_hp_supply += r.sp.hp_supply;
      ++nn;
    }
  }
  if (nm) p.midday_zone_sp /= nm, p.midday_t_out /= nm, p.midday_hp_supply /= nm;
  if (nn) p.night_zone_sp /= nn, p.night_t_out /= nn, p.night_hp_supply /= nn;
  return p;
}

inline void write_preheat(const fs::path& path, const std::vector<ControlRow>& rows) {
  io::CsvWriter out(path.string());
  out.row({"controller", "midday_zone_sp", "night_zone_sp", "midday_hp_supply", "night_hp_supply", "midday_t_out",
           "night_t_out"});
  for (const auto& r : rows) {
    const auto p = preheat_summary(r.episode.trace);
    out.row({r.controller, io::num(p.midday_zone_sp), io::num(p.night_zone_sp), io::num(p.midday_hp_supply),
             io::num(p.night_hp_supply), io::num(p.midday_t_out), io::num(p.night_t_out)});
  }
}

inline void write_episode_log(const fs::path& path, const mpc::Episode& ep) {
  io::CsvWriter out(path.string());
  out.row(io::concat(io::concat({"timestamp"}, io::setpoint_header()),
                     {"objective", "violation", "solve_seconds", "termination"}));
  for (const auto& s : ep.steps)
    out.row(io::concat(io::concat({s.timestamp.to_string()}, io::setpoint_cells(s.applied)),
                       {io::num(s.objective), io::num(s.violation), io::num(s.solve_seconds), s.termination}));
}

// ---------------------------------------------------------------------------
// Plots and report.

inline void write_plots(const fs::path& dir, const Config& c, const Result& r) {
  using plot::Chart;
  using plot::Mark;
  using plot::Series;
  fs::create_directories(dir);
  const int day_window = c.validation_windows.back();

  // Fig. 3a: sMRAE per instance at the longest window.
  {
    std::vector<std::string> cats;
    std::vector<std::vector<double>> vals(2);
    for (const auto& f : r.forecasts) {
      if (f.metrics.m != day_window) continue;
      cats.push_back(f.model);
      vals[0].push_back(f.metrics.smrae_temp);
      vals[1].push_back(f.metrics.smrae_power);
    }
    plot::save((dir / "fig3a_smrae.svg").string(),
               plot::bar_chart({"sMRAE at m = " + std::to_string(day_window), "", "sMRAE", 1100, 440}, cats,
                               {"temperature", "power"}, vals));
  }
  // Fig. 3b: temperature error distribution of the best two instances per architecture.
  {
    std::vector<Series> hs;
    double hi = 0.0;
    for (const char* arch : {"LSS-NL", "ENC-DEC"}) {
      std::vector<const ForecastRow*> rows;
      for (const auto& f : r.forecasts)
        if (f.architecture == arch && f.metrics.m == day_window) rows.push_back(&f);
      std::sort(rows.begin(), rows.end(),
                [](const ForecastRow* a, const ForecastRow* b) { return a->metrics.mae_temp < b->metrics.mae_temp; });
      for (std::size_t i = 0; i < std::min<std::size_t>(2, rows.size()); ++i) {
        const Vec& e = rows[i]->metrics.abs_err_temp;
        hi = std::max(hi, e.size() ? e.maxCoeff() : 0.0);
        hs.push_back({rows[i]->model, std::vector<double>(e.data(), e.data() + e.size()), {}, Mark::kStep});
      }
    }
    hi = std::max(std::min(hi, 5.0), 0.5);
    for (auto& s : hs) s = plot::histogram(s.name, s.x, 0.0, hi, 40);
    plot::save((dir / "fig3b_error_hist.svg").string(),
               plot::xy_chart({"Absolute temperature error at m = " + std::to_string(day_window), "|error| (degC)",
                               "density"},
                              hs));
  }
  // Fig. 4: controller scatter plots.
  {
    std::vector<Series> a, b;
    for (const char* arch : {"RB", "LSS-NL", "ENC-DEC"}) {
      Series sa{arch, {}, {}, Mark::kPoints}, sb{arch, {}, {}, Mark::kPoints};
      for (const auto* rows : {&r.rule_based, &r.mpc})
        for (const auto& row : *rows) {
          if (row.architecture != arch) continue;
          sa.x.push_back(row.metrics.c_mean);
          sa.y.push_back(row.metrics.p_mean);
          sb.x.push_back(100.0 * static_cast<double>(row.metrics.n_out) / static_cast<double>(row.metrics.n));
          sb.y.push_back(row.metrics.delta);
        }
      a.push_back(sa);
      b.push_back(sb);
    }
    plot::save((dir / "fig4a_power_vs_violation.svg").string(),
               plot::xy_chart({"Mean grid exchange vs comfort violation", "C mean (degC)", "P mean (kW)"}, a));
    plot::save((dir / "fig4b_deviating_vs_delta.svg").string(),
               plot::xy_chart({"Deviating samples vs violation per deviation", "deviating samples (%)",
                               "Delta (degC)"},
                              b));
  }
  // Fig. 5: supply temperature and zone temperature against outdoor temperature.
  {
    std::vector<Series> s5a, s5b;
    Series curve{"heating curve", {}, {}, Mark::kLine};
    const mpc::RuleBasedConfig rb;
    for (double t = -5.0; t <= 20.0; t += 0.5) {
      curve.x.push_back(t);
      curve.y.push_back(mpc::heating_curve(t, rb));
    }
    s5a.push_back(curve);
    const ControlRow* shown[3] = {r.rule_based.empty() ? nullptr : &r.rule_based[std::min<std::size_t>(2, r.rule_based.size() - 1)],
                                  nullptr, nullptr};
    for (const auto& row : r.mpc) {
      if (row.architecture == "LSS-NL" && !shown[1]) shown[1] = &row;
      if (row.architecture == "ENC-DEC" && !shown[2]) shown[2] = &row;
    }
    for (const ControlRow* row : shown) {
      if (!row) continue;
      Series sa{row->controller, {}, {}, Mark::kPoints}, sb{row->controller, {}, {}, Mark::kPoints};
      for (std::size_t k = 0; k < row->episode.trace.size(); k += 4) {
        const auto& tr = row->episode.trace.rows[k];
        sa.x.push_back(tr.weather.t_out);
        sa.y.push_back(tr.sp.hp_supply);
        sb.x.push_back(tr.weather.t_out);
        sb.y.push_back(tr.out.t_air[0]);
      }
      if (row->architecture != "RB") s5a.push_back(sa);
      s5b.push_back(sb);
    }
    plot::save((dir / "fig5a_supply_vs_tout.svg").string(),
               plot::xy_chart({"Heat-pump supply setpoint", "outdoor temperature (degC)", "supply (degC)"}, s5a));
    plot::save((dir / "fig5b_zone1_vs_tout.svg").string(),
               plot::xy_chart({"Zone 1 temperature", "outdoor temperature (degC)", "zone 1 (degC)"}, s5b));
    // Figs. 6 and 7: three-day trajectories of the first instance of each architecture.
    int fig = 6;
    for (const ControlRow* row : {shown[1], shown[2]}) {
      if (!row) continue;
      const auto& rows = row->episode.trace.rows;
      const std::size_t n = std::min<std::size_t>(rows.size(), static_cast<std::size_t>(3 * steps_per_day(c)));
      Series t1{"zone 1", {}, {}, Mark::kLine}, sp1{"zone 1 setpoint", {}, {}, Mark::kStep},
          lo{"comfort band", {}, {}, Mark::kLine}, pth{"P_th", {}, {}, Mark::kLine}, pv{"P_pv", {}, {}, Mark::kLine},
          pel{"P_el total", {}, {}, Mark::kLine};
      for (std::size_t k = 0; k < n; ++k) {
        const double h = static_cast<double>(k) * c.plant.control_period / 60.0;
        t1.x.push_back(h), t1.y.push_back(rows[k].out.t_air[0]);
        sp1.x.push_back(h), sp1.y.push_back(rows[k].sp.zone_sp[0]);
        lo.x.push_back(h), lo.y.push_back(mpc::kComfortLo);
        pth.x.push_back(h), pth.y.push_back(rows[k].out.p_el_thermal);
        pv.x.push_back(h), pv.y.push_back(rows[k].out.p_pv);
        pel.x.push_back(h), pel.y.push_back(rows[k].out.p_el_thermal + rows[k].out.p_el_appliances);
      }
      const std::string stem = "fig" + std::to_string(fig++) + "_" + file_stem(row->controller);
      plot::save((dir / (stem + "_temps.svg")).string(),
                 plot::xy_chart({row->controller + " temperatures", "hours", "degC"}, {t1, sp1, lo}));
      plot::save((dir / (stem + "_power.svg")).string(),
                 plot::xy_chart({row->controller + " powers", "hours", "kW"}, {pth, pv, pel}));
    }
  }
}

inline std::string markdown_row(const std::vector<std::string>& cells) {
  std::string s = "|";
  for (const auto& c : cells) s += " " + c + " |";
  return s + "\n";
}

inline void write_report(const fs::path& path, const Config& c, const Result& r) {
  std::ostringstream o;
  o << "# Experiment report\n\n";
  o << "Control episode: " << c.control_days << " days from day " << c.control_start_day << ", horizon H = "
    << c.mpc.horizon << ", rho = " << c.mpc.rho << ". Forecast validation: " << c.validation_days
    << " days of unseen periodic setpoint profiles.\n\n";
  for (int m : c.validation_windows) {
    o << "## Forecast accuracy, m = " << m << "\n\n";
    o << markdown_row({"model", "MAE T (degC)", "MAE P (kW)", "sMRAE T", "sMRAE P"});
    o << markdown_row({"---", "---", "---", "---", "---"});
    for (const auto& f : r.forecasts)
      if (f.metrics.m == m)
        o << markdown_row({f.model, io::fixed(f.metrics.mae_temp, 3), io::fixed(f.metrics.mae_power, 3),
                           io::fixed(f.metrics.smrae_temp, 4), io::fixed(f.metrics.smrae_power, 4)});
    o << "\n";
  }
  o << "## Control performance\n\n";
  o << markdown_row({"controller", "P mean (kW)", "P_th (kW)", "C mean (degC)", "Delta (degC)", "N_out / N",
                     "mean step (s)"});
  o << markdown_row({"---", "---", "---", "---", "---", "---", "---"});
  for (const auto* rows : {&r.rule_based, &r.mpc})
    for (const auto& row : *rows) {
      const auto& m = row.metrics;
      o << markdown_row({row.controller, io::fixed(m.p_mean, 3), io::fixed(m.p_th, 3), io::fixed(m.c_mean, 3),
                         io::fixed(m.delta, 3), std::to_string(m.n_out) + " / " + std::to_string(m.n),
                         row.architecture == "RB" ? "-" : io::fixed(row.mean_solve_seconds(), 3)});
    }
  o << "\n## Solver\n\n";
  o << markdown_row({"controller", "mean SQP iterations", "max_iter steps", "fallback steps", "merit monotone"});
  o << markdown_row({"---", "---", "---", "---", "---"});
  for (const auto& row : r.mpc)
    o << markdown_row({row.controller, io::fixed(row.mean_iterations(), 2), std::to_string(row.steps_with("max_iter")),
                       std::to_string(row.steps_with("fallback")), row.merit_monotone() ? "yes" : "no"});
  o << "\n## Preheating\n\n";
  o << markdown_row({"controller", "zone setpoint 11-15 h", "zone setpoint 0-5 h", "t_out 11-15 h", "t_out 0-5 h"});
  o << markdown_row({"---", "---", "---", "---", "---"});
  for (const auto& row : r.mpc) {
    const auto p = preheat_summary(row.episode.trace);
    o << markdown_row({row.controller, io::fixed(p.midday_zone_sp, 2), io::fixed(p.night_zone_sp, 2),
                       io::fixed(p.midday_t_out, 2), io::fixed(p.night_t_out, 2)});
  }
  o << "\n## Figures\n\n";
  std::vector<std::string> figs;
  for (const auto& e : fs::directory_iterator(path.parent_path() / "plots"))
    if (e.path().extension() == ".svg") figs.push_back(e.path().filename().string());
  std::sort(figs.begin(), figs.end());
  for (const auto& f : figs) o << "![" << f << "](plots/" << f << ")\n\n";
  o << "## Stage timing\n\n";
  for (const auto& [stage, sec] : r.stage_seconds) o << "- " << stage << ": " << io::fixed(sec, 1) << " s\n";
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << o.str();
}

// ---------------------------------------------------------------------------
// Pipeline.

using Log = std::function<void(const std::string&)>;

/// Runs the full protocol into `c.output_dir`. Artifacts written before a
/// failure are kept; the failure is rethrown as a StageError.
inline Result run_experiment(const Config& c, const Log& log = {}) {
  c.validate();
  Result r;
  r.dir = c.output_dir;
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  auto stage = [&](const std::string& name, auto&& body) {
    say("stage " + name);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      body();
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(name, e.what());
    }
    r.stage_seconds.emplace_back(name, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  };

  const fs::path dir = c.output_dir;
  WeatherSeries w_train, w_eval;
  Trace validation;
  rnn::SequenceData rnn_data;
  std::vector<std::shared_ptr<const lss::LssNlModel>> lss_models;
  std::vector<std::shared_ptr<const rnn::EncoderDecoderModel>> rnn_models;
  const auto count = eval::parse_violation_count(c.violation_count);

  stage("setup", [&] {
    for (const char* sub : {"models", "episodes", "plots"}) fs::create_directories(dir / sub);
    std::ofstream(dir / "config.yaml") << to_yaml(c);
  });
  stage("data", [&] {
    w_train = train_weather(c);
    w_eval = eval_weather(c);
    validation = validation_trace(c, w_eval);
    rnn_data = rnn_training_data(c, w_train);
    io::write_trace((dir / "validation_trace.csv").string(), validation);
  });
  stage("fit-lss", [&] {
    io::CsvWriter ident((dir / "identification.csv").string());
    ident.row({"model", "points", "order", "fit_rmse", "spectral_radius", "support"});
    for (const auto& inst : c.lss) {
      say("  fitting " + inst.name);
      auto m = std::make_shared<lss::LssNlModel>(fit_lss_instance(c, w_train, inst));
      serialize::save((dir / "models" / (file_stem(inst.name) + ".json")).string(), *m);
      ident.row({inst.name, std::to_string(inst.points), std::to_string(m->ss.order()), io::num(m->ss.fit_rmse),
                 io::num(m->ss.spectral_radius()), std::to_string(m->power.support.rows())});
      lss_models.push_back(std::move(m));
    }
  });
  stage("fit-rnn", [&] {
    for (const auto& inst : c.rnn) {
      say("  training " + inst.name);
      io::CsvWriter loss((dir / "models" / (file_stem(inst.name) + "_loss.csv")).string());
      loss.row({"epoch", "loss"});
      auto tr = fit_rnn_instance(c, rnn_data, inst, [&](int e, double l) { loss.row({std::to_string(e), io::num(l)}); });
      serialize::save((dir / "models" / (file_stem(inst.name) + ".json")).string(), tr.model);
      rnn_models.push_back(std::make_shared<rnn::EncoderDecoderModel>(std::move(tr.model)));
    }
  });
  stage("forecast", [&] {
    const int first = c.history_steps();
    for (std::size_t i = 0; i < lss_models.size(); ++i) {
      mpc::LssNlPredictor p(lss_models[i], first);
      for (int m : c.validation_windows) r.forecasts.push_back({c.lss[i].name, "LSS-NL", eval::forecast_eval(p, validation, m, first)});
    }
    for (std::size_t i = 0; i < rnn_models.size(); ++i) {
      mpc::EncDecPredictor p(rnn_models[i]);
      for (int m : c.validation_windows) r.forecasts.push_back({c.rnn[i].name, "ENC-DEC", eval::forecast_eval(p, validation, m, first)});
    }
    for (int m : c.validation_windows)
      write_forecast_table(dir / ("forecast_m" + std::to_string(m) + ".csv"), r.forecasts, m);
  });

  const auto setup = mpc::prepare_episode(c.plant, w_eval, Timestamp::from_day(c.control_start_day), c.warmup_steps,
                                          c.control_days * steps_per_day(c));
  auto keep = [&](std::vector<ControlRow>& rows, const std::string& arch, mpc::Episode ep) {
    const std::string stem = file_stem(ep.controller);
    write_episode_log(dir / "episodes" / (stem + "_log.csv"), ep);
    io::write_trace((dir / "episodes" / (stem + "_trace.csv")).string(), ep.trace);
    const auto m = eval::control_metrics(ep.trace, count);
    say("  " + ep.controller + ": P " + io::fixed(m.p_mean, 3) + " P_th " + io::fixed(m.p_th, 3) + " C " +
        io::fixed(m.c_mean, 3) + " Delta " + io::fixed(m.delta, 3));
    rows.push_back({ep.controller, arch, m, std::move(ep)});
  };
  stage("control-rb", [&] {
    for (double zsp : c.rule_based_zone_sp) {
      mpc::RuleBasedConfig rb;
      rb.zone_sp = zsp;
      keep(r.rule_based, "RB", mpc::run_rule_based(setup, w_eval, c.plant, rb));
    }
    write_control_table(dir / "control_rb.csv", r.rule_based);
  });
  stage("control-mpc", [&] {
    for (std::size_t i = 0; i < lss_models.size(); ++i) {
      say("  episode " + c.lss[i].name);
      mpc::LssNlPredictor p(lss_models[i], c.history_steps());
      keep(r.mpc, "LSS-NL", mpc::run_mpc(setup, w_eval, c.plant, p, c.mpc, c.lss[i].name));
    }
    for (std::size_t i = 0; i < rnn_models.size(); ++i) {
      say("  episode " + c.rnn[i].name);
      mpc::EncDecPredictor p(rnn_models[i]);
      keep(r.mpc, "ENC-DEC", mpc::run_mpc(setup, w_eval, c.plant, p, c.mpc, c.rnn[i].name));
    }
    write_control_table(dir / "control_mpc.csv", r.mpc);
    write_solver_stats(dir / "solver_stats.csv", r.mpc);
    write_preheat(dir / "preheat.csv", r.mpc);
  });
  stage("report", [&] {
    write_plots(dir / "plots", c, r);
    write_timing(dir / "timing.csv", r.mpc, r.stage_seconds);
    write_report(dir / "report.md", c, r);
  });
  return r;
}

}  // namespace bldgmpc::experiment
