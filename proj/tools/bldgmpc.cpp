// Command-line front end: data generation, model fitting, single episodes,
// forecast evaluation and the full comparison pipeline.

#include "bldgmpc/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace bldgmpc;
namespace ex = bldgmpc::experiment;

namespace {

experiment::Config config_or_default(const std::string& path) {
  return path.empty() ? experiment::Config{} : experiment::load_config(path);
}

Trace trace_from(const std::string& trace, const std::string& setpoints, const std::string& weather) {
  Trace t = io::read_trace(trace, setpoints, weather);
  require(!t.empty(), "trace " + trace + " is empty");
  return t;
}

std::unique_ptr<mpc::Predictor> load_predictor(const std::string& path, int history) {
  const auto j = serialize::read_json(path);
  const std::string kind = j.value("kind", "");
  if (kind == "lss-nl")
    return std::make_unique<mpc::LssNlPredictor>(std::make_shared<lss::LssNlModel>(serialize::lss_nl_from(j)), history);
  if (kind == "enc-dec")
    return std::make_unique<mpc::EncDecPredictor>(
        std::make_shared<rnn::EncoderDecoderModel>(serialize::enc_dec_from(j)));
  throw FormatError(path + ": unknown model kind '" + kind + "'");
}

void print_metrics(const std::string& name, const eval::ControlMetrics& m) {
  std::cout << name << ": P_mean " << io::fixed(m.p_mean, 4) << " kW, P_th " << io::fixed(m.p_th, 4) << " kW, C_mean "
            << io::fixed(m.c_mean, 4) << " degC, Delta " << io::fixed(m.delta, 4) << " degC, N_out " << m.n_out << "/"
            << m.n << "\n";
}

void write_episode(const std::string& dir, const mpc::Episode& ep, const ex::Config& c) {
  std::filesystem::create_directories(dir);
  const std::string stem = ex::file_stem(ep.controller);
  ex::write_episode_log(std::filesystem::path(dir) / (stem + "_log.csv"), ep);
  io::write_trace((std::filesystem::path(dir) / (stem + "_trace.csv")).string(), ep.trace);
  print_metrics(ep.controller, eval::control_metrics(ep.trace, eval::parse_violation_count(c.violation_count)));
}

mpc::EpisodeSetup episode_setup(const ex::Config& c, const WeatherSeries& w) {
  return mpc::prepare_episode(c.plant, w, Timestamp::from_day(c.control_start_day), c.warmup_steps,
                              c.control_days * ex::steps_per_day(c));
}

void print_csv_table(const std::string& path) {
  const io::CsvTable t = io::read_csv(path);
  std::cout << "\n" << path << "\n" << ex::markdown_row(t.header);
  std::vector<std::string> sep(t.header.size(), "---");
  std::cout << ex::markdown_row(sep);
  for (const auto& row : t.rows) {
    std::vector<std::string> cells;
    for (const auto& cell : row) {
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      const bool numeric = !cell.empty() && end == cell.c_str() + cell.size();
      cells.push_back(numeric && cell.find('.') != std::string::npos ? io::fixed(v, 4) : cell);
    }
    std::cout << ex::markdown_row(cells);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Building MPC workbench: surrogate plant, LSS-NL and ENC-DEC predictors, SQP-based MPC"};
  app.require_subcommand(1);

  // weather -----------------------------------------------------------------
  auto* weather = app.add_subcommand("weather", "Write a synthetic weather series as CSV");
  int w_days = 365;
  std::uint64_t w_seed = 1;
  std::string w_out;
  weather->add_option("--days", w_days, "Number of days")->check(CLI::PositiveNumber);
  weather->add_option("--seed", w_seed, "Random seed");
  weather->add_option("-o,--out", w_out, "Output CSV")->required();

  // excite ------------------------------------------------------------------
  auto* excite = app.add_subcommand("excite", "Generate a setpoint schedule");
  std::string e_kind = "multisine", e_out;
  int e_steps = 96 * 7, e_tones = 8;
  std::uint64_t e_seed = 1;
  double e_start = 0.0, e_lo = 1.0 / 24.0, e_hi = 1.0, e_dwell = 6.0;
  excite->add_option("--kind", e_kind, "multisine | piecewise-constant | sinusoidal | square | triangular | mixed");
  excite->add_option("--steps", e_steps, "Number of control periods")->check(CLI::PositiveNumber);
  excite->add_option("--seed", e_seed, "Random seed");
  excite->add_option("--start-day", e_start, "Start, days since the epoch");
  excite->add_option("--tones", e_tones, "Multisine tones");
  excite->add_option("--band-lo", e_lo, "Multisine lower band edge, 1/h");
  excite->add_option("--band-hi", e_hi, "Multisine upper band edge, 1/h");
  excite->add_option("--dwell", e_dwell, "Mean dwell time of piecewise-constant setpoints, h");
  excite->add_option("-o,--out", e_out, "Output CSV")->required();

  // simulate ----------------------------------------------------------------
  auto* simulate = app.add_subcommand("simulate", "Run the plant through a setpoint schedule");
  std::string s_sp, s_weather, s_out, s_cfg;
  double s_tz = 21.0, s_tt = 42.0;
  simulate->add_option("--setpoints", s_sp, "Setpoint schedule CSV")->required()->check(CLI::ExistingFile);
  simulate->add_option("--weather", s_weather, "Weather CSV covering the schedule")->required()->check(CLI::ExistingFile);
  simulate->add_option("--config", s_cfg, "Experiment config (plant section is used)");
  simulate->add_option("--t-zone", s_tz, "Initial zone temperature");
  simulate->add_option("--t-tank", s_tt, "Initial tank temperature");
  simulate->add_option("-o,--out", s_out, "Output trace CSV")->required();

  // fit-lss -----------------------------------------------------------------
  auto* fit_lss = app.add_subcommand("fit-lss", "Identify an LSS-NL model from a trace");
  std::string fl_trace, fl_sp, fl_weather, fl_cfg, fl_out;
  fit_lss->add_option("--trace", fl_trace, "Plant trace CSV")->required()->check(CLI::ExistingFile);
  fit_lss->add_option("--setpoints", fl_sp, "Setpoint CSV aligned with the trace")->required()->check(CLI::ExistingFile);
  fit_lss->add_option("--weather", fl_weather, "Weather CSV")->required()->check(CLI::ExistingFile);
  fit_lss->add_option("--config", fl_cfg, "Experiment config (lss section is used)");
  fit_lss->add_option("-o,--out", fl_out, "Output model JSON")->required();

  // fit-rnn -----------------------------------------------------------------
  auto* fit_rnn = app.add_subcommand("fit-rnn", "Train an ENC-DEC model on a trace");
  std::string fr_trace, fr_sp, fr_weather, fr_cfg, fr_out, fr_loss;
  int fr_epochs = 8;
  std::uint64_t fr_seed = 21;
  fit_rnn->add_option("--trace", fr_trace, "Plant trace CSV")->required()->check(CLI::ExistingFile);
  fit_rnn->add_option("--setpoints", fr_sp, "Setpoint CSV aligned with the trace")->required()->check(CLI::ExistingFile);
  fit_rnn->add_option("--weather", fr_weather, "Weather CSV")->required()->check(CLI::ExistingFile);
  fit_rnn->add_option("--config", fr_cfg, "Experiment config (rnn section is used)");
  fit_rnn->add_option("--epochs", fr_epochs, "Training epochs")->check(CLI::PositiveNumber);
  fit_rnn->add_option("--seed", fr_seed, "Seed");
  fit_rnn->add_option("--loss", fr_loss, "Training-curve CSV");
  fit_rnn->add_option("-o,--out", fr_out, "Output model JSON")->required();

  // mpc-run / rb-run --------------------------------------------------------
  auto* mpc_run = app.add_subcommand("mpc-run", "Closed-loop MPC episode with a saved model");
  std::string m_model, m_cfg, m_out = "episode", m_name;
  int m_days = 0, m_h = 0;
  mpc_run->add_option("--model", m_model, "Model JSON (lss-nl or enc-dec)")->required()->check(CLI::ExistingFile);
  mpc_run->add_option("--config", m_cfg, "Experiment config (weather and control sections are used)");
  mpc_run->add_option("--days", m_days, "Override episode length");
  mpc_run->add_option("--horizon", m_h, "Override horizon H");
  mpc_run->add_option("--name", m_name, "Controller name in outputs");
  mpc_run->add_option("-o,--out", m_out, "Output directory");

  auto* rb_run = app.add_subcommand("rb-run", "Closed-loop rule-based episode");
  std::string r_cfg, r_out = "episode";
  double r_zone = 20.0;
  int r_days = 0;
  rb_run->add_option("--config", r_cfg, "Experiment config");
  rb_run->add_option("--zone-sp", r_zone, "Fixed zone setpoint");
  rb_run->add_option("--days", r_days, "Override episode length");
  rb_run->add_option("-o,--out", r_out, "Output directory");

  // evaluate ----------------------------------------------------------------
  auto* evaluate = app.add_subcommand("evaluate", "Sliding-window forecast scores of a saved model");
  std::string v_model, v_cfg, v_trace, v_sp, v_weather;
  std::vector<int> v_windows;
  evaluate->add_option("--model", v_model, "Model JSON")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--config", v_cfg, "Experiment config (validation section is used)");
  evaluate->add_option("--window", v_windows, "Window lengths m (default from config)");
  evaluate->add_option("--trace", v_trace, "Validation trace CSV instead of the generated one");
  evaluate->add_option("--setpoints", v_sp, "Setpoint CSV for --trace");
  evaluate->add_option("--weather", v_weather, "Weather CSV for --trace");

  // report / run ------------------------------------------------------------
  auto* report = app.add_subcommand("report", "Print the metric tables of an artifact directory");
  std::string p_dir = "artifacts";
  report->add_option("dir", p_dir, "Artifact directory")->check(CLI::ExistingDirectory);

  auto* run = app.add_subcommand("run", "Full comparison pipeline");
  std::string x_cfg, x_out;
  run->add_option("--config", x_cfg, "Experiment config");
  run->add_option("-o,--out", x_out, "Override output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*weather) {
      io::write_weather(w_out, signals::synth_weather(w_days, w_seed));
    } else if (*excite) {
      signals::ExcitationSpec s;
      s.kind = signals::parse_kind(e_kind);
      s.seed = e_seed;
      s.start = Timestamp::from_day(e_start);
      s.tones = e_tones;
      s.band_lo_per_hour = e_lo;
      s.band_hi_per_hour = e_hi;
      s.mean_dwell_hours = e_dwell;
      const auto sp = signals::generate(s, e_steps);
      std::vector<Timestamp> t;
      for (int k = 0; k < e_steps; ++k) t.push_back(s.start.plus_minutes(k * s.step_minutes));
      io::write_setpoints(e_out, t, sp);
    } else if (*simulate) {
      const auto c = config_or_default(s_cfg);
      const auto sched = io::read_setpoints(s_sp);
      require(!sched.setpoints.empty(), "simulate: empty schedule");
      const WeatherSeries w{io::read_weather(s_weather), c.plant.control_period};
      PlantState st = PlantState::uniform(c.plant, s_tz, s_tt, sched.timestamps.front());
      io::write_trace(s_out, bldgmpc::simulate(st, sched.setpoints, w, c.plant));
    } else if (*fit_lss) {
      const auto c = config_or_default(fl_cfg);
      const Trace t = trace_from(fl_trace, fl_sp, fl_weather);
      const auto m = lss::fit_lss_nl(t.inputs(), t.temps(), t.thermal_power().col(0), ex::lss_fit_config(c));
      serialize::save(fl_out, m);
      std::cout << "order " << m.ss.order() << ", fit rmse " << io::fixed(m.ss.fit_rmse, 4) << " degC, spectral radius "
                << io::fixed(m.ss.spectral_radius(), 4) << ", support " << m.power.support.rows() << "\n";
    } else if (*fit_rnn) {
      const auto c = config_or_default(fr_cfg);
      const Trace t = trace_from(fr_trace, fr_sp, fr_weather);
      std::unique_ptr<io::CsvWriter> loss;
      if (!fr_loss.empty()) {
        loss = std::make_unique<io::CsvWriter>(fr_loss);
        loss->row({"epoch", "loss"});
      }
      const auto tr = ex::fit_rnn_instance(c, {t.inputs(), t.temps(), t.thermal_power()}, {"cli", fr_epochs, fr_seed},
                                           [&](int e, double l) {
                                             std::cerr << "epoch " << e << " loss " << io::num(l) << "\n";
                                             if (loss) loss->row({std::to_string(e), io::num(l)});
                                           });
      serialize::save(fr_out, tr.model);
    } else if (*mpc_run) {
      auto c = config_or_default(m_cfg);
      if (m_days > 0) c.control_days = m_days;
      if (m_h > 0) c.mpc.horizon = m_h;
      const WeatherSeries w = ex::eval_weather(c);
      auto pred = load_predictor(m_model, c.history_steps());
      const std::string name = m_name.empty() ? std::filesystem::path(m_model).stem().string() : m_name;
      const auto ep = mpc::run_mpc(episode_setup(c, w), w, c.plant, *pred, c.mpc, name,
                                   [&](int k, const mpc::StepOutcome& o) {
                                     if (k % 96 == 0)
                                       std::cerr << "step " << k << " " << o.termination << " "
                                                 << io::fixed(o.solve_seconds, 3) << " s\n";
                                   });
      write_episode(m_out, ep, c);
    } else if (*rb_run) {
      auto c = config_or_default(r_cfg);
      if (r_days > 0) c.control_days = r_days;
      const WeatherSeries w = ex::eval_weather(c);
      mpc::RuleBasedConfig rb;
      rb.zone_sp = r_zone;
      write_episode(r_out, mpc::run_rule_based(episode_setup(c, w), w, c.plant, rb), c);
    } else if (*evaluate) {
      const auto c = config_or_default(v_cfg);
      const Trace val = v_trace.empty() ? ex::validation_trace(c, ex::eval_weather(c))
                                        : trace_from(v_trace, v_sp, v_weather);
      auto pred = load_predictor(v_model, c.history_steps());
      for (int m : v_windows.empty() ? c.validation_windows : v_windows) {
        const auto f = eval::forecast_eval(*pred, val, m, c.history_steps());
        std::cout << "m=" << m << " windows " << f.windows << " MAE T " << io::fixed(f.mae_temp, 4) << " P "
                  << io::fixed(f.mae_power, 4) << " sMRAE T " << io::fixed(f.smrae_temp, 4) << " P "
                  << io::fixed(f.smrae_power, 4) << "\n";
      }
    } else if (*report) {
      for (const auto& name : {"forecast_m4.csv", "forecast_m96.csv", "control_rb.csv", "control_mpc.csv",
                               "solver_stats.csv", "timing.csv"}) {
        const auto path = std::filesystem::path(p_dir) / name;
        if (std::filesystem::exists(path)) print_csv_table(path.string());
      }
    } else if (*run) {
      auto c = config_or_default(x_cfg);
      if (!x_out.empty()) c.output_dir = x_out;
      ex::run_experiment(c, [](const std::string& s) { std::cerr << s << std::endl; });
      std::cout << "artifacts written to " << c.output_dir << "\n";
    }
  } catch (const ex::StageError& e) {
    std::cerr << "error in stage " << e.stage() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
