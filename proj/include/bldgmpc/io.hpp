#pragma once

// CSV import/export for weather, setpoint schedules and plant traces.

#include "bldgmpc/dataset.hpp"

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace bldgmpc::io {

// Shortest text that parses back to the same double on this platform.
inline std::string num(double v) {
  char buf[32];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// Fixed number of decimals, for report tables.
inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw FormatError("csv: missing column '" + name + "'");
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("csv: cannot open " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("csv: " + path + " is empty");
  t.header = split(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto cells = split(line);
    if (cells.size() != t.header.size())
      throw FormatError("csv: " + path + ":" + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                        " fields, expected " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(cells));
  }
  return t;
}

inline double to_double(const std::string& s, const std::string& where) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw FormatError("csv: bad number '" + s + "' in " + where);
  return v;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : out_(path) {
    if (!out_) throw FormatError("csv: cannot write " + path);
  }
  CsvWriter& row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
    return *this;
  }

 private:
  std::ofstream out_;
};

inline std::vector<std::string> numbered(const std::string& prefix, int n) {
  std::vector<std::string> out;
  for (int i = 1; i <= n; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

inline std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// ---------------------------------------------------------------------------

inline void write_weather(const std::string& path, const std::vector<WeatherSample>& w) {
  CsvWriter out(path);
  out.row({"timestamp", "ghi", "t_out", "rh"});
  for (const auto& s : w) out.row({s.timestamp.to_string(), num(s.ghi), num(s.t_out), num(s.rel_humidity)});
}

inline std::vector<WeatherSample> read_weather(const std::string& path) {
  const CsvTable t = read_csv(path);
  const int ct = t.column("timestamp"), cg = t.column("ghi"), co = t.column("t_out"), ch = t.column("rh");
  std::vector<WeatherSample> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = path + " row " + std::to_string(r + 2);
    WeatherSample s;
    s.timestamp = Timestamp::parse(t.rows[r][ct]);
    s.ghi = to_double(t.rows[r][cg], where);
    s.t_out = to_double(t.rows[r][co], where);
    s.rel_humidity = to_double(t.rows[r][ch], where);
    try {
      s.validate();
    } catch (const InvalidInput& e) {
      throw FormatError(std::string(e.what()) + " at " + where);
    }
    out.push_back(s);
  }
  return out;
}

inline std::vector<std::string> setpoint_header() {
  return concat(concat({"hp_supply"}, numbered("tank_", kTanks)), numbered("zone_", kApartments));
}

inline std::vector<std::string> setpoint_cells(const ControlSetpoints& sp) {
  std::vector<std::string> c{num(sp.hp_supply)};
  for (double t : sp.tank_sp) c.push_back(num(t));
  for (double z : sp.zone_sp) c.push_back(num(z));
  return c;
}

inline void write_setpoints(const std::string& path, const std::vector<Timestamp>& t,
                            const std::vector<ControlSetpoints>& sp) {
  require(t.size() == sp.size(), "write_setpoints: timestamps and setpoints must align");
  CsvWriter out(path);
  out.row(concat({"timestamp"}, setpoint_header()));
  for (std::size_t k = 0; k < sp.size(); ++k) out.row(concat({t[k].to_string()}, setpoint_cells(sp[k])));
}

struct SetpointSchedule {
  std::vector<Timestamp> timestamps;
  std::vector<ControlSetpoints> setpoints;
};

inline SetpointSchedule read_setpoints(const std::string& path) {
  const CsvTable t = read_csv(path);
  const int ct = t.column("timestamp");
  std::vector<int> cols;
  for (const auto& name : setpoint_header()) cols.push_back(t.column(name));
  SetpointSchedule s;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = path + " row " + std::to_string(r + 2);
    Vec v(kNumSetpoints);
    for (int i = 0; i < kNumSetpoints; ++i) v[i] = to_double(t.rows[r][cols[i]], where);
    ControlSetpoints sp = ControlSetpoints::from_vector(v);
    if (auto msg = sp.violation(); !msg.empty()) throw FormatError("invalid setpoints at " + where + ": " + msg);
    s.timestamps.push_back(Timestamp::parse(t.rows[r][ct]));
    s.setpoints.push_back(sp);
  }
  return s;
}

inline std::vector<std::string> trace_header(int zones) {
  return concat(concat(concat({"timestamp"}, numbered("t_air_", zones)), numbered("t_tank_", kTanks)),
                {"p_el_thermal", "p_el_appliances", "p_pv", "hp_on"});
}

inline std::vector<std::string> trace_cells(const TraceRow& r) {
  std::vector<std::string> c{r.timestamp.to_string()};
  for (Eigen::Index z = 0; z < r.out.t_air.size(); ++z) c.push_back(num(r.out.t_air[z]));
  for (double t : r.out.t_tank) c.push_back(num(t));
  c.push_back(num(r.out.p_el_thermal));
  c.push_back(num(r.out.p_el_appliances));
  c.push_back(num(r.out.p_pv));
  c.push_back(r.out.hp_on ? "1" : "0");
  return c;
}

inline void write_trace(const std::string& path, const Trace& trace) {
  CsvWriter out(path);
  const int zones = trace.empty() ? 8 : static_cast<int>(trace.rows.front().out.t_air.size());
  out.row(trace_header(zones));
  for (const auto& r : trace.rows) out.row(trace_cells(r));
}

/// Rebuilds a trace from its three CSV artifacts (rows matched by timestamp).
inline Trace read_trace(const std::string& trace_path, const std::string& setpoint_path,
                        const std::string& weather_path, int zones = 8) {
  const CsvTable t = read_csv(trace_path);
  const SetpointSchedule sched = read_setpoints(setpoint_path);
  WeatherSeries weather;
  weather.samples = read_weather(weather_path);
  const int ct = t.column("timestamp");
  std::vector<int> air, tank;
  for (const auto& n : numbered("t_air_", zones)) air.push_back(t.column(n));
  for (const auto& n : numbered("t_tank_", kTanks)) tank.push_back(t.column(n));
  const int cth = t.column("p_el_thermal"), cap = t.column("p_el_appliances"), cpv = t.column("p_pv"),
            chp = t.column("hp_on");
  if (sched.setpoints.size() != t.rows.size())
    throw FormatError("trace and setpoint files have different lengths (" + std::to_string(t.rows.size()) + " vs " +
                      std::to_string(sched.setpoints.size()) + ")");
  Trace trace;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const std::string where = trace_path + " row " + std::to_string(r + 2);
    TraceRow row;
    row.timestamp = Timestamp::parse(t.rows[r][ct]);
    if (!(row.timestamp == sched.timestamps[r]))
      throw FormatError("trace/setpoint timestamp mismatch at " + where);
    row.sp = sched.setpoints[r];
    row.weather = weather.at(row.timestamp);
    row.out.t_air.resize(zones);
    for (int z = 0; z < zones; ++z) row.out.t_air[z] = to_double(t.rows[r][air[z]], where);
    for (int i = 0; i < kTanks; ++i) row.out.t_tank[i] = to_double(t.rows[r][tank[i]], where);
    row.out.p_el_thermal = to_double(t.rows[r][cth], where);
    row.out.p_el_appliances = to_double(t.rows[r][cap], where);
    row.out.p_pv = to_double(t.rows[r][cpv], where);
    row.out.hp_on = t.rows[r][chp] == "1";
    trace.rows.push_back(std::move(row));
  }
  return trace;
}

}  // namespace bldgmpc::io
