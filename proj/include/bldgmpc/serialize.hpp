#pragma once

// Versioned JSON persistence for identified models. Doubles are written with
// round-trip precision so a save/load cycle is bit-exact.

#include "bldgmpc/lss.hpp"
#include "bldgmpc/rnn.hpp"

#include <json.hpp>

#include <fstream>
#include <string>

namespace bldgmpc::serialize {

using nlohmann::json;

inline constexpr int kFormatVersion = 1;

inline json to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline json to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline Mat mat_from(const json& j, const char* what) {
  try {
    const auto r = j.at("rows").get<Eigen::Index>(), c = j.at("cols").get<Eigen::Index>();
    const json& d = j.at("data");
    if (r < 0 || c < 0 || static_cast<Eigen::Index>(d.size()) != r) throw FormatError(std::string(what) + ": row count");
    Mat m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      if (static_cast<Eigen::Index>(d[i].size()) != c) throw FormatError(std::string(what) + ": column count");
      for (Eigen::Index k = 0; k < c; ++k) m(i, k) = d[i][k].get<double>();
    }
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

inline Vec vec_from(const json& j, const char* what) {
  try {
    if (!j.is_array()) throw FormatError(std::string(what) + ": expected an array");
    Vec v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
    return v;
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

inline void check_header(const json& j, const std::string& kind) {
  if (!j.is_object() || !j.contains("kind") || !j.contains("version"))
    throw FormatError("model file: missing kind/version header");
  if (j["kind"] != kind) throw FormatError("model file: expected kind '" + kind + "', found " + j["kind"].dump());
  if (j["version"] != kFormatVersion)
    throw FormatError("model file: unsupported version " + j["version"].dump());
}

// ---------------------------------------------------------------------------

inline json to_json(const lss::StateSpaceModel& m) {
  return {{"A", to_json(m.A)},
          {"B", to_json(m.B)},
          {"C", to_json(m.C)},
          {"D", to_json(m.D)},
          {"K", to_json(m.K)},
          {"innovation_covariance", to_json(m.innovation_covariance)},
          {"u_offset", to_json(m.u_offset)},
          {"y_offset", to_json(m.y_offset)},
          {"fit_rmse", m.fit_rmse}};
}

inline lss::StateSpaceModel state_space_from(const json& j) {
  lss::StateSpaceModel m;
  m.A = mat_from(j.at("A"), "A");
  m.B = mat_from(j.at("B"), "B");
  m.C = mat_from(j.at("C"), "C");
  m.D = mat_from(j.at("D"), "D");
  m.K = mat_from(j.at("K"), "K");
  m.innovation_covariance = mat_from(j.at("innovation_covariance"), "innovation_covariance");
  m.u_offset = vec_from(j.at("u_offset"), "u_offset");
  m.y_offset = vec_from(j.at("y_offset"), "y_offset");
  m.fit_rmse = j.at("fit_rmse").get<double>();
  try {
    m.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(e.what());
  }
  return m;
}

inline json to_json(const lss::KernelRegressor& r) {
  return {{"support", to_json(r.support)},
          {"alpha", to_json(r.alpha)},
          {"scale", to_json(r.scale)},
          {"gamma", r.gamma},
          {"ridge", r.ridge}};
}

inline lss::KernelRegressor kernel_from(const json& j) {
  lss::KernelRegressor r;
  r.support = mat_from(j.at("support"), "support");
  r.alpha = vec_from(j.at("alpha"), "alpha");
  r.scale = vec_from(j.at("scale"), "scale");
  r.gamma = j.at("gamma").get<double>();
  r.ridge = j.at("ridge").get<double>();
  if (r.alpha.size() != r.support.rows() || r.scale.size() != r.support.cols())
    throw FormatError("kernel regressor: inconsistent shapes");
  return r;
}

inline json to_json(const lss::LssNlModel& m) {
  return {{"kind", "lss-nl"}, {"version", kFormatVersion}, {"state_space", to_json(m.ss)}, {"power", to_json(m.power)}};
}

inline lss::LssNlModel lss_nl_from(const json& j) {
  check_header(j, "lss-nl");
  try {
    lss::LssNlModel m{state_space_from(j.at("state_space")), kernel_from(j.at("power"))};
    if (m.power.dim() != m.ss.inputs() + m.ss.outputs())
      throw FormatError("lss-nl: regressor width does not match the state-space model");
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("lss-nl: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

inline json to_json(const rnn::Normalizer& n) { return {{"mean", to_json(n.mean)}, {"std", to_json(n.std)}}; }

inline rnn::Normalizer normalizer_from(const json& j) {
  return {vec_from(j.at("mean"), "mean"), vec_from(j.at("std"), "std")};
}

inline json to_json(const rnn::EncoderDecoderModel& m) {
  json head = json::array();
  for (const auto& l : m.w.head) head.push_back({{"W", to_json(l.W)}, {"b", to_json(l.b)}});
  return {{"kind", "enc-dec"},
          {"version", kFormatVersion},
          {"inputs", m.inputs},
          {"outputs", m.outputs},
          {"energy", m.energy},
          {"encoder_steps", m.encoder_steps},
          {"encoder", {{"W", to_json(m.w.enc.W)}, {"b", to_json(m.w.enc.b)}}},
          {"decoder", {{"W", to_json(m.w.dec.W)}, {"b", to_json(m.w.dec.b)}}},
          {"head", std::move(head)},
          {"u_norm", to_json(m.u_norm)},
          {"y_norm", to_json(m.y_norm)},
          {"z_norm", to_json(m.z_norm)}};
}

inline rnn::EncoderDecoderModel enc_dec_from(const json& j) {
  check_header(j, "enc-dec");
  try {
    rnn::EncoderDecoderModel m;
    m.inputs = j.at("inputs").get<int>();
    m.outputs = j.at("outputs").get<int>();
    m.energy = j.at("energy").get<int>();
    m.encoder_steps = j.at("encoder_steps").get<int>();
    m.w.enc = {mat_from(j.at("encoder").at("W"), "encoder.W"), vec_from(j.at("encoder").at("b"), "encoder.b")};
    m.w.dec = {mat_from(j.at("decoder").at("W"), "decoder.W"), vec_from(j.at("decoder").at("b"), "decoder.b")};
    for (const auto& l : j.at("head")) m.w.head.push_back({mat_from(l.at("W"), "head.W"), vec_from(l.at("b"), "head.b")});
    m.u_norm = normalizer_from(j.at("u_norm"));
    m.y_norm = normalizer_from(j.at("y_norm"));
    m.z_norm = normalizer_from(j.at("z_norm"));
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw FormatError(std::string("enc-dec: ") + e.what());
  } catch (const InvalidInput& e) {
    throw FormatError(e.what());
  }
}

// ---------------------------------------------------------------------------

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << j.dump(1) << '\n';
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void save(const std::string& path, const lss::LssNlModel& m) { write_json(path, to_json(m)); }
inline void save(const std::string& path, const rnn::EncoderDecoderModel& m) { write_json(path, to_json(m)); }
inline lss::LssNlModel load_lss_nl(const std::string& path) { return lss_nl_from(read_json(path)); }
inline rnn::EncoderDecoderModel load_enc_dec(const std::string& path) { return enc_dec_from(read_json(path)); }

}  // namespace bldgmpc::serialize
