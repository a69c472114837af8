#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bldgmpc {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Error hierarchy. Every failure surfaced by the library derives from Error so
// callers can catch one type and still dispatch on the concrete cause.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a documented precondition or type invariant.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Plant integration produced a non-finite or out-of-range state.
class SimulationFault : public Error {
 public:
  using Error::Error;
};

// Subspace identification could not proceed (e.g. insufficient excitation).
class IdentificationError : public Error {
 public:
  using Error::Error;
};

// Linear system could not be solved (singular Gram matrix, ...).
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Stochastic training diverged (loss became non-finite).
class TrainingDivergence : public Error {
 public:
  using Error::Error;
};

// Serialized artifact has an unexpected format or version.
class FormatError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidInput(what);
}

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

/// Wall-clock instant measured in whole seconds since 2021-01-01T00:00:00
/// local solar time. Calendar years are non-leap; day_of_year() wraps every
/// 365 days so multi-year series stay well defined.
struct Timestamp {
  std::int64_t seconds = 0;

  static constexpr std::int64_t kMinute = 60;
  static constexpr std::int64_t kHour = 3600;
  static constexpr std::int64_t kDay = 86400;

  static Timestamp from_day(double day_of_year_zero_based) {
    return Timestamp{static_cast<std::int64_t>(std::llround(day_of_year_zero_based * kDay))};
  }

  Timestamp plus_minutes(double minutes) const {
    return Timestamp{seconds + static_cast<std::int64_t>(std::llround(minutes * kMinute))};
  }

  // Zero-based day index within the (wrapped) year.
  int day_of_year() const {
    std::int64_t d = seconds / kDay;
    if (seconds < 0 && seconds % kDay != 0) --d;
    d %= 365;
    if (d < 0) d += 365;
    return static_cast<int>(d);
  }

  double hour_of_day() const {
    std::int64_t s = seconds % kDay;
    if (s < 0) s += kDay;
    return static_cast<double>(s) / kHour;
  }

  // Fractional days since the epoch, used for seasonal trends.
  double days() const { return static_cast<double>(seconds) / kDay; }

  std::string to_string() const {
    using namespace std::chrono;
    std::int64_t day_index = seconds / kDay;
    std::int64_t rem = seconds % kDay;
    if (rem < 0) {
      rem += kDay;
      --day_index;
    }
    const year_month_day ymd{sys_days{year{2021} / January / 1} + std::chrono::days{day_index}};
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(rem / kHour), static_cast<int>((rem % kHour) / kMinute),
                  static_cast<int>(rem % kMinute));
    return buf;
  }

  static Timestamp parse(std::string_view text) {
    using namespace std::chrono;
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
    const std::string str(text);
    const int n = std::sscanf(str.c_str(), "%d-%d-%dT%d:%d:%d", &y, &mo, &d, &h, &mi, &s);
    if (n < 5) throw FormatError("malformed timestamp '" + str + "'");
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) throw FormatError("invalid calendar date '" + str + "'");
    const auto delta = sys_days{ymd} - sys_days{year{2021} / January / 1};
    return Timestamp{static_cast<std::int64_t>(delta.count()) * kDay + h * kHour + mi * kMinute + s};
  }

  auto operator<=>(const Timestamp&) const = default;
};

}  // namespace bldgmpc
