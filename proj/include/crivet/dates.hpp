#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

#include "crivet/errors.hpp"

namespace crivet {

// Calendar days as a count since 1970-01-01. All date arithmetic is integer
// day arithmetic; months only enter through labels.
using Day = std::int32_t;

inline Day make_day(int year, int month, int day) {
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{year}, std::chrono::month{unsigned(month)},
                           std::chrono::day{unsigned(day)}};
  if (!ymd.ok()) {
    throw ValidationError("invalid calendar date");
  }
  return static_cast<Day>(sys_days{ymd}.time_since_epoch().count());
}

// Strict ISO-8601 "YYYY-MM-DD".
inline std::optional<Day> parse_day(std::string_view s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  int y = 0, m = 0, d = 0;
  for (int i : {0, 1, 2, 3}) {
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
    y = y * 10 + (s[i] - '0');
  }
  for (int i : {5, 6}) {
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
    m = m * 10 + (s[i] - '0');
  }
  for (int i : {8, 9}) {
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
    d = d * 10 + (s[i] - '0');
  }
  using namespace std::chrono;
  const year_month_day ymd{std::chrono::year{y}, std::chrono::month{unsigned(m)},
                           std::chrono::day{unsigned(d)}};
  if (!ymd.ok()) return std::nullopt;
  return static_cast<Day>(sys_days{ymd}.time_since_epoch().count());
}

inline std::string format_day(Day day) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{day}}};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", int(ymd.year()),
                unsigned(ymd.month()), unsigned(ymd.day()));
  return buf;
}

// "YYYY-MM" bucket used for the admission-month and onset-month factors.
inline std::string month_label(Day day) {
  using namespace std::chrono;
  const year_month_day ymd{sys_days{days{day}}};
  char buf[12];
  std::snprintf(buf, sizeof(buf), "%04d-%02u", int(ymd.year()), unsigned(ymd.month()));
  return buf;
}

}  // namespace crivet
