#include "episteer/epiweek.hpp"

#include "episteer/core.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>

namespace episteer {

namespace {

using namespace std::chrono;

// Sunday on or before January 4th.
sys_days mmwr_year_start(int year) {
  const sys_days jan4 = year_month_day{std::chrono::year{year}, January, day{4}};
  const weekday wd{jan4};
  return jan4 - days{wd.c_encoding()};
}

sys_days week_start(EpiWeek w) { return mmwr_year_start(w.year) + weeks{w.week - 1}; }

EpiWeek from_days(sys_days d) {
  const int y = static_cast<int>(year_month_day{d}.year());
  for (int year : {y + 1, y, y - 1}) {
    const sys_days start = mmwr_year_start(year);
    if (d >= start) return {year, static_cast<int>((d - start).count() / 7) + 1};
  }
  throw ValidationError("epiweek out of range");
}

}  // namespace

int weeks_in_year(int year) {
  return static_cast<int>((mmwr_year_start(year + 1) - mmwr_year_start(year)).count() / 7);
}

bool is_valid(EpiWeek w) { return w.week >= 1 && w.week <= weeks_in_year(w.year); }

EpiWeek EpiWeek::parse(std::string_view text) {
  if (text.size() != 6) throw ValidationError("malformed epiweek '" + std::string(text) + "' (expected YYYYWW)");
  int year = 0, week = 0;
  auto r1 = std::from_chars(text.data(), text.data() + 4, year);
  auto r2 = std::from_chars(text.data() + 4, text.data() + 6, week);
  if (r1.ec != std::errc{} || r1.ptr != text.data() + 4 || r2.ec != std::errc{} || r2.ptr != text.data() + 6) {
    throw ValidationError("malformed epiweek '" + std::string(text) + "' (expected YYYYWW)");
  }
  EpiWeek w{year, week};
  if (!is_valid(w)) throw ValidationError("malformed epiweek '" + std::string(text) + "': week out of range");
  return w;
}

std::string EpiWeek::str() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d%02d", year, week);
  return buf;
}

EpiWeek EpiWeek::next() const { return week >= weeks_in_year(year) ? EpiWeek{year + 1, 1} : EpiWeek{year, week + 1}; }

EpiWeek EpiWeek::prev() const { return week <= 1 ? EpiWeek{year - 1, weeks_in_year(year - 1)} : EpiWeek{year, week - 1}; }

EpiWeek EpiWeek::plus(int n) const { return from_days(week_start(*this) + weeks{n}); }

int weeks_between(EpiWeek from, EpiWeek to) {
  return static_cast<int>((week_start(to) - week_start(from)).count() / 7);
}

}  // namespace episteer
