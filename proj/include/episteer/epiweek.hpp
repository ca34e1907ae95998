#pragma once

#include <compare>
#include <string>
#include <string_view>

namespace episteer {

// CDC (MMWR) epidemiological week. Week 1 is the first Sunday-start week with
// at least four days in the calendar year, so years have 52 or 53 weeks.
struct EpiWeek {
  int year = 0;
  int week = 0;

  auto operator<=>(const EpiWeek&) const = default;

  // "YYYYWW", e.g. "202009".
  static EpiWeek parse(std::string_view text);
  std::string str() const;

  EpiWeek next() const;
  EpiWeek prev() const;
  EpiWeek plus(int weeks) const;
};

int weeks_in_year(int year);
// Signed number of weeks from `from` to `to`.
int weeks_between(EpiWeek from, EpiWeek to);
bool is_valid(EpiWeek w);

}  // namespace episteer
