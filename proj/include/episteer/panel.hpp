#pragma once

#include "episteer/core.hpp"
#include "episteer/epiweek.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace episteer {

inline constexpr std::string_view kNational = "nat";

// nat, hhs1 … hhs10
const std::vector<std::string>& default_regions();

// Orders region names: default regions first in canonical order, then any
// others in their given order.
std::vector<std::string> canonical_region_order(std::vector<std::string> names);

// Weekly wILI per region on a shared, gap-free epiweek index.
struct WiliPanel {
  std::vector<std::string> regions;
  std::vector<EpiWeek> weeks;
  Matrix values;  // weeks × regions, percent
  EpiWeek contamination_start;

  Index num_regions() const { return static_cast<Index>(regions.size()); }
  Index num_weeks() const { return static_cast<Index>(weeks.size()); }
  Index region_index(std::string_view name) const;
  std::optional<Index> week_index(EpiWeek w) const;
  double at(EpiWeek w, Index region) const;

  // Keeps only weeks <= as_of.
  WiliPanel truncated(EpiWeek as_of) const;
  void validate() const;
};

// CSV with header `epiweek,region,wili`.
WiliPanel load_wili(const std::filesystem::path& path, EpiWeek contamination_start);
void save_wili(const WiliPanel& panel, const std::filesystem::path& path);

enum class Bucket { DS1 = 1, DS2 = 2, DS3 = 3, DS4 = 4 };

std::string bucket_name(Bucket b);
Bucket parse_bucket(std::string_view text);

struct Signal {
  std::string name;
  Bucket bucket = Bucket::DS1;

  // "DS1.confirmed_cases"; the form used in CSV `name` columns.
  std::string qualified() const { return bucket_name(bucket) + "." + name; }
  static Signal parse(std::string_view qualified);
};

// Per-region weekly feature vectors. Missing cells hold NaN.
struct ExogenousPanel {
  std::vector<Signal> signals;
  std::vector<std::string> regions;
  std::vector<EpiWeek> weeks;   // gap-free, starts at the coverage start
  std::vector<Matrix> data;     // one weeks × l matrix per region

  Index num_signals() const { return static_cast<Index>(signals.size()); }
  Index num_weeks() const { return static_cast<Index>(weeks.size()); }
  EpiWeek coverage_start() const { return weeks.front(); }
  Index region_index(std::string_view name) const;
  std::optional<Index> week_index(EpiWeek w) const;

  ExogenousPanel truncated(EpiWeek as_of) const;
  // Removes every signal tagged with one of `buckets`.
  ExogenousPanel without_buckets(std::span<const Bucket> buckets) const;
  void validate() const;
};

// Long CSV with header `epiweek,region,name,value`; `name` is bucket-qualified
// and `value` may be empty or NA for a missing cell.
ExogenousPanel load_exogenous(const std::filesystem::path& path);
void save_exogenous(const ExogenousPanel& panel, const std::filesystem::path& path);

// Shortest round-trip decimal form.
std::string format_double(double v);
double parse_double(std::string_view text, const std::string& context);

}  // namespace episteer
