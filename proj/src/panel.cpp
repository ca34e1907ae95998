#include "episteer/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

namespace episteer {

namespace {

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

std::vector<EpiWeek> contiguous_weeks(EpiWeek first, EpiWeek last) {
  std::vector<EpiWeek> weeks;
  for (EpiWeek w = first; w <= last; w = w.next()) weeks.push_back(w);
  return weeks;
}

std::optional<Index> contiguous_index(const std::vector<EpiWeek>& weeks, EpiWeek w) {
  if (weeks.empty() || w < weeks.front() || w > weeks.back()) return std::nullopt;
  return static_cast<Index>(weeks_between(weeks.front(), w));
}

std::ifstream open_csv(const std::filesystem::path& path, std::string_view header) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != header) {
    throw ValidationError(path.string() + ": expected header '" + std::string(header) + "'");
  }
  return in;
}

}  // namespace

const std::vector<std::string>& default_regions() {
  static const std::vector<std::string> regions = {"nat",  "hhs1", "hhs2", "hhs3", "hhs4", "hhs5",
                                                   "hhs6", "hhs7", "hhs8", "hhs9", "hhs10"};
  return regions;
}

std::vector<std::string> canonical_region_order(std::vector<std::string> names) {
  const auto& defaults = default_regions();
  auto rank = [&](const std::string& n) {
    auto it = std::find(defaults.begin(), defaults.end(), n);
    return it == defaults.end() ? defaults.size() : static_cast<std::size_t>(it - defaults.begin());
  };
  std::stable_sort(names.begin(), names.end(), [&](const auto& a, const auto& b) { return rank(a) < rank(b); });
  return names;
}

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(std::string_view text, const std::string& context) {
  text = trim(text);
  double v = 0.0;
  auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc{} || r.ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ValidationError(context + ": cannot parse number '" + std::string(text) + "'");
  }
  return v;
}

// ---------------------------------------------------------------------------
// WiliPanel

Index WiliPanel::region_index(std::string_view name) const {
  auto it = std::find(regions.begin(), regions.end(), name);
  if (it == regions.end()) throw ValidationError("unknown region '" + std::string(name) + "'");
  return static_cast<Index>(it - regions.begin());
}

std::optional<Index> WiliPanel::week_index(EpiWeek w) const { return contiguous_index(weeks, w); }

double WiliPanel::at(EpiWeek w, Index region) const {
  auto idx = week_index(w);
  if (!idx) throw ValidationError("no wILI data for epiweek " + w.str());
  return values(*idx, region);
}

WiliPanel WiliPanel::truncated(EpiWeek as_of) const {
  WiliPanel out;
  out.regions = regions;
  out.contamination_start = contamination_start;
  Index n = 0;
  while (n < num_weeks() && weeks[static_cast<std::size_t>(n)] <= as_of) ++n;
  out.weeks.assign(weeks.begin(), weeks.begin() + n);
  out.values = values.topRows(n);
  return out;
}

void WiliPanel::validate() const {
  require(!regions.empty(), "wILI panel has no regions");
  require(values.rows() == num_weeks() && values.cols() == num_regions(), "wILI panel shape mismatch");
  for (std::size_t i = 1; i < weeks.size(); ++i) {
    require(weeks[i] == weeks[i - 1].next(), "wILI epiweeks not contiguous at " + weeks[i].str());
  }
  for (Index i = 0; i < values.rows(); ++i)
    for (Index j = 0; j < values.cols(); ++j)
      require(std::isfinite(values(i, j)) && values(i, j) >= 0.0,
              "invalid wILI for region " + regions[static_cast<std::size_t>(j)] + " at epiweek " +
                  weeks[static_cast<std::size_t>(i)].str());
}

WiliPanel load_wili(const std::filesystem::path& path, EpiWeek contamination_start) {
  auto in = open_csv(path, "epiweek,region,wili");
  std::map<std::pair<EpiWeek, std::string>, double> cells;
  std::set<std::string> region_set;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 3) throw ValidationError(where + ": expected 3 fields");
    EpiWeek w;
    try {
      w = EpiWeek::parse(trim(f[0]));
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    std::string region(trim(f[1]));
    const double v = parse_double(f[2], where);
    if (v < 0.0) throw ValidationError(where + ": negative wILI " + std::string(trim(f[2])) + " for " + region);
    if (!cells.emplace(std::make_pair(w, region), v).second) {
      throw ValidationError(where + ": duplicate row for region " + region + " at epiweek " + w.str());
    }
    region_set.insert(region);
  }
  if (cells.empty()) throw ValidationError(path.string() + ": no data rows");

  WiliPanel panel;
  panel.contamination_start = contamination_start;
  panel.regions = canonical_region_order({region_set.begin(), region_set.end()});
  panel.weeks = contiguous_weeks(cells.begin()->first.first, cells.rbegin()->first.first);
  panel.values.resize(panel.num_weeks(), panel.num_regions());
  for (std::size_t i = 0; i < panel.weeks.size(); ++i) {
    for (std::size_t j = 0; j < panel.regions.size(); ++j) {
      auto it = cells.find({panel.weeks[i], panel.regions[j]});
      if (it == cells.end()) {
        throw ValidationError(path.string() + ": missing wILI for region " + panel.regions[j] + " at epiweek " +
                              panel.weeks[i].str());
      }
      panel.values(static_cast<Index>(i), static_cast<Index>(j)) = it->second;
    }
  }
  return panel;
}

void save_wili(const WiliPanel& panel, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "epiweek,region,wili\n";
  for (std::size_t i = 0; i < panel.weeks.size(); ++i)
    for (std::size_t j = 0; j < panel.regions.size(); ++j)
      out << panel.weeks[i].str() << ',' << panel.regions[j] << ','
          << format_double(panel.values(static_cast<Index>(i), static_cast<Index>(j))) << '\n';
}

// ---------------------------------------------------------------------------
// Exogenous signals

std::string bucket_name(Bucket b) { return "DS" + std::to_string(static_cast<int>(b)); }

Bucket parse_bucket(std::string_view text) {
  if (text == "DS1") return Bucket::DS1;
  if (text == "DS2") return Bucket::DS2;
  if (text == "DS3") return Bucket::DS3;
  if (text == "DS4") return Bucket::DS4;
  throw ValidationError("unknown signal bucket '" + std::string(text) + "'");
}

Signal Signal::parse(std::string_view qualified) {
  const auto dot = qualified.find('.');
  if (dot == std::string_view::npos || dot + 1 >= qualified.size()) {
    throw ValidationError("signal name '" + std::string(qualified) + "' must look like DSn.name");
  }
  return {std::string(qualified.substr(dot + 1)), parse_bucket(qualified.substr(0, dot))};
}

Index ExogenousPanel::region_index(std::string_view name) const {
  auto it = std::find(regions.begin(), regions.end(), name);
  if (it == regions.end()) throw ValidationError("unknown region '" + std::string(name) + "'");
  return static_cast<Index>(it - regions.begin());
}

std::optional<Index> ExogenousPanel::week_index(EpiWeek w) const { return contiguous_index(weeks, w); }

ExogenousPanel ExogenousPanel::truncated(EpiWeek as_of) const {
  ExogenousPanel out;
  out.signals = signals;
  out.regions = regions;
  Index n = 0;
  while (n < num_weeks() && weeks[static_cast<std::size_t>(n)] <= as_of) ++n;
  out.weeks.assign(weeks.begin(), weeks.begin() + n);
  for (const Matrix& m : data) out.data.push_back(m.topRows(n));
  return out;
}

ExogenousPanel ExogenousPanel::without_buckets(std::span<const Bucket> buckets) const {
  std::vector<Index> keep;
  for (Index j = 0; j < num_signals(); ++j) {
    if (std::find(buckets.begin(), buckets.end(), signals[static_cast<std::size_t>(j)].bucket) == buckets.end()) {
      keep.push_back(j);
    }
  }
  ExogenousPanel out;
  out.regions = regions;
  out.weeks = weeks;
  for (Index j : keep) out.signals.push_back(signals[static_cast<std::size_t>(j)]);
  for (const Matrix& m : data) out.data.push_back(m(Eigen::all, keep));
  return out;
}

void ExogenousPanel::validate() const {
  require(!weeks.empty(), "exogenous panel has no weeks");
  require(!signals.empty(), "exogenous panel has no signals");
  require(data.size() == regions.size(), "exogenous panel region count mismatch");
  for (std::size_t i = 1; i < weeks.size(); ++i) {
    require(weeks[i] == weeks[i - 1].next(), "exogenous epiweeks not contiguous at " + weeks[i].str());
  }
  for (const Matrix& m : data) {
    require(m.rows() == num_weeks() && m.cols() == num_signals(), "exogenous feature vector length mismatch");
  }
}

ExogenousPanel load_exogenous(const std::filesystem::path& path) {
  auto in = open_csv(path, "epiweek,region,name,value");
  std::map<std::tuple<EpiWeek, std::string, std::string>, double> cells;
  std::vector<std::string> signal_order;
  std::set<std::string> region_set;
  EpiWeek first{9999, 1}, last{0, 1};
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto f = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (f.size() != 4) throw ValidationError(where + ": expected 4 fields");
    EpiWeek w;
    try {
      w = EpiWeek::parse(trim(f[0]));
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
    std::string region(trim(f[1]));
    std::string name(trim(f[2]));
    Signal::parse(name);
    if (std::find(signal_order.begin(), signal_order.end(), name) == signal_order.end()) signal_order.push_back(name);
    region_set.insert(region);
    first = std::min(first, w);
    last = std::max(last, w);
    const auto value_text = trim(f[3]);
    const double v = (value_text.empty() || value_text == "NA") ? std::numeric_limits<double>::quiet_NaN()
                                                                : parse_double(value_text, where);
    if (!cells.emplace(std::make_tuple(w, region, name), v).second) {
      throw ValidationError(where + ": duplicate cell " + region + "/" + name + " at " + w.str());
    }
  }
  if (cells.empty()) throw ValidationError(path.string() + ": no data rows");

  ExogenousPanel panel;
  for (const auto& n : signal_order) panel.signals.push_back(Signal::parse(n));
  panel.regions = canonical_region_order({region_set.begin(), region_set.end()});
  panel.weeks = contiguous_weeks(first, last);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& region : panel.regions) {
    Matrix m = Matrix::Constant(panel.num_weeks(), panel.num_signals(), nan);
    for (std::size_t i = 0; i < panel.weeks.size(); ++i)
      for (std::size_t j = 0; j < signal_order.size(); ++j) {
        auto it = cells.find({panel.weeks[i], region, signal_order[j]});
        if (it != cells.end()) m(static_cast<Index>(i), static_cast<Index>(j)) = it->second;
      }
    panel.data.push_back(std::move(m));
  }
  return panel;
}

void save_exogenous(const ExogenousPanel& panel, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << "epiweek,region,name,value\n";
  for (std::size_t i = 0; i < panel.weeks.size(); ++i)
    for (std::size_t r = 0; r < panel.regions.size(); ++r)
      for (std::size_t j = 0; j < panel.signals.size(); ++j) {
        const double v = panel.data[r](static_cast<Index>(i), static_cast<Index>(j));
        out << panel.weeks[i].str() << ',' << panel.regions[r] << ',' << panel.signals[j].qualified() << ','
            << (std::isnan(v) ? std::string("NA") : format_double(v)) << '\n';
      }
}

}  // namespace episteer
