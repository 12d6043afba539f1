#include "xidpo/margin.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "json.hpp"
#include "xidpo/rewards.hpp"

namespace xidpo {

namespace {

std::string format_double(double x) {
  // Shortest round-trip representation, shared with the JSON writer.
  return nlohmann::json(x).dump();
}

void check_level(double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw ContractError("quantile level t must lie in [0, 1]");
  }
}

}  // namespace

GapDistribution::GapDistribution(std::vector<double> values, std::size_t skipped)
    : values_(std::move(values)), skipped_(skipped) {
  if (values_.empty()) {
    throw EmptyDistributionError("gap distribution has no values");
  }
  for (double v : values_) {
    if (!(v >= -1.0 && v <= 1.0)) {
      throw ContractError("ratio margin outside [-1, 1]");
    }
  }
  sorted_ = values_;
  std::sort(sorted_.begin(), sorted_.end());
}

const std::vector<double>& default_quantile_levels() {
  static const std::vector<double> levels{0.01, 0.05, 0.10, 0.25, 0.35, 0.45, 0.50, 0.75, 0.90, 0.95, 0.99, 1.00};
  return levels;
}

GapDistribution compute_gaps(const Dataset& dataset, const PolicyParams& policy) {
  if (dataset.pairs.empty()) {
    throw ContractError("dataset must be non-empty");
  }
  std::vector<double> values;
  values.reserve(dataset.pairs.size());
  std::size_t skipped = 0;
  for (const auto& pair : dataset.pairs) {
    try {
      values.push_back(pair_breakdown(policy, pair).m);
    } catch (const DegeneratePairError&) {
      ++skipped;
    }
  }
  if (values.empty()) {
    throw EmptyDistributionError("every pair is degenerate under the policy");
  }
  return GapDistribution(std::move(values), skipped);
}

double quantile(const GapDistribution& dist, double t) {
  check_level(t);
  const auto& s = dist.sorted();
  const double h = t * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= s.size()) {
    return s.back();
  }
  return s[lo] + (h - static_cast<double>(lo)) * (s[lo + 1] - s[lo]);
}

double empirical_cdf(const GapDistribution& dist, double v) {
  // Piecewise-linear through (sorted[i], i / (n - 1)), the inverse of quantile().
  const auto& s = dist.sorted();
  if (v < s.front()) {
    return 0.0;
  }
  if (v >= s.back()) {
    return 1.0;
  }
  const auto hi = std::upper_bound(s.begin(), s.end(), v);
  const auto i = static_cast<std::size_t>(hi - s.begin()) - 1;
  const double frac = (v - s[i]) / (s[i + 1] - s[i]);
  return (static_cast<double>(i) + frac) / static_cast<double>(s.size() - 1);
}

double select_xi(const GapDistribution& dist, double t) {
  const double q = quantile(dist, t);
  if (!(q > 0.0)) {
    std::ostringstream msg;
    msg << "quantile at t=" << t << " is " << q << "; xi must be positive, choose a larger t";
    throw InvalidXiError(msg.str());
  }
  if (q > 1.0) {
    throw InvalidXiError("quantile exceeds 1");
  }
  return q;
}

QuantileTable quantile_report(const GapDistribution& dist, const std::vector<double>& ts) {
  QuantileTable table;
  for (double t : ts) {
    check_level(t);
  }
  std::vector<double> levels = ts;
  std::sort(levels.begin(), levels.end());
  for (double t : levels) {
    table.entries.push_back({t, quantile(dist, t)});
  }
  return table;
}

std::vector<HistogramBin> export_histogram(const GapDistribution& dist, std::size_t bins) {
  if (bins < 1) {
    throw ContractError("bins must be >= 1");
  }
  const double width = 2.0 / static_cast<double>(bins);
  std::vector<HistogramBin> out(bins);
  for (std::size_t i = 0; i < bins; ++i) {
    out[i].center = -1.0 + (static_cast<double>(i) + 0.5) * width;
  }
  for (double v : dist.values()) {
    auto idx = static_cast<std::size_t>(std::floor((v + 1.0) / width));
    idx = std::min(idx, bins - 1);
    ++out[idx].count;
  }
  return out;
}

std::string quantile_table_csv(const QuantileTable& table) {
  std::ostringstream out;
  out << "t,q\n";
  for (const auto& e : table.entries) {
    out << format_double(e.t) << ',' << format_double(e.q) << '\n';
  }
  return out.str();
}

std::string quantile_table_json(const QuantileTable& table, const GapDistribution& dist) {
  nlohmann::ordered_json j;
  j["n"] = dist.n();
  j["skipped"] = dist.skipped();
  auto entries = nlohmann::ordered_json::array();
  for (const auto& e : table.entries) {
    entries.push_back({{"t", e.t}, {"q", e.q}});
  }
  j["entries"] = std::move(entries);
  j["selected_t"] = table.selected_t ? nlohmann::ordered_json(*table.selected_t) : nlohmann::ordered_json();
  j["selected_xi"] = table.selected_xi ? nlohmann::ordered_json(*table.selected_xi) : nlohmann::ordered_json();
  return j.dump(2);
}

std::string histogram_csv(const std::vector<HistogramBin>& bins) {
  std::ostringstream out;
  out << "bin_center,count\n";
  for (const auto& b : bins) {
    out << format_double(b.center) << ',' << b.count << '\n';
  }
  return out.str();
}

std::vector<HistogramBin> parse_histogram_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "bin_center,count") {
    throw ParseError("histogram CSV must start with header bin_center,count", 1);
  }
  std::vector<HistogramBin> bins;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ParseError("expected two columns", line_no);
    }
    try {
      std::size_t used = 0;
      HistogramBin b;
      b.center = std::stod(line.substr(0, comma));
      const std::string count = line.substr(comma + 1);
      b.count = std::stoull(count, &used);
      if (used != count.size()) {
        throw ParseError("trailing characters in count", line_no);
      }
      bins.push_back(b);
    } catch (const std::logic_error&) {
      throw ParseError("non-numeric field", line_no);
    }
  }
  return bins;
}

std::string cdf_csv(const GapDistribution& dist) {
  std::ostringstream out;
  out << "m,cdf\n";
  const auto& s = dist.sorted();
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i + 1 < s.size() && s[i + 1] == s[i]) {
      continue;
    }
    out << format_double(s[i]) << ',' << format_double(empirical_cdf(dist, s[i])) << '\n';
  }
  return out.str();
}

double sample_skewness(const std::vector<double>& values) {
  if (values.empty()) {
    throw ContractError("skewness of an empty sample");
  }
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) {
    mean += v;
  }
  mean /= n;
  double m2 = 0.0;
  double m3 = 0.0;
  for (double v : values) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  if (m2 == 0.0) {
    throw ContractError("skewness undefined for a zero-variance sample");
  }
  return m3 / std::pow(m2, 1.5);
}

double median(const GapDistribution& dist) {
  return quantile(dist, 0.5);
}

}  // namespace xidpo
