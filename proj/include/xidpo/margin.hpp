#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "xidpo/corpus.hpp"
#include "xidpo/policy.hpp"

namespace xidpo {

// The per-pair ratio margins {m_i} of a dataset under a fixed policy.
class GapDistribution {
 public:
  // Throws EmptyDistributionError on empty input and ContractError for a
  // value outside [-1, 1].
  explicit GapDistribution(std::vector<double> values, std::size_t skipped = 0);

  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& sorted() const { return sorted_; }
  std::size_t n() const { return values_.size(); }
  std::size_t skipped() const { return skipped_; }

 private:
  std::vector<double> values_;
  std::vector<double> sorted_;
  std::size_t skipped_ = 0;
};

struct QuantileEntry {
  double t = 0.0;
  double q = 0.0;
};

struct QuantileTable {
  std::vector<QuantileEntry> entries;
  std::optional<double> selected_t;
  std::optional<double> selected_xi;
};

struct HistogramBin {
  double center = 0.0;
  std::size_t count = 0;
};

// Default report columns: 1% ... 100%.
const std::vector<double>& default_quantile_levels();

GapDistribution compute_gaps(const Dataset& dataset, const PolicyParams& policy);

// Order-statistic interpolation at h = t (n - 1).
double quantile(const GapDistribution& dist, double t);

// Interpolated CDF matching quantile(): quantile(dist, empirical_cdf(dist, v)) == v
// on the support, up to rounding.
double empirical_cdf(const GapDistribution& dist, double v);

// quantile(dist, t), rejected with InvalidXiError unless it lies in (0, 1].
double select_xi(const GapDistribution& dist, double t);

QuantileTable quantile_report(const GapDistribution& dist, const std::vector<double>& ts);

// Equal-width bins over [-1, 1]; the value 1 falls in the last bin.
std::vector<HistogramBin> export_histogram(const GapDistribution& dist, std::size_t bins);

// Serialisation: `t,q` / `bin_center,count` / `m,cdf` CSV and a JSON object.
std::string quantile_table_csv(const QuantileTable& table);
std::string quantile_table_json(const QuantileTable& table, const GapDistribution& dist);
std::string histogram_csv(const std::vector<HistogramBin>& bins);
std::vector<HistogramBin> parse_histogram_csv(const std::string& text);
std::string cdf_csv(const GapDistribution& dist);

// Sample skewness (population moments) and median of the values.
double sample_skewness(const std::vector<double>& values);
double median(const GapDistribution& dist);

}  // namespace xidpo
