#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "curvecal/sensor_sim.hpp"

namespace curvecal {

inline constexpr int kGlobalStatCount = 8;
inline constexpr int kFeatureDim = kNodeCount + kGlobalStatCount;
inline constexpr double kDefaultForceEpsilon = 0.05;  // N

using FeatureArray = std::array<double, kFeatureDim>;

/// Order of the engineered statistics; normative for every dataset file.
enum class GlobalStat { sum, mean, std, min, max, range, l2, iqr };

inline constexpr std::array<const char*, kGlobalStatCount> kGlobalStatNames = {
    "sum", "mean", "std", "min", "max", "range", "l2", "iqr"};

struct BaselineMeasurement {
  NodeArray node_means{};
  int n_averaged = 0;
};

/// Min-max scaling of raw counts onto [0, 1].
struct NormalizationSpec {
  double min = 0.0;
  double max = 1023.0;

  static NormalizationSpec adc_range(int adc_bits);
  void validate() const;
  bool operator==(const NormalizationSpec&) const = default;
};

struct FeatureVector {
  NodeArray normalized_nodes{};
  std::array<double, kGlobalStatCount> global_stats{};

  double stat(GlobalStat s) const { return global_stats[static_cast<int>(s)]; }
  FeatureArray as_array() const;
  bool operator==(const FeatureVector&) const = default;
};

BaselineMeasurement average_baseline(std::span<const ScanFrame> frames,
                                     double force_epsilon = kDefaultForceEpsilon);

/// Population std; IQR from linearly interpolated quantiles at p (n - 1).
std::array<double, kGlobalStatCount> global_statistics(std::span<const double> values);

double linear_quantile(std::span<const double> sorted_values, double p);

FeatureVector extract_features(const BaselineMeasurement& baseline,
                               const NormalizationSpec& norm);

/// One of the 8 symmetries of the square grid: `index` 0..3 rotates by
/// index*90 degrees, 4..7 transpose first.
NodeArray dihedral_transform(const NodeArray& nodes, int index);

// Feature dataset rows: kappa_true,f01..f24[,group].
struct FeatureRow {
  double kappa_true = 0.0;
  FeatureArray features{};
  long long group = -1;  // rows from the same baseline share a group
};

struct FeatureDataset {
  std::vector<FeatureRow> rows;
  NormalizationSpec norm;
};

void write_feature_csv(const std::string& path, const FeatureDataset& dataset);
FeatureDataset read_feature_csv(const std::string& path);
std::string feature_csv_text(const FeatureDataset& dataset);

void to_json(nlohmann::json& j, const NormalizationSpec& n);
void from_json(const nlohmann::json& j, NormalizationSpec& n);

}  // namespace curvecal
