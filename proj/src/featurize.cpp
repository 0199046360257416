#include "curvecal/featurize.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "curvecal/csv.hpp"
#include "curvecal/errors.hpp"

namespace curvecal {

namespace {

constexpr const char* kFeatureHeaderNote =
    " curvecal feature dataset v1: f01..f16 = normalized nodes n00..n33 (row-major);"
    " f17..f24 = sum,mean,std,min,max,range,l2,iqr computed on the normalized nodes";

}  // namespace

NormalizationSpec NormalizationSpec::adc_range(int adc_bits) {
  return {0.0, static_cast<double>((1 << adc_bits) - 1)};
}

void NormalizationSpec::validate() const {
  if (!(max > min) || !std::isfinite(max - min)) {
    throw ConfigError("normalization span must satisfy max > min");
  }
}

FeatureArray FeatureVector::as_array() const {
  FeatureArray out{};
  std::copy(normalized_nodes.begin(), normalized_nodes.end(), out.begin());
  std::copy(global_stats.begin(), global_stats.end(), out.begin() + kNodeCount);
  return out;
}

BaselineMeasurement average_baseline(std::span<const ScanFrame> frames, double force_epsilon) {
  if (frames.empty()) throw UsageError("baseline averaging needs at least one frame");
  BaselineMeasurement out;
  NodeArray sum{};
  for (const auto& frame : frames) {
    if (frame.applied_force > force_epsilon) {
      throw ContaminationError("baseline frame at t=" + std::to_string(frame.t) +
                               " carries applied force " +
                               std::to_string(frame.applied_force) + " N");
    }
    for (int n = 0; n < kNodeCount; ++n) sum[n] += frame.node_counts[n];
  }
  for (int n = 0; n < kNodeCount; ++n) {
    out.node_means[n] = sum[n] / static_cast<double>(frames.size());
  }
  out.n_averaged = static_cast<int>(frames.size());
  return out;
}

double linear_quantile(std::span<const double> sorted_values, double p) {
  if (sorted_values.empty()) throw UsageError("quantile of empty set");
  const double rank = p * static_cast<double>(sorted_values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const std::size_t hi = std::min(lo + 1, sorted_values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo]);
}

std::array<double, kGlobalStatCount> global_statistics(std::span<const double> values) {
  if (values.empty()) throw UsageError("statistics of empty set");
  const double n = static_cast<double>(values.size());
  double sum = 0.0;
  double sq = 0.0;
  for (double v : values) {
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();
  const double iqr = linear_quantile(sorted, 0.75) - linear_quantile(sorted, 0.25);
  return {sum, mean, std::sqrt(ss / n), lo, hi, hi - lo, std::sqrt(sq), iqr};
}

FeatureVector extract_features(const BaselineMeasurement& baseline,
                               const NormalizationSpec& norm) {
  norm.validate();
  if (baseline.n_averaged < 1) throw UsageError("baseline must average at least one frame");
  FeatureVector fv;
  const double span = norm.max - norm.min;
  for (int n = 0; n < kNodeCount; ++n) {
    const double v = baseline.node_means[n];
    if (!std::isfinite(v) || v < 0.0) throw DomainError("baseline node mean must be finite and >= 0");
    fv.normalized_nodes[n] = (v - norm.min) / span;
  }
  fv.global_stats = global_statistics(fv.normalized_nodes);
  return fv;
}

NodeArray dihedral_transform(const NodeArray& nodes, int index) {
  if (index < 0 || index >= 8) throw UsageError("dihedral index must be in [0, 8)");
  NodeArray out{};
  for (int r = 0; r < kGridSide; ++r) {
    for (int c = 0; c < kGridSide; ++c) {
      int rr = r;
      int cc = c;
      if (index >= 4) std::swap(rr, cc);
      for (int k = 0; k < index % 4; ++k) {
        const int nr = cc;
        const int nc = kGridSide - 1 - rr;
        rr = nr;
        cc = nc;
      }
      out[rr * kGridSide + cc] = nodes[r * kGridSide + c];
    }
  }
  return out;
}

std::string feature_csv_text(const FeatureDataset& dataset) {
  std::string text = "#" + std::string(kFeatureHeaderNote) + "\n";
  text += "# normalization min=" + format_double(dataset.norm.min) +
          " max=" + format_double(dataset.norm.max) + "\n";
  text += "kappa_true";
  for (int i = 1; i <= kFeatureDim; ++i) {
    text += (i < 10 ? ",f0" : ",f") + std::to_string(i);
  }
  text += ",group\n";
  for (const auto& row : dataset.rows) {
    text += format_double(row.kappa_true);
    for (double f : row.features) text += "," + format_double(f);
    text += "," + std::to_string(row.group) + "\n";
  }
  return text;
}

void write_feature_csv(const std::string& path, const FeatureDataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << feature_csv_text(dataset);
}

FeatureDataset read_feature_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  FeatureDataset ds;
  ds.norm = NormalizationSpec::adc_range(10);
  for (const auto& c : table.comments) {
    const auto pos = c.find("normalization min=");
    if (pos == std::string::npos) continue;
    const auto max_pos = c.find(" max=", pos);
    ds.norm.min = parse_double(c.substr(pos + 18, max_pos - pos - 18));
    ds.norm.max = parse_double(c.substr(max_pos + 5));
  }
  const int kappa_col = table.column("kappa_true");
  if (kappa_col != 0) throw FormatError(path + ": first column must be kappa_true");
  for (int i = 1; i <= kFeatureDim; ++i) {
    const std::string name = (i < 10 ? "f0" : "f") + std::to_string(i);
    if (table.column(name) != i) throw FormatError(path + ": missing or misplaced column " + name);
  }
  const int group_col = table.column("group");
  long long next_group = 0;
  for (const auto& row : table.rows) {
    FeatureRow fr;
    fr.kappa_true = parse_double(row[0]);
    for (int i = 0; i < kFeatureDim; ++i) fr.features[i] = parse_double(row[1 + i]);
    fr.group = group_col >= 0 ? std::stoll(row[group_col]) : next_group++;
    ds.rows.push_back(fr);
  }
  return ds;
}

void to_json(nlohmann::json& j, const NormalizationSpec& n) {
  j = {{"scheme", "minmax"}, {"min", n.min}, {"max", n.max}};
}

void from_json(const nlohmann::json& j, NormalizationSpec& n) {
  n.min = j.at("min").get<double>();
  n.max = j.at("max").get<double>();
}

}  // namespace curvecal
