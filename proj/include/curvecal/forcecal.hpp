#pragma once

// Force calibration surface F(S, C): third-degree polynomial in block
// reading S and curvature C restricted to terms containing S, so that a
// zero reading always maps to zero force.

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace curvecal {

inline constexpr double kMaxTrainingCurvature = 80.0;  // m^-1
inline constexpr double kPruneThreshold = 1e-8;

enum class SurfaceVariant { flat, curvature_aware };

std::string to_string(SurfaceVariant v);
SurfaceVariant surface_variant_from_string(const std::string& s);

struct CalibrationSample {
  double s = 0.0;  // baseline-subtracted block reading, counts
  double c = 0.0;  // curvature, m^-1
  double f = 0.0;  // ground-truth force, N
};

/// Throws DataRejectedError for negative force or curvature.
void validate_sample(const CalibrationSample& sample);

struct SurfaceTerm {
  int s_power = 1;
  int c_power = 0;
  double coefficient = 0.0;
};

struct FitDomain {
  double s_min = 0.0;
  double s_max = 0.0;
  double c_min = 0.0;
  double c_max = 0.0;
};

struct CalibrationSurface {
  SurfaceVariant variant = SurfaceVariant::curvature_aware;
  std::vector<SurfaceTerm> terms;
  double fit_r2 = 0.0;
  FitDomain fit_domain;
  bool pruned = false;

  std::optional<double> coefficient(int s_power, int c_power) const;
};

/// Flat: {S, S^2, S^3}. Curvature-aware: {S, S^2, S^3, SC, SC^2, S^2C}.
std::vector<std::pair<int, int>> basis_terms(SurfaceVariant variant);

std::string term_name(int s_power, int c_power);

/// Ordinary least squares over the variant's basis with column scaling and
/// a rank-revealing QR solve.
CalibrationSurface fit_surface(std::span<const CalibrationSample> samples, SurfaceVariant variant);

/// Least squares over an explicit subset of basis terms.
CalibrationSurface fit_terms(std::span<const CalibrationSample> samples, SurfaceVariant variant,
                             const std::vector<std::pair<int, int>>& terms);

/// Drops terms whose column-scaled coefficient magnitude is below
/// `threshold` and refits the remaining terms.
CalibrationSurface prune_surface(const CalibrationSurface& full,
                                 std::span<const CalibrationSample> samples,
                                 double threshold = kPruneThreshold);

struct ForcePrediction {
  double force = 0.0;
  bool floored = false;       // raw polynomial was negative
  bool extrapolated = false;  // (s, c) outside the fit domain
};

ForcePrediction predict_force(const CalibrationSurface& surface, double s, double c);

/// Raw polynomial value without flooring.
double evaluate_polynomial(const CalibrationSurface& surface, double s, double c);

double residual_sum_of_squares(const CalibrationSurface& surface,
                               std::span<const CalibrationSample> samples);

/// Reported surface F = 0.009625 S - 0.000014 S^2 - 0.000372 SC + 0.000005 SC^2.
CalibrationSurface reference_surface();

// Calibration datasets persist as CSV s,c,f.
void write_calibration_csv(const std::string& path, std::span<const CalibrationSample> samples);
std::vector<CalibrationSample> read_calibration_csv(const std::string& path);
std::string calibration_csv_text(std::span<const CalibrationSample> samples);

void to_json(nlohmann::json& j, const CalibrationSurface& s);
void from_json(const nlohmann::json& j, CalibrationSurface& s);
CalibrationSurface load_surface(const std::string& path);
void save_surface(const std::string& path, const CalibrationSurface& surface);

// ---- flat vs curvature-aware comparison ---------------------------------

struct EvalSample {
  double s = 0.0;
  double c_pred = 0.0;
  double f_true = 0.0;
};

/// Samples for one object at one reference force (or its natural hold when
/// `reference_force` is empty).
struct EvalGroup {
  std::string object;
  double c_true = 0.0;
  double c_pred = 0.0;
  std::optional<double> reference_force;
  std::vector<EvalSample> samples;
};

struct ErrorStat {
  double mae = 0.0;
  double sd = 0.0;           // population SD of |error|
  double mean_signed = 0.0;  // mean of predicted - true
  std::size_t n = 0;
};

struct ForceErrorRow {
  std::string object;
  double c_true = 0.0;
  double c_pred = 0.0;
  std::optional<double> reference_force;
  double mean_true_force = 0.0;
  ErrorStat flat;
  ErrorStat aware;
};

struct ForceErrorReport {
  std::vector<ForceErrorRow> rows;
  std::vector<std::string> warnings;

  std::vector<double> reference_forces() const;
  std::vector<std::string> objects() const;
  const ForceErrorRow* find(const std::string& object, std::optional<double> reference) const;

  /// One line per object: object,kappa_gt,kappa_pr,<F>N_flat_mae,... ,hold_gt,...
  std::string to_csv() const;
  /// Aligned text table in the same column order, cells as "mae±sd".
  std::string to_text_table() const;
};

ErrorStat error_stat(std::span<const double> predicted, std::span<const double> truth);

ForceErrorReport compare_variants(const CalibrationSurface& flat, const CalibrationSurface& aware,
                                  std::span<const EvalGroup> eval_set);

void to_json(nlohmann::json& j, const ForceErrorReport& r);

}  // namespace curvecal
