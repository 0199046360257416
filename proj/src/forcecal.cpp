#include "curvecal/forcecal.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include <Eigen/Dense>

#include "curvecal/csv.hpp"
#include "curvecal/errors.hpp"

namespace curvecal {

namespace {

double ipow(double x, int p) {
  double r = 1.0;
  for (int i = 0; i < p; ++i) r *= x;
  return r;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

Eigen::MatrixXd design_matrix(std::span<const CalibrationSample> samples,
                              const std::vector<std::pair<int, int>>& terms) {
  Eigen::MatrixXd a(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(terms.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t k = 0; k < terms.size(); ++k) {
      a(i, k) = ipow(samples[i].s, terms[k].first) * ipow(samples[i].c, terms[k].second);
    }
  }
  return a;
}

Eigen::VectorXd column_scales(const Eigen::MatrixXd& a) {
  Eigen::VectorXd scale(a.cols());
  for (Eigen::Index k = 0; k < a.cols(); ++k) {
    const double m = a.col(k).cwiseAbs().maxCoeff();
    scale(k) = m > 0.0 ? m : 1.0;
  }
  return scale;
}

void check_fit_inputs(std::span<const CalibrationSample> samples, SurfaceVariant variant,
                      std::size_t n_terms) {
  if (n_terms == 0) throw UsageError("surface needs at least one term");
  if (samples.size() < 2 * n_terms) {
    throw UsageError("fit needs at least " + std::to_string(2 * n_terms) + " samples for " +
                     std::to_string(n_terms) + " terms, got " + std::to_string(samples.size()));
  }
  std::set<double> curvatures;
  for (const auto& smp : samples) {
    if (!std::isfinite(smp.s) || !std::isfinite(smp.c) || !std::isfinite(smp.f)) {
      throw DataRejectedError("calibration samples must be finite");
    }
    if (smp.c < 0.0) throw DataRejectedError("calibration curvature must be >= 0");
    if (smp.c > kMaxTrainingCurvature) {
      throw DataRejectedError("calibration sample at curvature " + format_double(smp.c) +
                              " m^-1 rejected: only 0-80 m^-1 data is used for fitting");
    }
    curvatures.insert(smp.c);
  }
  if (variant == SurfaceVariant::curvature_aware && curvatures.size() < 3) {
    throw UsageError("curvature-aware fit needs at least 3 distinct curvatures, got " +
                     std::to_string(curvatures.size()));
  }
}

}  // namespace

std::string to_string(SurfaceVariant v) {
  return v == SurfaceVariant::flat ? "flat" : "curvature_aware";
}

SurfaceVariant surface_variant_from_string(const std::string& s) {
  if (s == "flat") return SurfaceVariant::flat;
  if (s == "curvature_aware") return SurfaceVariant::curvature_aware;
  throw FormatError("unknown surface variant '" + s + "'");
}

void validate_sample(const CalibrationSample& sample) {
  if (!(sample.f >= 0.0)) throw DataRejectedError("calibration force must be >= 0");
  if (!(sample.c >= 0.0)) throw DataRejectedError("calibration curvature must be >= 0");
  if (!std::isfinite(sample.s)) throw DataRejectedError("calibration reading must be finite");
}

std::optional<double> CalibrationSurface::coefficient(int s_power, int c_power) const {
  for (const auto& t : terms) {
    if (t.s_power == s_power && t.c_power == c_power) return t.coefficient;
  }
  return std::nullopt;
}

std::vector<std::pair<int, int>> basis_terms(SurfaceVariant variant) {
  if (variant == SurfaceVariant::flat) return {{1, 0}, {2, 0}, {3, 0}};
  return {{1, 0}, {2, 0}, {3, 0}, {1, 1}, {1, 2}, {2, 1}};
}

std::string term_name(int s_power, int c_power) {
  std::string name;
  if (s_power > 0) name += s_power == 1 ? "S" : "S^" + std::to_string(s_power);
  if (c_power > 0) {
    if (!name.empty()) name += "*";
    name += c_power == 1 ? "C" : "C^" + std::to_string(c_power);
  }
  return name.empty() ? "1" : name;
}

CalibrationSurface fit_terms(std::span<const CalibrationSample> samples, SurfaceVariant variant,
                             const std::vector<std::pair<int, int>>& terms) {
  check_fit_inputs(samples, variant, terms.size());
  for (const auto& [i, j] : terms) {
    if (i < 1 || i + j > 3 || j < 0) throw UsageError("term " + term_name(i, j) + " not in basis");
    if (variant == SurfaceVariant::flat && j != 0) {
      throw UsageError("flat surface cannot carry curvature term " + term_name(i, j));
    }
  }

  const Eigen::MatrixXd a = design_matrix(samples, terms);
  Eigen::VectorXd f(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) f(i) = samples[i].f;

  const Eigen::VectorXd scale = column_scales(a);
  const Eigen::MatrixXd scaled = a * scale.cwiseInverse().asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(scaled);
  if (qr.rank() < scaled.cols()) {
    std::string names;
    const auto& perm = qr.colsPermutation().indices();
    for (Eigen::Index k = qr.rank(); k < scaled.cols(); ++k) {
      if (!names.empty()) names += ", ";
      names += term_name(terms[perm(k)].first, terms[perm(k)].second);
    }
    throw DegenerateDataError("calibration design matrix is rank deficient (rank " +
                              std::to_string(qr.rank()) + " of " +
                              std::to_string(scaled.cols()) + "); collinear columns: " + names);
  }
  const Eigen::VectorXd beta = qr.solve(f).cwiseQuotient(scale);

  CalibrationSurface surface;
  surface.variant = variant;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    surface.terms.push_back({terms[k].first, terms[k].second, beta(static_cast<Eigen::Index>(k))});
  }

  const double mean = f.mean();
  const double ss_tot = (f.array() - mean).square().sum();
  const double ss_res = (a * beta - f).squaredNorm();
  surface.fit_r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);

  FitDomain d{samples[0].s, samples[0].s, samples[0].c, samples[0].c};
  for (const auto& smp : samples) {
    d.s_min = std::min(d.s_min, smp.s);
    d.s_max = std::max(d.s_max, smp.s);
    d.c_min = std::min(d.c_min, smp.c);
    d.c_max = std::max(d.c_max, smp.c);
  }
  surface.fit_domain = d;
  return surface;
}

CalibrationSurface fit_surface(std::span<const CalibrationSample> samples, SurfaceVariant variant) {
  return fit_terms(samples, variant, basis_terms(variant));
}

CalibrationSurface prune_surface(const CalibrationSurface& full,
                                 std::span<const CalibrationSample> samples, double threshold) {
  std::vector<std::pair<int, int>> all;
  for (const auto& t : full.terms) all.emplace_back(t.s_power, t.c_power);
  const Eigen::VectorXd scale = column_scales(design_matrix(samples, all));
  std::vector<std::pair<int, int>> kept;
  for (std::size_t k = 0; k < full.terms.size(); ++k) {
    if (std::abs(full.terms[k].coefficient * scale(static_cast<Eigen::Index>(k))) >= threshold) {
      kept.push_back(all[k]);
    }
  }
  if (kept.empty()) throw DegenerateDataError("pruning removed every calibration term");
  CalibrationSurface pruned = kept.size() == all.size() ? full : fit_terms(samples, full.variant, kept);
  pruned.pruned = true;
  return pruned;
}

double evaluate_polynomial(const CalibrationSurface& surface, double s, double c) {
  double f = 0.0;
  for (const auto& t : surface.terms) f += t.coefficient * ipow(s, t.s_power) * ipow(c, t.c_power);
  return f;
}

ForcePrediction predict_force(const CalibrationSurface& surface, double s, double c) {
  ForcePrediction p;
  const double raw = evaluate_polynomial(surface, s, c);
  p.floored = raw < 0.0;
  p.force = p.floored ? 0.0 : raw;
  const auto& d = surface.fit_domain;
  const bool c_out = surface.variant == SurfaceVariant::curvature_aware && (c < d.c_min || c > d.c_max);
  p.extrapolated = s < d.s_min || s > d.s_max || c_out;
  return p;
}

double residual_sum_of_squares(const CalibrationSurface& surface,
                               std::span<const CalibrationSample> samples) {
  double rss = 0.0;
  for (const auto& smp : samples) {
    const double r = evaluate_polynomial(surface, smp.s, smp.c) - smp.f;
    rss += r * r;
  }
  return rss;
}

CalibrationSurface reference_surface() {
  CalibrationSurface s;
  s.variant = SurfaceVariant::curvature_aware;
  s.terms = {{1, 0, 0.009625}, {2, 0, -0.000014}, {1, 1, -0.000372}, {1, 2, 0.000005}};
  s.fit_r2 = 0.9222;
  s.fit_domain = {0.0, 1023.0, 0.0, 80.0};
  s.pruned = true;
  return s;
}

std::string calibration_csv_text(std::span<const CalibrationSample> samples) {
  std::string text = "s,c,f\n";
  for (const auto& smp : samples) {
    text += format_double(smp.s) + "," + format_double(smp.c) + "," + format_double(smp.f) + "\n";
  }
  return text;
}

void write_calibration_csv(const std::string& path, std::span<const CalibrationSample> samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << calibration_csv_text(samples);
}

std::vector<CalibrationSample> read_calibration_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  const int s = table.column("s");
  const int c = table.column("c");
  const int f = table.column("f");
  if (s < 0 || c < 0 || f < 0) throw FormatError(path + ": expected columns s,c,f");
  std::vector<CalibrationSample> out;
  for (const auto& row : table.rows) {
    CalibrationSample smp{parse_double(row[s]), parse_double(row[c]), parse_double(row[f])};
    validate_sample(smp);
    out.push_back(smp);
  }
  return out;
}

void to_json(nlohmann::json& j, const CalibrationSurface& s) {
  nlohmann::json terms = nlohmann::json::array();
  for (const auto& t : s.terms) {
    terms.push_back({{"s_power", t.s_power},
                     {"c_power", t.c_power},
                     {"name", term_name(t.s_power, t.c_power)},
                     {"coefficient", t.coefficient}});
  }
  j = {{"format", "curvecal.surface"},
       {"version", 1},
       {"variant", to_string(s.variant)},
       {"pruned", s.pruned},
       {"terms", terms},
       {"fit_r2", s.fit_r2},
       {"fit_domain",
        {{"s_min", s.fit_domain.s_min},
         {"s_max", s.fit_domain.s_max},
         {"c_min", s.fit_domain.c_min},
         {"c_max", s.fit_domain.c_max}}}};
}

void from_json(const nlohmann::json& j, CalibrationSurface& s) {
  if (j.value("format", "") != "curvecal.surface") throw FormatError("not a calibration surface document");
  s.variant = surface_variant_from_string(j.at("variant").get<std::string>());
  s.pruned = j.value("pruned", false);
  s.terms.clear();
  for (const auto& t : j.at("terms")) {
    SurfaceTerm term{t.at("s_power").get<int>(), t.at("c_power").get<int>(),
                     t.at("coefficient").get<double>()};
    if (term.s_power < 1) throw FormatError("surface term without S factor");
    if (s.variant == SurfaceVariant::flat && term.c_power != 0) {
      throw FormatError("flat surface with curvature term");
    }
    s.terms.push_back(term);
  }
  s.fit_r2 = j.at("fit_r2").get<double>();
  const auto& d = j.at("fit_domain");
  s.fit_domain = {d.at("s_min").get<double>(), d.at("s_max").get<double>(),
                  d.at("c_min").get<double>(), d.at("c_max").get<double>()};
}

CalibrationSurface load_surface(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  try {
    return nlohmann::json::parse(in).get<CalibrationSurface>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void save_surface(const std::string& path, const CalibrationSurface& surface) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out << nlohmann::json(surface).dump(2) << '\n';
}

// ---- comparison ----------------------------------------------------------

ErrorStat error_stat(std::span<const double> predicted, std::span<const double> truth) {
  if (predicted.size() != truth.size()) throw UsageError("error_stat: size mismatch");
  ErrorStat st;
  st.n = predicted.size();
  if (st.n == 0) return st;
  double abs_sum = 0.0;
  double signed_sum = 0.0;
  for (std::size_t i = 0; i < st.n; ++i) {
    const double e = predicted[i] - truth[i];
    abs_sum += std::abs(e);
    signed_sum += e;
  }
  st.mae = abs_sum / st.n;
  st.mean_signed = signed_sum / st.n;
  double ss = 0.0;
  for (std::size_t i = 0; i < st.n; ++i) {
    const double d = std::abs(predicted[i] - truth[i]) - st.mae;
    ss += d * d;
  }
  st.sd = std::sqrt(ss / st.n);
  return st;
}

ForceErrorReport compare_variants(const CalibrationSurface& flat, const CalibrationSurface& aware,
                                  std::span<const EvalGroup> eval_set) {
  if (flat.terms.empty() || aware.terms.empty()) throw UsageError("both surfaces must be fitted");
  ForceErrorReport report;
  for (const auto& group : eval_set) {
    if (group.samples.empty()) {
      report.warnings.push_back("skipped empty group: " + group.object + " @ " +
                                (group.reference_force ? format_double(*group.reference_force) + " N"
                                                       : std::string("natural hold")));
      continue;
    }
    std::vector<double> truth;
    std::vector<double> pf;
    std::vector<double> pa;
    for (const auto& smp : group.samples) {
      truth.push_back(smp.f_true);
      pf.push_back(predict_force(flat, smp.s, smp.c_pred).force);
      pa.push_back(predict_force(aware, smp.s, smp.c_pred).force);
    }
    ForceErrorRow row;
    row.object = group.object;
    row.c_true = group.c_true;
    row.c_pred = group.c_pred;
    row.reference_force = group.reference_force;
    double sum = 0.0;
    for (double t : truth) sum += t;
    row.mean_true_force = sum / truth.size();
    row.flat = error_stat(pf, truth);
    row.aware = error_stat(pa, truth);
    report.rows.push_back(row);
  }
  return report;
}

std::vector<double> ForceErrorReport::reference_forces() const {
  std::vector<double> refs;
  for (const auto& r : rows) {
    if (r.reference_force && std::find(refs.begin(), refs.end(), *r.reference_force) == refs.end()) {
      refs.push_back(*r.reference_force);
    }
  }
  std::sort(refs.begin(), refs.end());
  return refs;
}

std::vector<std::string> ForceErrorReport::objects() const {
  std::vector<std::string> names;
  for (const auto& r : rows) {
    if (std::find(names.begin(), names.end(), r.object) == names.end()) names.push_back(r.object);
  }
  return names;
}

const ForceErrorRow* ForceErrorReport::find(const std::string& object,
                                            std::optional<double> reference) const {
  for (const auto& r : rows) {
    if (r.object == object && r.reference_force == reference) return &r;
  }
  return nullptr;
}

std::string ForceErrorReport::to_csv() const {
  const auto refs = reference_forces();
  std::string out = "object,kappa_gt,kappa_pr";
  for (double f : refs) {
    const std::string p = format_double(f) + "N_";
    out += "," + p + "flat_mae," + p + "flat_sd," + p + "curve_mae," + p + "curve_sd";
  }
  out += ",hold_gt,hold_flat_mae,hold_flat_sd,hold_curve_mae,hold_curve_sd\n";
  for (const auto& name : objects()) {
    const ForceErrorRow* any = nullptr;
    for (const auto& r : rows) {
      if (r.object == name) {
        any = &r;
        break;
      }
    }
    out += name + "," + fixed(any->c_true, 4) + "," + fixed(any->c_pred, 4);
    for (double f : refs) {
      const ForceErrorRow* r = find(name, f);
      if (r) {
        out += "," + fixed(r->flat.mae, 4) + "," + fixed(r->flat.sd, 4) + "," +
               fixed(r->aware.mae, 4) + "," + fixed(r->aware.sd, 4);
      } else {
        out += ",,,,";
      }
    }
    const ForceErrorRow* hold = find(name, std::nullopt);
    if (hold) {
      out += "," + fixed(hold->mean_true_force, 4) + "," + fixed(hold->flat.mae, 4) + "," +
             fixed(hold->flat.sd, 4) + "," + fixed(hold->aware.mae, 4) + "," +
             fixed(hold->aware.sd, 4);
    } else {
      out += ",,,,,";
    }
    out += "\n";
  }
  return out;
}

std::string ForceErrorReport::to_text_table() const {
  const auto refs = reference_forces();
  std::vector<std::vector<std::string>> cells;
  std::vector<std::string> head = {"Object", "GT", "PR"};
  for (double f : refs) {
    head.push_back(format_double(f) + " N Flat");
    head.push_back(format_double(f) + " N Curve");
  }
  for (const char* h : {"Hold GT", "Hold Flat", "Hold Curve"}) head.emplace_back(h);
  cells.push_back(head);
  auto pm = [](const ErrorStat& s) { return fixed(s.mae, 2) + "±" + fixed(s.sd, 2); };
  for (const auto& name : objects()) {
    std::vector<std::string> line = {name};
    const ForceErrorRow* first = nullptr;
    for (const auto& r : rows) {
      if (r.object == name) {
        first = &r;
        break;
      }
    }
    line.push_back(fixed(first->c_true, 2));
    line.push_back(fixed(first->c_pred, 2));
    for (double f : refs) {
      const ForceErrorRow* r = find(name, f);
      line.push_back(r ? pm(r->flat) : "-");
      line.push_back(r ? pm(r->aware) : "-");
    }
    const ForceErrorRow* hold = find(name, std::nullopt);
    line.push_back(hold ? fixed(hold->mean_true_force, 2) : "-");
    line.push_back(hold ? pm(hold->flat) : "-");
    line.push_back(hold ? pm(hold->aware) : "-");
    cells.push_back(line);
  }
  // "±" is two bytes in UTF-8 but one column on screen.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> widths(head.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t k = 0; k < line.size(); ++k) widths[k] = std::max(widths[k], width(line[k]));
  }
  std::string out;
  for (const auto& line : cells) {
    for (std::size_t k = 0; k < line.size(); ++k) {
      if (k > 0) out += "  ";
      out += line[k] + std::string(widths[k] - width(line[k]), ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += "\n";
  }
  return out;
}

void to_json(nlohmann::json& j, const ForceErrorReport& r) {
  auto stat = [](const ErrorStat& s) {
    return nlohmann::json{{"mae", s.mae}, {"sd", s.sd}, {"mean_signed", s.mean_signed}, {"n", s.n}};
  };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"object", row.object},
                    {"kappa_gt", row.c_true},
                    {"kappa_pr", row.c_pred},
                    {"reference_force", row.reference_force ? nlohmann::json(*row.reference_force)
                                                            : nlohmann::json(nullptr)},
                    {"mean_true_force", row.mean_true_force},
                    {"flat", stat(row.flat)},
                    {"curve", stat(row.aware)}});
  }
  j = {{"rows", rows}, {"warnings", r.warnings}};
}

}  // namespace curvecal
