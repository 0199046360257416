#include <cmath>
#include <filesystem>

#include <doctest.h>

#include "curvecal/errors.hpp"
#include "curvecal/forcecal.hpp"
#include "support/property.hpp"

using namespace curvecal;
using curvecal::testing::Gen;
using curvecal::testing::for_all;

namespace {

// Published surface coefficients, written out independently of the library.
constexpr double kS = 0.009625;
constexpr double kS2 = -0.000014;
constexpr double kSC = -0.000372;
constexpr double kSC2 = 0.000005;

double published(double s, double c) { return kS * s + kS2 * s * s + kSC * s * c + kSC2 * s * c * c; }

std::vector<CalibrationSample> published_grid(double noise_sigma = 0.0, std::uint64_t seed = 0) {
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma > 0 ? noise_sigma : 1.0);
  std::vector<CalibrationSample> out;
  for (double c : {0.0, 20.0, 40.0, 60.0, 80.0}) {
    for (int s = 0; s <= 1023; s += 11) {
      double f = published(s, c);
      if (noise_sigma > 0) f += noise(rng);
      out.push_back({static_cast<double>(s), c, f});
    }
  }
  return out;
}

double coef(const CalibrationSurface& s, int i, int j) { return s.coefficient(i, j).value(); }

double rss_naive(const CalibrationSurface& s, const std::vector<CalibrationSample>& data) {
  double rss = 0;
  for (const auto& d : data) {
    double f = 0;
    for (const auto& t : s.terms) f += t.coefficient * std::pow(d.s, t.s_power) * std::pow(d.c, t.c_power);
    rss += (f - d.f) * (f - d.f);
  }
  return rss;
}

CalibrationSurface random_surface(Gen& g, SurfaceVariant v) {
  CalibrationSurface s;
  s.variant = v;
  for (auto [i, j] : basis_terms(v)) s.terms.push_back({i, j, g.uniform(-1.0, 1.0)});
  return s;
}

}  // namespace

TEST_CASE("basis terms all carry an S factor") {
  auto flat = basis_terms(SurfaceVariant::flat);
  auto aware = basis_terms(SurfaceVariant::curvature_aware);
  CHECK(flat.size() == 3);
  CHECK(aware.size() == 6);
  for (auto [i, j] : aware) {
    CHECK(i >= 1);
    CHECK(i + j <= 3);
  }
  CHECK(term_name(1, 2) == "S*C^2");
  CHECK(term_name(2, 0) == "S^2");
}

TEST_CASE("published coefficients are recovered from noise-free data") {
  auto data = published_grid();
  auto fit = fit_surface(data, SurfaceVariant::curvature_aware);
  CHECK(std::abs(coef(fit, 1, 0) - kS) <= 1e-6 * std::abs(kS));
  CHECK(std::abs(coef(fit, 2, 0) - kS2) <= 1e-6 * std::abs(kS2));
  CHECK(std::abs(coef(fit, 1, 1) - kSC) <= 1e-6 * std::abs(kSC));
  CHECK(std::abs(coef(fit, 1, 2) - kSC2) <= 1e-6 * std::abs(kSC2));
  CHECK(std::abs(coef(fit, 3, 0)) <= 1e-9);
  CHECK(std::abs(coef(fit, 2, 1)) <= 1e-9);
  CHECK(fit.fit_r2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(fit.fit_domain.s_max == 1023.0);
  CHECK(fit.fit_domain.c_max == 80.0);
}

TEST_CASE("noisy published data still fits well") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto fit = fit_surface(published_grid(0.3, seed), SurfaceVariant::curvature_aware);
    CHECK(fit.fit_r2 >= 0.92);
  }
}

TEST_CASE("flat fit on the zero-curvature slice") {
  std::vector<CalibrationSample> slice;
  for (const auto& d : published_grid()) {
    if (d.c == 0.0) slice.push_back(d);
  }
  auto fit = fit_surface(slice, SurfaceVariant::flat);
  CHECK(coef(fit, 1, 0) == doctest::Approx(kS).epsilon(1e-6));
  CHECK(coef(fit, 2, 0) == doctest::Approx(kS2).epsilon(1e-6));
  CHECK(std::abs(coef(fit, 3, 0)) <= 1e-9);
}

TEST_CASE("published surface predictions") {
  auto ref = reference_surface();
  CHECK(predict_force(ref, 100, 0).force == doctest::Approx(published(100, 0)).epsilon(1e-12));
  CHECK(predict_force(ref, 100, 0).force == doctest::Approx(0.8225).epsilon(1e-12));
  CHECK(predict_force(ref, 100, 20).force == doctest::Approx(published(100, 20)).epsilon(1e-12));
  CHECK(predict_force(ref, 100, 20).force == doctest::Approx(0.2785).epsilon(1e-12));
  CHECK(predict_force(ref, 100, 20).force < predict_force(ref, 100, 0).force);
}

TEST_CASE("zero reading always predicts zero force") {
  for_all(500, 31, [&](Gen& g) {
    const double c = g.uniform(0.0, 80.0);
    auto flat = random_surface(g, SurfaceVariant::flat);
    auto aware = random_surface(g, SurfaceVariant::curvature_aware);
    CHECK(predict_force(flat, 0.0, c).force == 0.0);
    CHECK(predict_force(aware, 0.0, c).force == 0.0);
    CHECK(predict_force(reference_surface(), 0.0, c).force == 0.0);
  });
}

TEST_CASE("negative raw predictions are floored and flagged") {
  auto ref = reference_surface();
  auto p = predict_force(ref, 1000.0, 80.0);
  CHECK(evaluate_polynomial(ref, 1000.0, 80.0) < 0.0);
  CHECK(p.force == 0.0);
  CHECK(p.floored);

  auto fit = fit_surface(published_grid(), SurfaceVariant::curvature_aware);
  CHECK_FALSE(predict_force(fit, 500.0, 40.0).extrapolated);
  CHECK(predict_force(fit, 1500.0, 40.0).extrapolated);
  CHECK(predict_force(fit, 500.0, 90.0).extrapolated);
}

TEST_CASE("perturbing any coefficient never lowers the residual") {
  for_all(10, 32, [&](Gen& g) {
    auto data = published_grid(g.uniform(0.05, 0.5), g.integer(0, 1000));
    for (auto variant : {SurfaceVariant::flat, SurfaceVariant::curvature_aware}) {
      auto fit = fit_surface(data, variant);
      const double base = rss_naive(fit, data);
      CHECK(residual_sum_of_squares(fit, data) == doctest::Approx(base).epsilon(1e-10));
      for (std::size_t k = 0; k < fit.terms.size(); ++k) {
        for (double factor : {0.99, 1.01}) {
          auto moved = fit;
          moved.terms[k].coefficient *= factor;
          CHECK(rss_naive(moved, data) >= base);
        }
      }
    }
  });
}

TEST_CASE("flat and aware agree when the data carries no curvature effect") {
  std::vector<CalibrationSample> data;
  for (double c : {0.0, 30.0, 60.0}) {
    for (int s = 0; s <= 800; s += 10) data.push_back({double(s), c, 0.01 * s - 4e-6 * s * s});
  }
  auto flat = fit_surface(data, SurfaceVariant::flat);
  auto aware = fit_surface(data, SurfaceVariant::curvature_aware);
  for (int s = 0; s <= 800; s += 7) {
    CHECK(std::abs(predict_force(flat, s, 0.0).force - predict_force(aware, s, 0.0).force) <= 1e-9);
  }
}

TEST_CASE("fit input rules") {
  auto data = published_grid();
  SUBCASE("too few samples") {
    std::vector<CalibrationSample> few(data.begin(), data.begin() + 5);
    CHECK_THROWS_AS(fit_surface(few, SurfaceVariant::flat), UsageError);
  }
  SUBCASE("curvature above the training limit") {
    auto bad = data;
    bad.push_back({100.0, 100.0, 0.5});
    CHECK_THROWS_AS(fit_surface(bad, SurfaceVariant::curvature_aware), DataRejectedError);
  }
  SUBCASE("aware fit needs three curvatures") {
    std::vector<CalibrationSample> two;
    for (const auto& d : data) {
      if (d.c <= 20.0) two.push_back(d);
    }
    CHECK_THROWS_AS(fit_surface(two, SurfaceVariant::curvature_aware), UsageError);
  }
  SUBCASE("rank deficiency names the collinear columns") {
    std::vector<CalibrationSample> constant_s;
    for (double c : {0.0, 40.0, 80.0}) {
      for (int k = 0; k < 10; ++k) constant_s.push_back({200.0, c, 1.0 + k * 0.01});
    }
    try {
      fit_surface(constant_s, SurfaceVariant::curvature_aware);
      FAIL("expected a degenerate-data error");
    } catch (const DegenerateDataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("collinear") != std::string::npos);
      CHECK(msg.find("S") != std::string::npos);
    }
  }
  SUBCASE("sample validation") {
    CHECK_THROWS_AS(validate_sample({10.0, 0.0, -0.1}), DataRejectedError);
    CHECK_THROWS_AS(validate_sample({10.0, -1.0, 0.1}), DataRejectedError);
    CHECK_NOTHROW(validate_sample({10.0, 0.0, 0.0}));
  }
}

TEST_CASE("pruning recovers the four-term form") {
  auto data = published_grid();
  auto full = fit_surface(data, SurfaceVariant::curvature_aware);
  auto pruned = prune_surface(full, data);
  CHECK(pruned.pruned);
  CHECK(pruned.terms.size() == 4);
  CHECK_FALSE(pruned.coefficient(3, 0).has_value());
  CHECK_FALSE(pruned.coefficient(2, 1).has_value());
  CHECK(coef(pruned, 1, 1) == doctest::Approx(kSC).epsilon(1e-6));

  // noisy data keeps every term and is marked pruned anyway
  auto noisy = published_grid(0.3, 4);
  auto nf = fit_surface(noisy, SurfaceVariant::curvature_aware);
  auto np = prune_surface(nf, noisy);
  CHECK(np.terms.size() == 6);
  CHECK(np.pruned);
}

TEST_CASE("surface and dataset persistence") {
  const auto dir = std::filesystem::temp_directory_path() / "curvecal_test_forcecal";
  std::filesystem::create_directories(dir);
  auto data = published_grid(0.1, 9);
  auto fit = fit_surface(data, SurfaceVariant::curvature_aware);
  save_surface((dir / "s.json").string(), fit);
  auto back = load_surface((dir / "s.json").string());
  REQUIRE(back.terms.size() == fit.terms.size());
  for (std::size_t k = 0; k < fit.terms.size(); ++k) {
    CHECK(back.terms[k].coefficient == fit.terms[k].coefficient);
  }
  CHECK(back.fit_r2 == fit.fit_r2);
  CHECK(back.variant == fit.variant);

  std::vector<CalibrationSample> positive;
  for (const auto& d : data) {
    if (d.f >= 0) positive.push_back(d);
  }
  write_calibration_csv((dir / "c.csv").string(), positive);
  auto read = read_calibration_csv((dir / "c.csv").string());
  REQUIRE(read.size() == positive.size());
  for (std::size_t i = 0; i < read.size(); ++i) {
    CHECK(read[i].s == positive[i].s);
    CHECK(read[i].c == positive[i].c);
    CHECK(read[i].f == positive[i].f);
  }
  CHECK_THROWS_AS(load_surface((dir / "missing.json").string()), FormatError);
  CHECK_THROWS_AS(surface_variant_from_string("curvy"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("error statistics") {
  std::vector<double> pred{1.0, 2.0, 4.0};
  std::vector<double> truth{2.0, 2.0, 2.0};
  auto st = error_stat(pred, truth);
  // |e| = 1, 0, 2
  CHECK(st.mae == doctest::Approx(1.0));
  CHECK(st.sd == doctest::Approx(std::sqrt(2.0 / 3.0)));
  CHECK(st.mean_signed == doctest::Approx(1.0 / 3.0));
  CHECK(st.n == 3);
  std::vector<double> short_truth{1.0};
  CHECK_THROWS_AS(error_stat(pred, short_truth), UsageError);
}

TEST_CASE("variant comparison") {
  auto ref = reference_surface();
  CalibrationSurface flat;
  flat.variant = SurfaceVariant::flat;
  flat.terms = {{1, 0, kS}, {2, 0, kS2}};

  EvalGroup g0{"box", 0.0, 0.0, 2.0, {}};
  EvalGroup g1{"bottle", 20.0, 20.0, 2.0, {}};
  EvalGroup empty{"bottle", 20.0, 20.0, 4.0, {}};
  EvalGroup hold{"bottle", 20.0, 20.0, std::nullopt, {}};
  for (double s : {200.0, 210.0, 220.0}) {
    g0.samples.push_back({s, 0.0, published(s, 0.0)});
    g1.samples.push_back({s, 20.0, published(s, 20.0)});
    hold.samples.push_back({s, 20.0, published(s, 20.0)});
  }
  std::vector<EvalGroup> groups{g0, g1, empty, hold};
  auto report = compare_variants(flat, ref, groups);
  CHECK(report.rows.size() == 3);
  REQUIRE(report.warnings.size() == 1);
  CHECK(report.warnings[0].find("bottle") != std::string::npos);

  const auto* box = report.find("box", 2.0);
  REQUIRE(box);
  CHECK(box->flat.mae == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(box->aware.mae == doctest::Approx(0.0).epsilon(1e-12));

  // at curvature the flat surface over-reads this published surface's
  // suppressed force; the aware one is exact
  const auto* bottle = report.find("bottle", 2.0);
  REQUIRE(bottle);
  CHECK(bottle->aware.mae == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(bottle->flat.mae > 0.1);

  const std::string csv = report.to_csv();
  CHECK(csv.rfind("object,kappa_gt,kappa_pr,2N_flat_mae,2N_flat_sd,2N_curve_mae,2N_curve_sd,"
                  "hold_gt,hold_flat_mae,hold_flat_sd,hold_curve_mae,hold_curve_sd\n",
                  0) == 0);
  CHECK(csv.find("\nbox,0.0000,0.0000,") != std::string::npos);
  CHECK(report.to_text_table().find("bottle") != std::string::npos);

  CalibrationSurface unfitted;
  CHECK_THROWS_AS(compare_variants(unfitted, ref, groups), UsageError);
}
