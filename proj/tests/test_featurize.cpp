#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include <doctest.h>

#include "curvecal/errors.hpp"
#include "curvecal/featurize.hpp"
#include "support/property.hpp"

using namespace curvecal;
using curvecal::testing::Gen;
using curvecal::testing::for_all;

namespace {

ScanFrame frame_with(int value) {
  ScanFrame f;
  f.node_counts.fill(value);
  return f;
}

BaselineMeasurement baseline_of(const NodeArray& means) {
  BaselineMeasurement b;
  b.node_means = means;
  b.n_averaged = 1;
  return b;
}

// Naive reference statistics, written out longhand.
struct NaiveStats {
  double sum = 0, mean = 0, sd = 0, lo = 0, hi = 0, range = 0, l2 = 0, iqr = 0;
};

double naive_quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * (v.size() - 1);
  const auto below = static_cast<std::size_t>(std::floor(pos));
  const auto above = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - below;
  return v[below] * (1.0 - frac) + v[above] * frac;
}

NaiveStats naive(const std::vector<double>& v) {
  NaiveStats s;
  for (double x : v) s.sum += x;
  s.mean = s.sum / v.size();
  double sq = 0;
  for (double x : v) sq += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(sq / v.size());
  s.lo = *std::min_element(v.begin(), v.end());
  s.hi = *std::max_element(v.begin(), v.end());
  s.range = s.hi - s.lo;
  double ss = 0;
  for (double x : v) ss += x * x;
  s.l2 = std::sqrt(ss);
  s.iqr = naive_quantile(v, 0.75) - naive_quantile(v, 0.25);
  return s;
}

}  // namespace

TEST_CASE("baseline averaging") {
  SUBCASE("identical frames") {
    std::vector<ScanFrame> frames(100, frame_with(321));
    auto b = average_baseline(frames);
    CHECK(b.n_averaged == 100);
    for (double m : b.node_means) CHECK(m == 321.0);
  }
  SUBCASE("two frames") {
    std::vector<ScanFrame> frames{frame_with(0), frame_with(0)};
    frames[0].node_counts[0] = 10;
    frames[1].node_counts[0] = 20;
    CHECK(average_baseline(frames).node_means[0] == 15.0);
  }
  SUBCASE("simulated frames match a streaming mean") {
    SimConfig cfg;
    auto id = make_identity("A", 7, cfg);
    Rng rng(4);
    NodeArray zero{};
    std::vector<ScanFrame> frames;
    for (int i = 0; i < 100; ++i) frames.push_back(scan(id, cfg, zero, 30.0, rng));
    // one-pass running mean
    NodeArray running{};
    for (std::size_t i = 0; i < frames.size(); ++i) {
      for (int n = 0; n < kNodeCount; ++n) {
        running[n] += (frames[i].node_counts[n] - running[n]) / static_cast<double>(i + 1);
      }
    }
    auto b = average_baseline(frames);
    for (int n = 0; n < kNodeCount; ++n) CHECK(std::abs(b.node_means[n] - running[n]) < 1e-9);
  }
  SUBCASE("errors") {
    std::vector<ScanFrame> none;
    CHECK_THROWS_AS(average_baseline(none), UsageError);
    std::vector<ScanFrame> loaded(5, frame_with(100));
    loaded[3].applied_force = 0.06;
    CHECK_THROWS_AS(average_baseline(loaded), ContaminationError);
    loaded[3].applied_force = 0.05;
    CHECK_NOTHROW(average_baseline(loaded));
  }
}

TEST_CASE("statistics of a constant vector") {
  for (double c : {0.0, 0.25, 1.0}) {
    std::vector<double> v(16, c);
    auto s = global_statistics(v);
    CHECK(s[0] == doctest::Approx(16 * c));
    CHECK(s[1] == doctest::Approx(c));
    CHECK(s[2] == 0.0);
    CHECK(s[3] == c);
    CHECK(s[4] == c);
    CHECK(s[5] == 0.0);
    CHECK(s[6] == doctest::Approx(4 * std::abs(c)));
    CHECK(s[7] == 0.0);
  }
}

TEST_CASE("statistics of an even ramp") {
  std::vector<double> v(16);
  for (int i = 0; i < 16; ++i) v[i] = i / 15.0;
  auto s = global_statistics(v);
  CHECK(s[3] == 0.0);
  CHECK(s[4] == 1.0);
  CHECK(s[5] == 1.0);
  CHECK(s[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("features match naive formulas") {
  NormalizationSpec norm;
  for_all(300, 21, [&](Gen& g) {
    NodeArray means;
    for (auto& m : means) m = g.uniform(0.0, 1023.0);
    auto fv = extract_features(baseline_of(means), norm);
    std::vector<double> x(16);
    for (int n = 0; n < 16; ++n) {
      x[n] = means[n] / 1023.0;
      CHECK(std::abs(fv.normalized_nodes[n] - x[n]) < 1e-12);
    }
    auto s = naive(x);
    CHECK(std::abs(fv.stat(GlobalStat::sum) - s.sum) < 1e-12);
    CHECK(std::abs(fv.stat(GlobalStat::mean) - s.mean) < 1e-12);
    CHECK(std::abs(fv.stat(GlobalStat::std) - s.sd) < 1e-12);
    CHECK(std::abs(fv.stat(GlobalStat::min) - s.lo) < 1e-12);
    CHECK(std::abs(fv.stat(GlobalStat::max) - s.hi) < 1e-12);
    CHECK(std::abs(fv.stat(GlobalStat::range) - s.range) < 1e-12);
    CHECK(std::abs(fv.stat(GlobalStat::l2) - s.l2) < 1e-12);
    CHECK(std::abs(fv.stat(GlobalStat::iqr) - s.iqr) < 1e-12);

    // population variance convention
    double sq = 0;
    for (double v : x) sq += (v - s.mean) * (v - s.mean);
    CHECK(std::abs(16.0 * fv.stat(GlobalStat::std) * fv.stat(GlobalStat::std) - sq) < 1e-12);

    auto arr = fv.as_array();
    for (int n = 0; n < 16; ++n) CHECK(arr[n] == fv.normalized_nodes[n]);
    for (int k = 0; k < 8; ++k) CHECK(arr[16 + k] == fv.global_stats[k]);
  });
}

TEST_CASE("stats are permutation invariant, the full vector is not") {
  NormalizationSpec norm;
  for_all(200, 22, [&](Gen& g) {
    NodeArray means;
    for (auto& m : means) m = g.uniform(0.0, 1023.0);
    NodeArray shuffled = means;
    do {
      std::shuffle(shuffled.begin(), shuffled.end(), g.rng());
    } while (shuffled == means);
    auto a = extract_features(baseline_of(means), norm);
    auto b = extract_features(baseline_of(shuffled), norm);
    for (int k = 0; k < kGlobalStatCount; ++k) {
      CHECK(b.global_stats[k] == doctest::Approx(a.global_stats[k]).epsilon(1e-12));
    }
    CHECK(a.as_array() != b.as_array());
  });
}

TEST_CASE("extraction is idempotent") {
  NodeArray means;
  for (int n = 0; n < 16; ++n) means[n] = 40.0 + 3.5 * n;
  auto b = baseline_of(means);
  CHECK(extract_features(b, {}) == extract_features(b, {}));
}

TEST_CASE("normalization") {
  CHECK(NormalizationSpec::adc_range(10).max == 1023.0);
  CHECK(NormalizationSpec::adc_range(12).max == 4095.0);
  NodeArray means{};
  CHECK_THROWS_AS(extract_features(baseline_of(means), {5.0, 5.0}), ConfigError);
  CHECK_THROWS_AS(extract_features(baseline_of(means), {5.0, 1.0}), ConfigError);
  means[2] = -1.0;
  CHECK_THROWS_AS(extract_features(baseline_of(means), {}), DomainError);
}

TEST_CASE("quantiles interpolate linearly") {
  std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  CHECK(linear_quantile(v, 0.25) == doctest::Approx(1.75));
  CHECK(linear_quantile(v, 0.75) == doctest::Approx(3.25));
  CHECK(linear_quantile(v, 0.0) == 1.0);
  CHECK(linear_quantile(v, 1.0) == 4.0);
  std::vector<double> none;
  CHECK_THROWS_AS(linear_quantile(none, 0.5), UsageError);
  CHECK_THROWS_AS(global_statistics(none), UsageError);
}

TEST_CASE("dihedral transforms are the 8 grid symmetries") {
  NodeArray id;
  std::iota(id.begin(), id.end(), 0.0);
  CHECK(dihedral_transform(id, 0) == id);

  std::set<std::vector<double>> seen;
  auto neighbours = [](int a, int b) {
    const int ra = a / 4, ca = a % 4, rb = b / 4, cb = b % 4;
    return std::abs(ra - rb) + std::abs(ca - cb) == 1;
  };
  for (int k = 0; k < 8; ++k) {
    auto t = dihedral_transform(id, k);
    seen.insert(std::vector<double>(t.begin(), t.end()));
    // a permutation that keeps grid neighbours adjacent
    auto sorted = t;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == id);
    std::array<int, 16> where{};
    for (int pos = 0; pos < 16; ++pos) where[static_cast<int>(t[pos])] = pos;
    for (int a = 0; a < 16; ++a)
      for (int b = 0; b < 16; ++b)
        if (neighbours(a, b)) CHECK(neighbours(where[a], where[b]));
    // the central block maps onto itself
    std::set<int> centre;
    for (int idx : kCentralBlock) centre.insert(where[idx]);
    CHECK(centre == std::set<int>{5, 6, 9, 10});
  }
  CHECK(seen.size() == 8);

  // rotating four times is the identity
  auto r = id;
  for (int i = 0; i < 4; ++i) r = dihedral_transform(r, 1);
  CHECK(r == id);

  CHECK_THROWS_AS(dihedral_transform(id, 8), UsageError);
  CHECK_THROWS_AS(dihedral_transform(id, -1), UsageError);
}

TEST_CASE("feature csv round-trip") {
  FeatureDataset ds;
  Gen g(23);
  for (int i = 0; i < 12; ++i) {
    FeatureRow row;
    row.kappa_true = 80.0 * i / 11.0;
    for (auto& f : row.features) f = g.uniform(-1.0, 5.0);
    row.group = i / 4;
    ds.rows.push_back(row);
  }
  const auto dir = std::filesystem::temp_directory_path() / "curvecal_test_features";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "features.csv").string();
  write_feature_csv(path, ds);

  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  CHECK(first.find("sum,mean,std,min,max,range,l2,iqr") != std::string::npos);

  auto back = read_feature_csv(path);
  REQUIRE(back.rows.size() == ds.rows.size());
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    CHECK(back.rows[i].kappa_true == ds.rows[i].kappa_true);
    CHECK(back.rows[i].features == ds.rows[i].features);
    CHECK(back.rows[i].group == ds.rows[i].group);
  }
  CHECK(back.norm == ds.norm);

  {
    std::ofstream bad(dir / "bad.csv");
    bad << "f01,kappa_true\n1,2\n";
  }
  CHECK_THROWS_AS(read_feature_csv((dir / "bad.csv").string()), FormatError);
  std::filesystem::remove_all(dir);
}
