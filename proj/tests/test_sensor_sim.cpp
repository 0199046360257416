#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "curvecal/errors.hpp"
#include "curvecal/sensor_sim.hpp"
#include "support/property.hpp"

using namespace curvecal;
using curvecal::testing::Gen;
using curvecal::testing::for_all;

namespace {

SimConfig quiet() {
  SimConfig c;
  c.noise_sigma_counts = 0.0;
  return c;
}

// Independent quantizer: volts -> nearest count on the full-scale ladder.
int oracle_counts(double volts, double full_scale = 5.0, int bits = 10) {
  const int top = (1 << bits) - 1;
  double v = volts < 0 ? 0 : (volts > full_scale ? full_scale : volts);
  return static_cast<int>(std::floor(v / full_scale * top + 0.5));
}

double reading_at(const SensorIdentity& id, const SimConfig& cfg, double force, double kappa) {
  Rng rng(1);
  NodeArray zero{};
  auto base = scan(id, cfg, zero, kappa, rng);
  auto loaded = scan(id, cfg, block_force_profile(force), kappa, rng);
  return block_reading(loaded, block_sum(base));
}

}  // namespace

TEST_CASE("identity is deterministic per seed") {
  SimConfig cfg;
  CHECK(make_identity("A", 7, cfg) == make_identity("A", 7, cfg));

  auto a = make_identity("A", 7, cfg);
  auto b = make_identity("A", 8, cfg);
  int differing = 0;
  for (int n = 0; n < kNodeCount; ++n) {
    differing += a.node_baseline_r0[n] != b.node_baseline_r0[n];
    differing += a.prestrain_alpha[n] != b.prestrain_alpha[n];
    differing += a.prestrain_beta[n] != b.prestrain_beta[n];
    differing += a.sensitivity_k[n] != b.sensitivity_k[n];
  }
  CHECK(differing > 0);

  for (double r0 : a.node_baseline_r0) {
    CHECK(r0 >= cfg.r0_ohm.min);
    CHECK(r0 <= cfg.r0_ohm.max);
  }
  for (int n = 0; n < kNodeCount; ++n) {
    CHECK(a.prestrain_alpha[n] >= cfg.prestrain_alpha.min);
    CHECK(a.prestrain_alpha[n] <= cfg.prestrain_alpha.max);
    CHECK(a.sensitivity_k[n] >= cfg.sensitivity_k.min);
    CHECK(a.sensitivity_k[n] <= cfg.sensitivity_k.max);
  }
}

TEST_CASE("prestrain varies across nodes") {
  auto id = make_identity("A", 7, SimConfig{});
  double lo = id.prestrain_alpha[0], hi = lo;
  for (double a : id.prestrain_alpha) {
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  CHECK(hi > lo);
}

TEST_CASE("inverted ranges are configuration errors") {
  SimConfig cfg;
  cfg.r0_ohm = {3500.0, 2500.0};
  CHECK_THROWS_AS(make_identity("A", 7, cfg), ConfigError);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  SimConfig bits;
  bits.circuit.adc_bits = 0;
  CHECK_THROWS_AS(bits.validate(), ConfigError);
}

TEST_CASE("node resistance") {
  SimConfig cfg;
  auto id = make_identity("A", 7, cfg);

  SUBCASE("zero force gives the bent no-load resistance") {
    for (double c : {0.0, 17.5, 80.0}) {
      const double r0 = id.node_baseline_r0[3];
      const double expected = r0 + id.prestrain_alpha[3] * c + id.prestrain_beta[3] * c * c;
      CHECK(node_resistance(id, cfg, 3, 0.0, c) == doctest::Approx(expected).epsilon(1e-15));
      CHECK(no_load_resistance(id, 3, c) == doctest::Approx(expected).epsilon(1e-15));
    }
  }

  SUBCASE("higher curvature gives a smaller relative drop") {
    for_all(200, 11, [&](Gen& g) {
      const int node = g.integer(0, 15);
      const double f = g.uniform(0.1, 20.0);
      const double k1 = g.uniform(0.0, 79.0);
      const double k2 = g.uniform(k1 + 0.5, 80.0);
      auto drop = [&](double k) {
        const double rb = no_load_resistance(id, node, k);
        return (rb - node_resistance(id, cfg, node, f, k)) / rb;
      };
      CHECK(drop(k2) < drop(k1));
    });
  }

  SUBCASE("large force decays monotonically toward zero") {
    double prev = node_resistance(id, cfg, 5, 0.0, 25.0);
    for (double f = 1.0; f <= 1e6; f *= 10.0) {
      const double r = node_resistance(id, cfg, 5, f, 25.0);
      CHECK(r < prev);
      CHECK(r > 0.0);
      prev = r;
    }
    CHECK(prev < 1.0);
  }

  SUBCASE("negative force and curvature are rejected") {
    CHECK_THROWS_AS(node_resistance(id, cfg, 0, -1.0, 0.0), DomainError);
    CHECK_THROWS_AS(node_resistance(id, cfg, 0, 1.0, -1.0), DomainError);
    CHECK_THROWS_AS(node_resistance(id, cfg, 16, 1.0, 0.0), UsageError);
  }
}

TEST_CASE("readout voltage") {
  CircuitConfig c;
  CHECK(readout_voltage(c, 5600.0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(readout_voltage(c, 1e15) == doctest::Approx(0.1).epsilon(1e-9));
  // (1 + 5600/2800) * 0.1
  CHECK(readout_voltage(c, 2800.0) == doctest::Approx((1.0 + 5600.0 / 2800.0) * 0.1).epsilon(1e-15));
  CHECK_THROWS_AS(readout_voltage(c, 0.0), DomainError);
  CHECK_THROWS_AS(readout_voltage(c, -5.0), DomainError);

  for_all(200, 12, [&](Gen& g) {
    const double r1 = g.uniform(1.0, 1e5);
    const double r2 = r1 * g.uniform(1.001, 10.0);
    CHECK(readout_voltage(c, r2) < readout_voltage(c, r1));
  });
}

TEST_CASE("quantize clamps to the ADC ladder") {
  CircuitConfig c;
  CHECK(quantize(c, -1.0) == 0);
  CHECK(quantize(c, 0.0) == 0);
  CHECK(quantize(c, 5.0) == 1023);
  CHECK(quantize(c, 100.0) == 1023);
  CHECK(quantize(c, 2.5) == oracle_counts(2.5));
}

TEST_CASE("zero force zero noise frame equals quantized baseline") {
  SimConfig cfg = quiet();
  auto id = make_identity("A", 7, cfg);
  Rng rng(3);
  NodeArray zero{};
  auto frame = scan(id, cfg, zero, 0.0, rng);
  for (int n = 0; n < kNodeCount; ++n) {
    const double v = (1.0 + 5600.0 / id.node_baseline_r0[n]) * 0.1;
    CHECK(frame.node_counts[n] == oracle_counts(v));
  }
  CHECK(frame.applied_force == 0.0);
}

TEST_CASE("same seed gives identical frames") {
  SimConfig cfg;
  auto id = make_identity("A", 7, cfg);
  for_all(20, 13, [&](Gen& g) {
    auto profile = g.array<kNodeCount>(0.0, 10.0);
    const double kappa = g.uniform(0.0, 120.0);
    const auto seed = static_cast<std::uint64_t>(g.integer(0, 1 << 30));
    Rng a(seed), b(seed);
    for (int i = 0; i < 5; ++i) {
      CHECK(scan(id, cfg, profile, kappa, a, i) == scan(id, cfg, profile, kappa, b, i));
    }
  });
}

TEST_CASE("loading the central block raises exactly those four nodes") {
  SimConfig cfg;
  auto id = make_identity("A", 7, cfg);
  SimConfig q = quiet();
  NodeArray zero{};
  NodeArray load{};
  for (int idx : {5, 6, 9, 10}) load[idx] = 5.0;

  Rng r0(1);
  auto baseline = scan(id, q, zero, 0.0, r0);

  Rng rng(99);
  NodeArray mean{};
  for (int i = 0; i < 100; ++i) {
    auto f = scan(id, cfg, load, 0.0, rng);
    for (int n = 0; n < kNodeCount; ++n) mean[n] += f.node_counts[n] / 100.0;
  }
  const double three_sigma = 3.0 * cfg.noise_sigma_counts;
  for (int n = 0; n < kNodeCount; ++n) {
    CAPTURE(n);
    const bool central = n == 5 || n == 6 || n == 9 || n == 10;
    CHECK((mean[n] - baseline.node_counts[n] > three_sigma) == central);
  }
}

TEST_CASE("block reading") {
  ScanFrame f;
  for (int n = 0; n < kNodeCount; ++n) f.node_counts[n] = 50 + n;
  const double base = block_sum(f);
  CHECK(block_reading(f, base) == 0.0);

  ScanFrame up = f;
  for (int idx : kCentralBlock) up.node_counts[idx] += 10;
  CHECK(block_reading(up, base) == 40.0);

  ScanFrame down = f;
  for (int idx : kCentralBlock) down.node_counts[idx] -= 3;
  CHECK(block_reading(down, base) == 0.0);

  for_all(200, 14, [&](Gen& g) {
    ScanFrame r;
    for (auto& c : r.node_counts) c = g.integer(0, 1023);
    const double b = g.uniform(0.0, 2000.0);
    // rows 1-2, columns 1-2 of a row-major 4x4 grid
    double sum = 0.0;
    for (int row = 1; row <= 2; ++row)
      for (int col = 1; col <= 2; ++col) sum += r.node_counts[row * 4 + col];
    CHECK(block_reading(r, b) == std::max(0.0, sum - b));
  });
}

TEST_CASE("block reading is nondecreasing in force below the unreliable threshold") {
  SimConfig cfg = quiet();
  for_all(30, 15, [&](Gen& g) {
    auto id = make_identity("S", static_cast<std::uint64_t>(g.integer(0, 1000)), cfg);
    const double kappa = g.uniform(0.0, 89.9);
    double prev = -1.0;
    for (double f = 0.0; f <= 20.0; f += 0.5) {
      const double s = reading_at(id, cfg, f, kappa);
      CHECK(s >= prev);
      prev = s;
    }
  });
}

TEST_CASE("higher curvature reduces block sensitivity") {
  SimConfig cfg = quiet();
  for_all(50, 16, [&](Gen& g) {
    auto id = make_identity("S", static_cast<std::uint64_t>(g.integer(0, 1000)), cfg);
    const double f = g.uniform(2.0, 20.0);
    CAPTURE(f);
    const double s0 = reading_at(id, cfg, f, 0.0);
    const double s50 = reading_at(id, cfg, f, 50.0);
    const double s80 = reading_at(id, cfg, f, 80.0);
    CHECK(s0 > s50);
    CHECK(s50 > s80);
  });
}

TEST_CASE("counts never exceed the ADC range") {
  for_all(100, 17, [&](Gen& g) {
    SimConfig cfg;
    cfg.circuit.adc_bits = g.integer(8, 16);
    cfg.noise_sigma_counts = g.uniform(0.0, 200.0);
    cfg.r0_ohm = {1.0, g.uniform(1.0, 10.0)};
    auto id = make_identity("X", 1, cfg);
    auto profile = g.array<kNodeCount>(0.0, 1e6);
    Rng rng(g.integer(0, 1000));
    auto frame = scan(id, cfg, profile, g.uniform(0.0, 200.0), rng);
    for (int c : frame.node_counts) {
      CHECK(c >= 0);
      CHECK(c <= (1 << cfg.circuit.adc_bits) - 1);
    }
  });
}

TEST_CASE("noise is amplified at and above the unreliable threshold") {
  SimConfig cfg;
  auto id = make_identity("A", 7, cfg);
  NodeArray zero{};
  auto spread = [&](double kappa) {
    Rng rng(5);
    double s = 0.0, ss = 0.0;
    const int n = 4000;
    for (int i = 0; i < n; ++i) {
      const double c = scan(id, cfg, zero, kappa, rng).node_counts[0];
      s += c;
      ss += c * c;
    }
    return std::sqrt(ss / n - (s / n) * (s / n));
  };
  const double ratio = spread(100.0) / spread(80.0);
  CHECK(ratio > 4.0);
  CHECK(ratio < 6.0);
}

TEST_CASE("cylinder labels") {
  auto l = CurvatureLabel::cylinder(25.0);
  CHECK(l.kappa == 25.0);
  CHECK(l.k1 == 25.0);
  CHECK(l.k2 == 0.0);
  CHECK_THROWS_AS(CurvatureLabel::cylinder(-1.0), DomainError);
}

TEST_CASE("frame streams round-trip") {
  SimConfig cfg;
  auto id = make_identity("A", 7, cfg);
  Rng rng(2);
  std::vector<ScanFrame> frames;
  for (int i = 0; i < 10; ++i) {
    frames.push_back(scan(id, cfg, block_force_profile(0.37 * i), 12.5, rng, i / 50.0));
  }
  const auto dir = std::filesystem::temp_directory_path() / "curvecal_test_frames";
  std::filesystem::create_directories(dir);

  CHECK(frame_csv_header().rfind("t,f_true,kappa_true,n00,n01", 0) == 0);
  CHECK(frame_csv_header().find("n33") != std::string::npos);

  write_frames_csv((dir / "f.csv").string(), frames);
  CHECK(read_frames_csv((dir / "f.csv").string()) == frames);

  write_frames_jsonl((dir / "f.jsonl").string(), frames);
  std::ifstream in(dir / "f.jsonl");
  std::string line;
  std::size_t i = 0;
  while (std::getline(in, line)) {
    REQUIRE(i < frames.size());
    CHECK(frame_from_json(nlohmann::json::parse(line)) == frames[i++]);
  }
  CHECK(i == frames.size());
  std::filesystem::remove_all(dir);
}

TEST_CASE("sim config json round-trip") {
  SimConfig cfg;
  cfg.gamma = 0.03;
  cfg.circuit.adc_bits = 12;
  nlohmann::json j = cfg;
  SimConfig back = j.get<SimConfig>();
  CHECK(back.gamma == 0.03);
  CHECK(back.circuit.adc_bits == 12);
  CHECK(back.r0_ohm.min == cfg.r0_ohm.min);
}

TEST_CASE("mix_seed decorrelates neighbouring indices") {
  CHECK(mix_seed(7, 0) != mix_seed(7, 1));
  CHECK(mix_seed(7, 0) != mix_seed(8, 0));
  CHECK(mix_seed(7, 3) == mix_seed(7, 3));
}
