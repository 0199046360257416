#pragma once

// Forward model of a 4x4 piezoresistive (Velostat) array and its
// row-column readout. A node's resistance drops with applied force and
// rises with mounting curvature; each node is read through a
// non-inverting amplifier and quantized by the microcontroller ADC.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace curvecal {

inline constexpr int kGridSide = 4;
inline constexpr int kNodeCount = kGridSide * kGridSide;

using NodeArray = std::array<double, kNodeCount>;
using NodeCounts = std::array<int, kNodeCount>;
using Rng = std::mt19937_64;

/// Row-major indices of the central 2x2 node block: (1,1) (1,2) (2,1) (2,2).
inline constexpr std::array<int, 4> kCentralBlock = {5, 6, 9, 10};

struct Range {
  double min = 0.0;
  double max = 0.0;
};

struct CircuitConfig {
  double r_gain = 5600.0;  // ohms, amplifier feedback resistor
  double v_ref = 0.1;      // volts
  int adc_bits = 10;
  double adc_full_scale = 5.0;  // volts
  double scan_rate_hz = 50.0;

  int adc_max() const { return (1 << adc_bits) - 1; }
  void validate() const;
};

struct SimConfig {
  Range r0_ohm{2500.0, 3500.0};
  Range prestrain_alpha{15.0, 35.0};   // ohms per m^-1
  Range prestrain_beta{0.05, 0.20};    // ohms per m^-2
  Range sensitivity_k{2.5, 4.0};       // 1/N
  double gamma = 0.02;                 // per m^-1, curvature desensitization
  double noise_sigma_counts = 2.0;
  double unreliable_threshold = 90.0;  // m^-1
  double fluctuation_factor = 5.0;
  CircuitConfig circuit;

  void validate() const;
};

struct SensorIdentity {
  std::string sensor_id;
  std::uint64_t seed = 0;
  NodeArray node_baseline_r0{};
  NodeArray prestrain_alpha{};
  NodeArray prestrain_beta{};
  NodeArray sensitivity_k{};

  bool operator==(const SensorIdentity&) const = default;
};

/// Principal curvatures plus the reported scalar. Cylinder fixtures use the
/// operative label kappa = k1 with k2 = 0.
struct CurvatureLabel {
  double kappa = 0.0;
  double k1 = 0.0;
  double k2 = 0.0;

  static CurvatureLabel cylinder(double kappa);
};

struct ScanFrame {
  double t = 0.0;
  NodeCounts node_counts{};
  double applied_force = 0.0;
  std::optional<double> curvature_true;

  bool operator==(const ScanFrame&) const = default;
};

SensorIdentity make_identity(const std::string& sensor_id, std::uint64_t seed,
                             const SimConfig& config);

/// R = R_base(C) / (1 + k_eff(C) F) with R_base = r0 + alpha C + beta C^2 and
/// k_eff = k / (1 + gamma C).
double node_resistance(const SensorIdentity& identity, const SimConfig& config,
                       int node, double force_on_node, double kappa);

double no_load_resistance(const SensorIdentity& identity, int node, double kappa);

/// V_out = (1 + R_g / R) V_ref.
double readout_voltage(const CircuitConfig& circuit, double resistance);

int quantize(const CircuitConfig& circuit, double volts);

/// Force profile with `block_force` split evenly over the central block.
NodeArray block_force_profile(double block_force);

ScanFrame scan(const SensorIdentity& identity, const SimConfig& config,
               std::span<const double, kNodeCount> force_profile, double kappa,
               Rng& rng, double t = 0.0);

/// Sum of raw counts over the central block.
double block_sum(const ScanFrame& frame);

/// Central block sum minus its stored no-load sum, floored at zero.
double block_reading(const ScanFrame& frame, double baseline_block_sum);

/// splitmix64 finalizer; used to derive independent per-sample seeds.
std::uint64_t mix_seed(std::uint64_t stage_seed, std::uint64_t index);

// Frame streams: CSV header t,f_true,kappa_true,n00..n33 and JSON lines.
std::string frame_csv_header();
std::string frame_to_csv_row(const ScanFrame& frame);
void write_frames_csv(const std::string& path, std::span<const ScanFrame> frames);
std::vector<ScanFrame> read_frames_csv(const std::string& path);
nlohmann::json frame_to_json(const ScanFrame& frame);
ScanFrame frame_from_json(const nlohmann::json& j);
void write_frames_jsonl(const std::string& path, std::span<const ScanFrame> frames);

void to_json(nlohmann::json& j, const Range& r);
void from_json(const nlohmann::json& j, Range& r);
void to_json(nlohmann::json& j, const CircuitConfig& c);
void from_json(const nlohmann::json& j, CircuitConfig& c);
void to_json(nlohmann::json& j, const SimConfig& c);
void from_json(const nlohmann::json& j, SimConfig& c);
void to_json(nlohmann::json& j, const SensorIdentity& id);

}  // namespace curvecal
