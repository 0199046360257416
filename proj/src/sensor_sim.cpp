#include "curvecal/sensor_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "curvecal/csv.hpp"
#include "curvecal/errors.hpp"

namespace curvecal {

namespace {

void check_range(const Range& r, const char* name, bool strictly_positive) {
  if (!(r.min <= r.max)) {
    throw ConfigError(std::string("range '") + name + "' has min > max");
  }
  if (strictly_positive && !(r.min > 0.0)) {
    throw ConfigError(std::string("range '") + name + "' must be strictly positive");
  }
}

double draw(Rng& rng, const Range& r) {
  if (r.min == r.max) return r.min;
  return std::uniform_real_distribution<double>(r.min, r.max)(rng);
}

}  // namespace

void CircuitConfig::validate() const {
  if (adc_bits < 8 || adc_bits > 16) throw ConfigError("adc_bits must be in [8, 16]");
  if (!(v_ref > 0.0)) throw ConfigError("v_ref must be > 0");
  if (!(r_gain > 0.0)) throw ConfigError("r_gain must be > 0");
  if (!(adc_full_scale > 0.0)) throw ConfigError("adc_full_scale must be > 0");
  if (!(scan_rate_hz > 0.0)) throw ConfigError("scan_rate_hz must be > 0");
}

void SimConfig::validate() const {
  check_range(r0_ohm, "r0_ohm", true);
  check_range(prestrain_alpha, "prestrain_alpha", false);
  check_range(prestrain_beta, "prestrain_beta", false);
  check_range(sensitivity_k, "sensitivity_k", true);
  if (prestrain_alpha.min < 0.0 || prestrain_beta.min < 0.0) {
    throw ConfigError("prestrain coefficients must be nonnegative");
  }
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (!(noise_sigma_counts >= 0.0)) throw ConfigError("noise_sigma_counts must be >= 0");
  if (!(fluctuation_factor >= 1.0)) throw ConfigError("fluctuation_factor must be >= 1");
  if (!(unreliable_threshold > 0.0)) throw ConfigError("unreliable_threshold must be > 0");
  circuit.validate();
}

CurvatureLabel CurvatureLabel::cylinder(double kappa) {
  if (!(kappa >= 0.0)) throw DomainError("curvature must be >= 0");
  return {kappa, kappa, 0.0};
}

SensorIdentity make_identity(const std::string& sensor_id, std::uint64_t seed,
                             const SimConfig& config) {
  config.validate();
  SensorIdentity id;
  id.sensor_id = sensor_id;
  id.seed = seed;
  Rng rng(seed);
  for (int n = 0; n < kNodeCount; ++n) {
    id.node_baseline_r0[n] = draw(rng, config.r0_ohm);
    id.prestrain_alpha[n] = draw(rng, config.prestrain_alpha);
    id.prestrain_beta[n] = draw(rng, config.prestrain_beta);
    id.sensitivity_k[n] = draw(rng, config.sensitivity_k);
  }
  return id;
}

double no_load_resistance(const SensorIdentity& identity, int node, double kappa) {
  if (node < 0 || node >= kNodeCount) throw UsageError("node index out of range");
  if (!(kappa >= 0.0)) throw DomainError("curvature must be >= 0");
  return identity.node_baseline_r0[node] + identity.prestrain_alpha[node] * kappa +
         identity.prestrain_beta[node] * kappa * kappa;
}

double node_resistance(const SensorIdentity& identity, const SimConfig& config,
                       int node, double force_on_node, double kappa) {
  if (!(force_on_node >= 0.0)) throw DomainError("force on node must be >= 0");
  const double r_base = no_load_resistance(identity, node, kappa);
  const double k_eff = identity.sensitivity_k[node] / (1.0 + config.gamma * kappa);
  return r_base / (1.0 + k_eff * force_on_node);
}

double readout_voltage(const CircuitConfig& circuit, double resistance) {
  if (!(resistance > 0.0)) throw DomainError("resistance must be > 0");
  return (1.0 + circuit.r_gain / resistance) * circuit.v_ref;
}

int quantize(const CircuitConfig& circuit, double volts) {
  const double v = std::clamp(volts, 0.0, circuit.adc_full_scale);
  const double counts = std::round(v / circuit.adc_full_scale * circuit.adc_max());
  return std::clamp(static_cast<int>(counts), 0, circuit.adc_max());
}

NodeArray block_force_profile(double block_force) {
  if (!(block_force >= 0.0)) throw DomainError("block force must be >= 0");
  NodeArray profile{};
  for (int idx : kCentralBlock) profile[idx] = block_force / kCentralBlock.size();
  return profile;
}

ScanFrame scan(const SensorIdentity& identity, const SimConfig& config,
               std::span<const double, kNodeCount> force_profile, double kappa,
               Rng& rng, double t) {
  const CircuitConfig& circuit = config.circuit;
  double sigma_v = config.noise_sigma_counts * circuit.adc_full_scale / circuit.adc_max();
  if (kappa >= config.unreliable_threshold) sigma_v *= config.fluctuation_factor;

  ScanFrame frame;
  frame.t = t;
  frame.curvature_true = kappa;
  double total = 0.0;
  for (int n = 0; n < kNodeCount; ++n) {
    const double f = force_profile[n];
    const double r = node_resistance(identity, config, n, f, kappa);
    double v = readout_voltage(circuit, r);
    if (sigma_v > 0.0) v += std::normal_distribution<double>(0.0, sigma_v)(rng);
    frame.node_counts[n] = quantize(circuit, v);
    total += f;
  }
  frame.applied_force = total;
  return frame;
}

double block_sum(const ScanFrame& frame) {
  double sum = 0.0;
  for (int idx : kCentralBlock) sum += frame.node_counts[idx];
  return sum;
}

double block_reading(const ScanFrame& frame, double baseline_block_sum) {
  return std::max(0.0, block_sum(frame) - baseline_block_sum);
}

std::uint64_t mix_seed(std::uint64_t stage_seed, std::uint64_t index) {
  std::uint64_t z = stage_seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string frame_csv_header() {
  std::string h = "t,f_true,kappa_true";
  for (int r = 0; r < kGridSide; ++r) {
    for (int c = 0; c < kGridSide; ++c) {
      h += ",n" + std::to_string(r) + std::to_string(c);
    }
  }
  return h;
}

std::string frame_to_csv_row(const ScanFrame& frame) {
  std::string row = format_double(frame.t) + "," + format_double(frame.applied_force) + ",";
  if (frame.curvature_true) row += format_double(*frame.curvature_true);
  for (int count : frame.node_counts) row += "," + std::to_string(count);
  return row;
}

void write_frames_csv(const std::string& path, std::span<const ScanFrame> frames) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  out << frame_csv_header() << '\n';
  for (const auto& f : frames) out << frame_to_csv_row(f) << '\n';
}

std::vector<ScanFrame> read_frames_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  const auto& cols = table.header;
  std::vector<std::string> expected;
  {
    std::stringstream ss(frame_csv_header());
    std::string cell;
    while (std::getline(ss, cell, ',')) expected.push_back(cell);
  }
  if (cols != expected) throw FormatError(path + ": expected header " + frame_csv_header());
  std::vector<ScanFrame> frames;
  frames.reserve(table.rows.size());
  for (const auto& row : table.rows) {
    ScanFrame f;
    f.t = parse_double(row[0]);
    f.applied_force = parse_double(row[1]);
    if (!row[2].empty()) f.curvature_true = parse_double(row[2]);
    for (int n = 0; n < kNodeCount; ++n) {
      f.node_counts[n] = static_cast<int>(parse_double(row[3 + n]));
    }
    frames.push_back(f);
  }
  return frames;
}

nlohmann::json frame_to_json(const ScanFrame& frame) {
  nlohmann::json j;
  j["t"] = frame.t;
  j["f_true"] = frame.applied_force;
  j["kappa_true"] = frame.curvature_true ? nlohmann::json(*frame.curvature_true)
                                         : nlohmann::json(nullptr);
  j["nodes"] = frame.node_counts;
  return j;
}

ScanFrame frame_from_json(const nlohmann::json& j) {
  ScanFrame f;
  f.t = j.at("t").get<double>();
  f.applied_force = j.at("f_true").get<double>();
  if (j.contains("kappa_true") && !j["kappa_true"].is_null()) {
    f.curvature_true = j["kappa_true"].get<double>();
  }
  f.node_counts = j.at("nodes").get<NodeCounts>();
  return f;
}

void write_frames_jsonl(const std::string& path, std::span<const ScanFrame> frames) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path);
  for (const auto& f : frames) out << frame_to_json(f).dump() << '\n';
}

void to_json(nlohmann::json& j, const Range& r) { j = {{"min", r.min}, {"max", r.max}}; }

void from_json(const nlohmann::json& j, Range& r) {
  r.min = j.at("min").get<double>();
  r.max = j.at("max").get<double>();
}

void to_json(nlohmann::json& j, const CircuitConfig& c) {
  j = {{"r_gain", c.r_gain},
       {"v_ref", c.v_ref},
       {"adc_bits", c.adc_bits},
       {"adc_full_scale", c.adc_full_scale},
       {"scan_rate_hz", c.scan_rate_hz}};
}

void from_json(const nlohmann::json& j, CircuitConfig& c) {
  CircuitConfig d;
  c.r_gain = j.value("r_gain", d.r_gain);
  c.v_ref = j.value("v_ref", d.v_ref);
  c.adc_bits = j.value("adc_bits", d.adc_bits);
  c.adc_full_scale = j.value("adc_full_scale", d.adc_full_scale);
  c.scan_rate_hz = j.value("scan_rate_hz", d.scan_rate_hz);
}

void to_json(nlohmann::json& j, const SimConfig& c) {
  j = {{"r0_ohm", c.r0_ohm},
       {"prestrain_alpha", c.prestrain_alpha},
       {"prestrain_beta", c.prestrain_beta},
       {"sensitivity_k", c.sensitivity_k},
       {"gamma", c.gamma},
       {"noise_sigma_counts", c.noise_sigma_counts},
       {"unreliable_threshold", c.unreliable_threshold},
       {"fluctuation_factor", c.fluctuation_factor},
       {"circuit", c.circuit}};
}

void from_json(const nlohmann::json& j, SimConfig& c) {
  SimConfig d;
  c.r0_ohm = j.value("r0_ohm", d.r0_ohm);
  c.prestrain_alpha = j.value("prestrain_alpha", d.prestrain_alpha);
  c.prestrain_beta = j.value("prestrain_beta", d.prestrain_beta);
  c.sensitivity_k = j.value("sensitivity_k", d.sensitivity_k);
  c.gamma = j.value("gamma", d.gamma);
  c.noise_sigma_counts = j.value("noise_sigma_counts", d.noise_sigma_counts);
  c.unreliable_threshold = j.value("unreliable_threshold", d.unreliable_threshold);
  c.fluctuation_factor = j.value("fluctuation_factor", d.fluctuation_factor);
  c.circuit = j.value("circuit", d.circuit);
}

void to_json(nlohmann::json& j, const SensorIdentity& id) {
  j = {{"sensor_id", id.sensor_id},
       {"seed", id.seed},
       {"node_baseline_r0", id.node_baseline_r0},
       {"prestrain_alpha", id.prestrain_alpha},
       {"prestrain_beta", id.prestrain_beta},
       {"sensitivity_k", id.sensitivity_k}};
}

}  // namespace curvecal
