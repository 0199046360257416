#pragma once

// Workflow orchestration: baselines -> features -> curvature model -> R^2
// gate -> force calibration data -> surfaces -> object evaluation. Every
// stage output is stored under its SHA-256 and recorded in a manifest; a
// stage whose key (config + input hashes) and outputs are intact is reused.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "curvecal/curvnet.hpp"
#include "curvecal/featurize.hpp"
#include "curvecal/forcecal.hpp"
#include "curvecal/sensor_sim.hpp"
#include "curvecal/session.hpp"

namespace curvecal {

struct FixtureConfig {
  // Fixtures above the training limit are kept for characterization and
  // skipped by both dataset builders.
  std::vector<double> curvatures = default_curvatures();
  int sensors = 3;
  int baselines_per_fixture = 10;
  int samples_per_baseline = 100;
  bool augment = true;

  static std::vector<double> default_curvatures();
  void validate() const;
};

struct FixtureSet {
  std::vector<double> curvatures;
  std::vector<SensorIdentity> sensors;
  int baselines_per_fixture = 10;
  int samples_per_baseline = 100;

  std::vector<double> training_curvatures() const;
  void validate() const;
};

FixtureSet make_fixture_set(const FixtureConfig& cfg, const SimConfig& sim, std::uint64_t seed);

/// One row per (sensor, curvature <= 80, repetition[, orientation]).
FeatureDataset build_curvature_dataset(const FixtureSet& fixtures, const SimConfig& sim,
                                       bool augment, std::uint64_t seed);

struct GateResult {
  std::string name;
  std::optional<double> value;
  double threshold = 0.9;
  bool passed = false;
  std::string reason;
  std::string hint;
};

/// Passes iff r2 > threshold.
GateResult run_gate(const std::string& name, const std::optional<double>& r2, double threshold);
GateResult run_gate(const RegressionMetrics& metrics, double threshold);

struct ForceDatasetConfig {
  std::vector<double> grid = default_grid();  // N
  int frames_per_level = 100;
  int sensor_index = 0;

  static std::vector<double> default_grid();
  void validate() const;
};

/// Mean block reading over `frames_per_level` frames per (curvature <= 80,
/// force) on one sensor, baseline taken from an unloaded capture first.
std::vector<CalibrationSample> build_force_dataset(const FixtureSet& fixtures, const SimConfig& sim,
                                                   const ForceDatasetConfig& cfg,
                                                   std::uint64_t seed);

struct ObjectSpec {
  std::string name;
  double kappa = 0.0;
  double natural_force = 2.0;  // N, operator's free grasp
};

std::vector<ObjectSpec> default_objects();
std::vector<ObjectSpec> read_objects_json(const std::string& path);

struct Evaluation {
  ForceErrorReport report;
  std::vector<SessionReport> sessions;
};

/// Scripted operator sessions, one per object, on the calibrated sensor.
Evaluation evaluate_objects(const std::vector<ObjectSpec>& objects, const SensorIdentity& sensor,
                            const SimConfig& sim, std::shared_ptr<const CurvNetModel> model,
                            const SessionSurfaces& surfaces, const SessionSpec& spec,
                            const OperatorConfig& op, std::uint64_t seed);

struct GateConfig {
  double curvature_r2 = 0.9;
  double calibration_r2 = 0.9;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  SimConfig sim;
  FixtureConfig fixtures;
  TrainConfig train;
  ForceDatasetConfig force;
  GateConfig gate;
  SessionSpec session;
  OperatorConfig op;
  std::vector<ObjectSpec> objects = default_objects();

  void validate() const;
};

/// "default" (or empty) yields the built-in configuration.
PipelineConfig load_pipeline_config(const std::string& path_or_default);

struct StageRecord {
  std::string name;
  std::string key;  // sha256 of stage config and input hashes
  std::vector<std::string> inputs;
  std::map<std::string, std::string> outputs;  // artifact name -> sha256
  std::string status;  // ok | failed | gate_failed | skipped
  std::string error;
  nlohmann::json summary = nlohmann::json::object();
  bool reused = false;
  std::string started;
  std::string finished;
};

struct PipelineManifest {
  nlohmann::json config;
  std::vector<StageRecord> stages;
  std::map<std::string, GateResult> gates;
  std::string created;
  std::string updated;

  const StageRecord* stage(const std::string& name) const;
  bool completed() const;
  bool gate_failed() const;

  /// `volatile_fields` adds timestamps and reuse flags.
  nlohmann::json to_json(bool volatile_fields = true) const;
  /// SHA-256 over everything except timestamps and reuse flags.
  std::string digest() const;
};

PipelineManifest manifest_from_json(const nlohmann::json& j);

/// Content-addressed files under <root>/artifacts.
class ArtifactStore {
 public:
  explicit ArtifactStore(std::filesystem::path root);

  std::string put(const std::string& bytes, const std::string& ext);
  std::filesystem::path path(const std::string& hash) const;
  /// True when the file exists and still hashes to `hash`.
  bool valid(const std::string& hash) const;
  std::string read(const std::string& hash) const;

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> ext_;
};

std::string sha256_hex(const std::string& bytes);

inline const char* const kStageNames[] = {"curvature_dataset", "train_curvature", "force_dataset",
                                          "fit_calibration", "evaluate"};

/// Runs every stage in order under `out_dir`, reusing intact stages from an
/// existing manifest there. Stops after a failed gate or stage.
PipelineManifest run_full(const PipelineConfig& config, const std::filesystem::path& out_dir);

void to_json(nlohmann::json& j, const FixtureConfig& c);
void from_json(const nlohmann::json& j, FixtureConfig& c);
void to_json(nlohmann::json& j, const ForceDatasetConfig& c);
void from_json(const nlohmann::json& j, ForceDatasetConfig& c);
void to_json(nlohmann::json& j, const ObjectSpec& o);
void from_json(const nlohmann::json& j, ObjectSpec& o);
void to_json(nlohmann::json& j, const GateResult& g);
void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

}  // namespace curvecal
