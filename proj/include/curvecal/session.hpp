#pragma once

// Calibration/validation session protocol. An operator presses the sensor
// toward a ladder of reference forces; a target is recorded once the
// ground-truth force has stayed within tolerance for the dwell time, then
// the session advances. Curvature is predicted once from a no-load
// baseline captured at session start.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "curvecal/curvnet.hpp"
#include "curvecal/featurize.hpp"
#include "curvecal/forcecal.hpp"
#include "curvecal/sensor_sim.hpp"

namespace curvecal {

inline constexpr int kProtocolVersion = 1;

struct SessionSpec {
  std::vector<double> reference_forces{2.0, 4.0, 6.0, 8.0};
  double tolerance = 0.2;  // N
  double dwell = 5.0;      // s
  bool include_natural_hold = true;
  double sample_rate = 50.0;       // Hz
  double baseline_duration = 2.0;  // s of no-load capture before targeting
  double force_epsilon = kDefaultForceEpsilon;
  double slew_rate = 20.0;  // N/s, live simulator commands only

  void validate() const;
};

enum class Phase { idle, targeting, natural_hold, done };

std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

struct RecordedTarget {
  int index = 0;
  std::optional<double> reference;  // empty for the natural hold
  double mean_block_reading = 0.0;
  double mean_force = 0.0;
  double kappa_pred = 0.0;
  double t_start = 0.0;
  double t_end = 0.0;
  std::size_t n_samples = 0;

  bool operator==(const RecordedTarget&) const = default;
};

struct SessionState {
  Phase phase = Phase::idle;
  int target_index = 0;
  double dwell_progress = 0.0;
  std::optional<double> window_start;
  double window_sum_reading = 0.0;
  double window_sum_force = 0.0;
  std::size_t window_n = 0;
  std::optional<double> last_t;
  double kappa_pred = 0.0;
  std::vector<RecordedTarget> recorded;
  bool aborted = false;
  std::string abort_reason;
};

struct SessionSample {
  double t = 0.0;
  double force = 0.0;          // ground-truth force, N
  double block_reading = 0.0;  // counts
};

enum class MessageKind { telemetry, state_change, record, command_ack };

std::string to_string(MessageKind k);
MessageKind message_kind_from_string(const std::string& s);

struct StreamMessage {
  MessageKind kind = MessageKind::telemetry;
  double t = 0.0;
  std::uint64_t seq = 0;
  nlohmann::json payload = nlohmann::json::object();
};

nlohmann::json to_json(const StreamMessage& m);
StreamMessage message_from_json(const nlohmann::json& j);

struct StepResult {
  SessionState state;
  std::vector<StreamMessage> messages;
};

/// Pure transition for one force sample.
StepResult step(const SessionState& state, const SessionSpec& spec, const SessionSample& sample);

/// Idle -> Targeting(0) with a fixed curvature estimate.
StepResult start(const SessionState& state, const SessionSpec& spec, double t, double kappa_pred);

StepResult abort(const SessionState& state, double t, const std::string& reason);

/// Skips remaining targets (natural hold if configured, else done).
StepResult advance_to_natural_hold(const SessionState& state, const SessionSpec& spec, double t);

// ---- session runner --------------------------------------------------------

struct SessionSurfaces {
  CalibrationSurface flat;
  CalibrationSurface aware;
};

/// Simulated sensor on an object; force is applied to the central block.
class SimulatedRig {
 public:
  SimulatedRig(SensorIdentity identity, SimConfig sim, double kappa, std::uint64_t noise_seed);

  ScanFrame scan(double t, double block_force);
  double kappa() const { return kappa_; }

 private:
  SensorIdentity identity_;
  SimConfig sim_;
  double kappa_;
  Rng rng_;
};

struct LoggedSample {
  double t = 0.0;
  double force = 0.0;
  double block_reading = 0.0;
  double predicted_flat = 0.0;
  double predicted_aware = 0.0;
  Phase phase = Phase::idle;
  int target_index = 0;
};

struct SessionReport {
  std::string object;
  SessionSpec spec;
  double kappa_pred = 0.0;
  std::optional<double> kappa_true;
  std::vector<RecordedTarget> records;
  bool completed = false;
  bool aborted = false;
  std::string abort_reason;
  ForceErrorReport errors;

  nlohmann::json to_json() const;
  /// Table-shaped CSV (see ForceErrorReport::to_csv).
  std::string to_csv() const { return errors.to_csv(); }
};

class SessionRunner {
 public:
  SessionRunner(SessionSpec spec, std::shared_ptr<const CurvNetModel> model,
                SessionSurfaces surfaces, SimulatedRig rig, std::string object_name);

  /// Uses this curvature instead of the model prediction.
  void override_curvature(double kappa) { kappa_override_ = kappa; }

  std::vector<StreamMessage> push(double t, double applied_force);
  std::vector<StreamMessage> abort(const std::string& reason);
  std::vector<StreamMessage> advance_to_natural_hold();

  const SessionState& state() const { return state_; }
  const SessionSpec& spec() const { return spec_; }
  bool finished() const { return state_.phase == Phase::done; }
  bool capturing_baseline() const { return !baseline_done_; }
  double last_time() const { return state_.last_t.value_or(0.0); }
  const std::vector<LoggedSample>& log() const { return log_; }

  SessionReport report() const;

 private:
  std::vector<StreamMessage> stamp(std::vector<StreamMessage> msgs);
  std::vector<StreamMessage> finish_baseline(double t);

  SessionSpec spec_;
  std::shared_ptr<const CurvNetModel> model_;
  SessionSurfaces surfaces_;
  SimulatedRig rig_;
  std::string object_;
  std::optional<double> kappa_override_;

  SessionState state_;
  bool baseline_done_ = false;
  std::optional<double> t0_;
  std::vector<ScanFrame> baseline_frames_;
  double baseline_block_sum_ = 0.0;
  std::vector<LoggedSample> log_;
  std::uint64_t seq_ = 0;
};

/// Replays a recorded (t, force) trace; the first `baseline_duration`
/// seconds must be unloaded.
SessionReport run_session(SessionRunner& runner, const std::vector<std::pair<double, double>>& trace,
                          std::vector<StreamMessage>* messages = nullptr);

std::vector<std::pair<double, double>> read_trace_csv(const std::string& path);

/// Human-like force source: first-order approach to the requested force
/// plus correlated tremor.
struct OperatorConfig {
  double time_constant = 0.35;  // s
  double tremor_sigma = 0.03;   // N
  double tremor_correlation = 0.2;  // s
  double timeout = 180.0;       // s of session time
  double release_time = 1.0;    // s unloaded before the natural grasp
};

class SimulatedOperator {
 public:
  SimulatedOperator(OperatorConfig cfg, std::uint64_t seed);
  double next(double requested, double dt);

 private:
  OperatorConfig cfg_;
  Rng rng_;
  double force_ = 0.0;
  double tremor_ = 0.0;
};

/// Drives a full session with a simulated operator holding each reference
/// and a natural grasp force for the hold row.
SessionReport run_scripted_session(SessionRunner& runner, double natural_force,
                                   const OperatorConfig& op, std::uint64_t seed,
                                   std::vector<StreamMessage>* messages = nullptr);

/// Moves `current` toward `target` by at most slew_rate * dt.
double slew_limit(double current, double target, double slew_rate, double dt);

void to_json(nlohmann::json& j, const SessionSpec& s);
void from_json(const nlohmann::json& j, SessionSpec& s);
void to_json(nlohmann::json& j, const RecordedTarget& r);
void to_json(nlohmann::json& j, const OperatorConfig& c);
void from_json(const nlohmann::json& j, OperatorConfig& c);

}  // namespace curvecal
