#include "curvecal/session.hpp"

#include <algorithm>
#include <cmath>

#include "curvecal/csv.hpp"
#include "curvecal/errors.hpp"

namespace curvecal {

namespace {

// Absorbs rounding in sample timestamps such as k * 0.02.
constexpr double kTimeSlack = 1e-9;
constexpr double kForceSlack = 1e-12;

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> current_reference(const SessionState& s, const SessionSpec& spec) {
  if (s.phase == Phase::targeting && s.target_index < static_cast<int>(spec.reference_forces.size())) {
    return spec.reference_forces[s.target_index];
  }
  return std::nullopt;
}

StreamMessage state_change_message(const SessionState& s, const SessionSpec& spec, double t) {
  StreamMessage m;
  m.kind = MessageKind::state_change;
  m.t = t;
  m.payload = {{"phase", to_string(s.phase)},
               {"target_index", s.target_index},
               {"reference", optional_json(current_reference(s, spec))},
               {"kappa_pred", s.kappa_pred}};
  if (s.aborted) m.payload["reason"] = s.abort_reason;
  return m;
}

void reset_window(SessionState& s) {
  s.window_start.reset();
  s.window_sum_reading = 0.0;
  s.window_sum_force = 0.0;
  s.window_n = 0;
  s.dwell_progress = 0.0;
}

void accumulate(SessionState& s, const SessionSample& x) {
  if (!s.window_start) s.window_start = x.t;
  s.window_sum_reading += x.block_reading;
  s.window_sum_force += x.force;
  ++s.window_n;
  s.dwell_progress = x.t - *s.window_start;
}

RecordedTarget close_window(const SessionState& s, std::optional<double> reference, double t) {
  RecordedTarget r;
  r.index = static_cast<int>(s.recorded.size());
  r.reference = reference;
  r.mean_block_reading = s.window_sum_reading / static_cast<double>(s.window_n);
  r.mean_force = s.window_sum_force / static_cast<double>(s.window_n);
  r.kappa_pred = s.kappa_pred;
  r.t_start = *s.window_start;
  r.t_end = t;
  r.n_samples = s.window_n;
  return r;
}

void enter_after_targets(SessionState& s, const SessionSpec& spec) {
  s.phase = spec.include_natural_hold ? Phase::natural_hold : Phase::done;
}

}  // namespace

void SessionSpec::validate() const {
  if (!(tolerance > 0.0)) throw ConfigError("session tolerance must be > 0");
  if (!(dwell > 0.0)) throw ConfigError("session dwell must be > 0");
  if (!(sample_rate > 0.0)) throw ConfigError("session sample_rate must be > 0");
  if (!(baseline_duration > 0.0)) throw ConfigError("baseline_duration must be > 0");
  if (!(slew_rate > 0.0)) throw ConfigError("slew_rate must be > 0");
  if (reference_forces.empty()) throw ConfigError("session needs at least one reference force");
  for (std::size_t i = 0; i < reference_forces.size(); ++i) {
    if (!(reference_forces[i] > 0.0)) throw ConfigError("reference forces must be > 0");
    if (i > 0 && !(reference_forces[i] > reference_forces[i - 1])) {
      throw ConfigError("reference forces must be strictly increasing");
    }
  }
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::idle: return "idle";
    case Phase::targeting: return "targeting";
    case Phase::natural_hold: return "natural_hold";
    case Phase::done: return "done";
  }
  return "idle";
}

Phase phase_from_string(const std::string& s) {
  if (s == "idle") return Phase::idle;
  if (s == "targeting") return Phase::targeting;
  if (s == "natural_hold") return Phase::natural_hold;
  if (s == "done") return Phase::done;
  throw FormatError("unknown phase '" + s + "'");
}

std::string to_string(MessageKind k) {
  switch (k) {
    case MessageKind::telemetry: return "telemetry";
    case MessageKind::state_change: return "state_change";
    case MessageKind::record: return "record";
    case MessageKind::command_ack: return "command_ack";
  }
  return "telemetry";
}

MessageKind message_kind_from_string(const std::string& s) {
  if (s == "telemetry") return MessageKind::telemetry;
  if (s == "state_change") return MessageKind::state_change;
  if (s == "record") return MessageKind::record;
  if (s == "command_ack") return MessageKind::command_ack;
  throw FormatError("unknown message kind '" + s + "'");
}

nlohmann::json to_json(const StreamMessage& m) {
  return {{"v", kProtocolVersion}, {"kind", to_string(m.kind)}, {"seq", m.seq}, {"t", m.t},
          {"payload", m.payload}};
}

StreamMessage message_from_json(const nlohmann::json& j) {
  if (j.value("v", 0) != kProtocolVersion) throw FormatError("unsupported protocol version");
  StreamMessage m;
  m.kind = message_kind_from_string(j.at("kind").get<std::string>());
  m.seq = j.value("seq", std::uint64_t{0});
  m.t = j.value("t", 0.0);
  m.payload = j.value("payload", nlohmann::json::object());
  return m;
}

// ---- transitions -----------------------------------------------------------

StepResult step(const SessionState& state, const SessionSpec& spec, const SessionSample& sample) {
  if (state.last_t && sample.t < *state.last_t) {
    throw ProtocolError("sample time " + format_double(sample.t) + " precedes " +
                        format_double(*state.last_t));
  }
  StepResult out{state, {}};
  SessionState& s = out.state;
  s.last_t = sample.t;

  if (s.phase == Phase::targeting) {
    const double ref = spec.reference_forces.at(s.target_index);
    if (std::abs(sample.force - ref) <= spec.tolerance + kForceSlack) {
      accumulate(s, sample);
      if (s.dwell_progress + kTimeSlack >= spec.dwell) {
        RecordedTarget r = close_window(s, ref, sample.t);
        s.recorded.push_back(r);
        StreamMessage rec{MessageKind::record, sample.t, 0, nlohmann::json(r)};
        out.messages.push_back(rec);
        reset_window(s);
        ++s.target_index;
        if (s.target_index >= static_cast<int>(spec.reference_forces.size())) {
          enter_after_targets(s, spec);
        }
        out.messages.push_back(state_change_message(s, spec, sample.t));
      }
    } else {
      reset_window(s);
    }
  } else if (s.phase == Phase::natural_hold) {
    if (sample.force > spec.force_epsilon) {
      accumulate(s, sample);
      if (s.dwell_progress + kTimeSlack >= spec.dwell) {
        RecordedTarget r = close_window(s, std::nullopt, sample.t);
        s.recorded.push_back(r);
        out.messages.push_back({MessageKind::record, sample.t, 0, nlohmann::json(r)});
        reset_window(s);
        s.phase = Phase::done;
        out.messages.push_back(state_change_message(s, spec, sample.t));
      }
    } else {
      reset_window(s);
    }
  }
  return out;
}

StepResult start(const SessionState& state, const SessionSpec& spec, double t, double kappa_pred) {
  if (state.phase != Phase::idle) throw ProtocolError("session already started");
  StepResult out{state, {}};
  out.state.phase = Phase::targeting;
  out.state.target_index = 0;
  out.state.kappa_pred = kappa_pred;
  reset_window(out.state);
  out.messages.push_back(state_change_message(out.state, spec, t));
  return out;
}

StepResult abort(const SessionState& state, double t, const std::string& reason) {
  StepResult out{state, {}};
  if (state.phase == Phase::done) return out;
  out.state.phase = Phase::done;
  out.state.aborted = true;
  out.state.abort_reason = reason;
  reset_window(out.state);
  out.messages.push_back(state_change_message(out.state, SessionSpec{}, t));
  return out;
}

StepResult advance_to_natural_hold(const SessionState& state, const SessionSpec& spec, double t) {
  if (state.phase != Phase::targeting) throw ProtocolError("advance_to_natural_hold requires an active target");
  StepResult out{state, {}};
  reset_window(out.state);
  out.state.target_index = static_cast<int>(spec.reference_forces.size());
  enter_after_targets(out.state, spec);
  out.messages.push_back(state_change_message(out.state, spec, t));
  return out;
}

// ---- rig and runner --------------------------------------------------------

SimulatedRig::SimulatedRig(SensorIdentity identity, SimConfig sim, double kappa,
                           std::uint64_t noise_seed)
    : identity_(std::move(identity)), sim_(std::move(sim)), kappa_(kappa), rng_(noise_seed) {
  sim_.validate();
  if (!(kappa >= 0.0)) throw DomainError("rig curvature must be >= 0");
}

ScanFrame SimulatedRig::scan(double t, double block_force) {
  const NodeArray profile = block_force_profile(std::max(0.0, block_force));
  ScanFrame f = curvecal::scan(identity_, sim_, profile, kappa_, rng_, t);
  f.applied_force = block_force;
  return f;
}

SessionRunner::SessionRunner(SessionSpec spec, std::shared_ptr<const CurvNetModel> model,
                             SessionSurfaces surfaces, SimulatedRig rig, std::string object_name)
    : spec_(std::move(spec)),
      model_(std::move(model)),
      surfaces_(std::move(surfaces)),
      rig_(std::move(rig)),
      object_(std::move(object_name)) {
  spec_.validate();
  if (!model_) throw UsageError("session needs a curvature model");
}

std::vector<StreamMessage> SessionRunner::stamp(std::vector<StreamMessage> msgs) {
  for (auto& m : msgs) m.seq = seq_++;
  return msgs;
}

std::vector<StreamMessage> SessionRunner::finish_baseline(double t) {
  baseline_done_ = true;
  try {
    const BaselineMeasurement baseline = average_baseline(baseline_frames_, spec_.force_epsilon);
    double sum = 0.0;
    for (const auto& f : baseline_frames_) sum += block_sum(f);
    baseline_block_sum_ = sum / static_cast<double>(baseline_frames_.size());
    double kappa = kappa_override_ ? *kappa_override_
                                   : predict(*model_, extract_features(baseline, model_->feature_norm));
    kappa = std::max(0.0, kappa);
    auto result = start(state_, spec_, t, kappa);
    state_ = std::move(result.state);
    return std::move(result.messages);
  } catch (const ContaminationError& e) {
    auto result = curvecal::abort(state_, t, std::string("baseline contaminated: ") + e.what());
    state_ = std::move(result.state);
    return std::move(result.messages);
  }
}

std::vector<StreamMessage> SessionRunner::push(double t, double applied_force) {
  // Telemetry timestamps must strictly increase, so a repeated t is rejected too.
  if (state_.last_t && t <= *state_.last_t) {
    throw ProtocolError("sample time " + format_double(t) + " does not follow " +
                        format_double(*state_.last_t));
  }
  if (!std::isfinite(t) || !std::isfinite(applied_force)) throw DomainError("non-finite sample");
  std::vector<StreamMessage> out;
  if (state_.phase == Phase::done) return out;
  if (!t0_) t0_ = t;

  if (!baseline_done_ && t + kTimeSlack < *t0_ + spec_.baseline_duration) {
    baseline_frames_.push_back(rig_.scan(t, applied_force));
    state_.last_t = t;
    StreamMessage tel{MessageKind::telemetry, t, 0,
                      {{"t", t},
                       {"force", applied_force},
                       {"block_reading", 0.0},
                       {"predicted_force_flat", 0.0},
                       {"predicted_force_aware", 0.0},
                       {"kappa_pred", nullptr},
                       {"phase", to_string(state_.phase)},
                       {"target_index", state_.target_index},
                       {"reference", nullptr},
                       {"dwell_progress", 0.0},
                       {"baseline_capture", true}}};
    log_.push_back({t, applied_force, 0.0, 0.0, 0.0, state_.phase, state_.target_index});
    out.push_back(tel);
    return stamp(std::move(out));
  }
  if (!baseline_done_) {
    out = finish_baseline(t);
    if (state_.phase == Phase::done) {
      state_.last_t = t;
      return stamp(std::move(out));
    }
  }

  const ScanFrame frame = rig_.scan(t, applied_force);
  const double s = block_reading(frame, baseline_block_sum_);
  const double pf = predict_force(surfaces_.flat, s, state_.kappa_pred).force;
  const double pa = predict_force(surfaces_.aware, s, state_.kappa_pred).force;
  const Phase phase_before = state_.phase;
  const int target_before = state_.target_index;
  const auto reference = current_reference(state_, spec_);

  StepResult result = step(state_, spec_, {t, applied_force, s});
  log_.push_back({t, applied_force, s, pf, pa, phase_before, target_before});

  StreamMessage tel{MessageKind::telemetry, t, 0,
                    {{"t", t},
                     {"force", applied_force},
                     {"block_reading", s},
                     {"predicted_force_flat", pf},
                     {"predicted_force_aware", pa},
                     {"kappa_pred", state_.kappa_pred},
                     {"phase", to_string(phase_before)},
                     {"target_index", target_before},
                     {"reference", optional_json(reference)},
                     {"dwell_progress", result.state.dwell_progress},
                     {"baseline_capture", false}}};
  out.push_back(tel);
  state_ = std::move(result.state);
  for (auto& m : result.messages) out.push_back(std::move(m));
  return stamp(std::move(out));
}

std::vector<StreamMessage> SessionRunner::abort(const std::string& reason) {
  auto result = curvecal::abort(state_, last_time(), reason);
  state_ = std::move(result.state);
  return stamp(std::move(result.messages));
}

std::vector<StreamMessage> SessionRunner::advance_to_natural_hold() {
  auto result = curvecal::advance_to_natural_hold(state_, spec_, last_time());
  state_ = std::move(result.state);
  return stamp(std::move(result.messages));
}

SessionReport SessionRunner::report() const {
  SessionReport rep;
  rep.object = object_;
  rep.spec = spec_;
  rep.kappa_pred = state_.kappa_pred;
  rep.kappa_true = rig_.kappa();
  rep.records = state_.recorded;
  rep.aborted = state_.aborted;
  rep.abort_reason = state_.abort_reason;
  rep.completed = state_.phase == Phase::done && !state_.aborted;

  std::vector<EvalGroup> groups;
  for (const auto& r : state_.recorded) {
    EvalGroup g;
    g.object = object_;
    g.c_true = rig_.kappa();
    g.c_pred = state_.kappa_pred;
    g.reference_force = r.reference;
    for (const auto& x : log_) {
      if (x.t + kTimeSlack < r.t_start || x.t > r.t_end + kTimeSlack) continue;
      const bool match = r.reference ? (x.phase == Phase::targeting && x.target_index == r.index)
                                     : x.phase == Phase::natural_hold;
      if (match) g.samples.push_back({x.block_reading, state_.kappa_pred, x.force});
    }
    groups.push_back(std::move(g));
  }
  if (!groups.empty()) rep.errors = compare_variants(surfaces_.flat, surfaces_.aware, groups);
  return rep;
}

nlohmann::json SessionReport::to_json() const {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records) recs.push_back(r);
  return {{"format", "curvecal.session_report"},
          {"version", 1},
          {"object", object},
          {"spec", spec},
          {"kappa_pred", kappa_pred},
          {"kappa_true", optional_json(kappa_true)},
          {"records", recs},
          {"completed", completed},
          {"aborted", aborted},
          {"abort_reason", abort_reason},
          {"errors", errors}};
}

SessionReport run_session(SessionRunner& runner, const std::vector<std::pair<double, double>>& trace,
                          std::vector<StreamMessage>* messages) {
  for (const auto& [t, f] : trace) {
    auto msgs = runner.push(t, f);
    if (messages) messages->insert(messages->end(), msgs.begin(), msgs.end());
    if (runner.finished()) break;
  }
  return runner.report();
}

std::vector<std::pair<double, double>> read_trace_csv(const std::string& path) {
  const CsvTable table = read_csv(path);
  const int t = table.column("t");
  const int f = table.column("force");
  if (t < 0 || f < 0) throw FormatError(path + ": expected columns t,force");
  std::vector<std::pair<double, double>> trace;
  for (const auto& row : table.rows) {
    const double ti = parse_double(row[t]);
    if (!trace.empty() && !(ti > trace.back().first)) {
      throw FormatError(path + ": t must strictly increase (row " + std::to_string(trace.size() + 2) + ")");
    }
    trace.emplace_back(ti, parse_double(row[f]));
  }
  return trace;
}

// ---- simulated operator ----------------------------------------------------

SimulatedOperator::SimulatedOperator(OperatorConfig cfg, std::uint64_t seed)
    : cfg_(cfg), rng_(seed) {}

double SimulatedOperator::next(double requested, double dt) {
  force_ += (requested - force_) * std::min(1.0, dt / cfg_.time_constant);
  const double a = std::exp(-dt / cfg_.tremor_correlation);
  tremor_ = a * tremor_ + std::sqrt(1.0 - a * a) * cfg_.tremor_sigma *
                              std::normal_distribution<double>(0.0, 1.0)(rng_);
  return std::max(0.0, force_ + (requested > 0.0 ? tremor_ : 0.0));
}

SessionReport run_scripted_session(SessionRunner& runner, double natural_force,
                                   const OperatorConfig& op, std::uint64_t seed,
                                   std::vector<StreamMessage>* messages) {
  const SessionSpec& spec = runner.spec();
  SimulatedOperator human(op, seed);
  const double dt = 1.0 / spec.sample_rate;
  std::optional<double> hold_entered;
  for (long long i = 0;; ++i) {
    const double t = static_cast<double>(i) * dt;
    if (t > op.timeout) {
      auto msgs = runner.abort("operator timeout");
      if (messages) messages->insert(messages->end(), msgs.begin(), msgs.end());
      break;
    }
    double requested = 0.0;
    const SessionState& s = runner.state();
    if (!runner.capturing_baseline()) {
      if (s.phase == Phase::targeting) requested = spec.reference_forces[s.target_index];
      if (s.phase == Phase::natural_hold) {
        // Let go after the last target, then grasp naturally.
        if (!hold_entered) hold_entered = t;
        requested = t - *hold_entered < op.release_time ? 0.0 : natural_force;
      }
    }
    const double f = runner.capturing_baseline() ? 0.0 : human.next(requested, dt);
    auto msgs = runner.push(t, f);
    if (messages) messages->insert(messages->end(), msgs.begin(), msgs.end());
    if (runner.finished()) break;
  }
  return runner.report();
}

double slew_limit(double current, double target, double slew_rate, double dt) {
  const double max_step = slew_rate * dt;
  return current + std::clamp(target - current, -max_step, max_step);
}

// ---- json ------------------------------------------------------------------

void to_json(nlohmann::json& j, const SessionSpec& s) {
  j = {{"reference_forces", s.reference_forces},
       {"tolerance", s.tolerance},
       {"dwell", s.dwell},
       {"include_natural_hold", s.include_natural_hold},
       {"sample_rate", s.sample_rate},
       {"baseline_duration", s.baseline_duration},
       {"force_epsilon", s.force_epsilon},
       {"slew_rate", s.slew_rate}};
}

void from_json(const nlohmann::json& j, SessionSpec& s) {
  SessionSpec d;
  s.reference_forces = j.value("reference_forces", d.reference_forces);
  s.tolerance = j.value("tolerance", d.tolerance);
  s.dwell = j.value("dwell", d.dwell);
  s.include_natural_hold = j.value("include_natural_hold", d.include_natural_hold);
  s.sample_rate = j.value("sample_rate", d.sample_rate);
  s.baseline_duration = j.value("baseline_duration", d.baseline_duration);
  s.force_epsilon = j.value("force_epsilon", d.force_epsilon);
  s.slew_rate = j.value("slew_rate", d.slew_rate);
}

void to_json(nlohmann::json& j, const RecordedTarget& r) {
  j = {{"index", r.index},
       {"reference", optional_json(r.reference)},
       {"mean_block_reading", r.mean_block_reading},
       {"mean_force", r.mean_force},
       {"kappa_pred", r.kappa_pred},
       {"t_start", r.t_start},
       {"t_end", r.t_end},
       {"n_samples", r.n_samples}};
}

void to_json(nlohmann::json& j, const OperatorConfig& c) {
  j = {{"time_constant", c.time_constant},
       {"tremor_sigma", c.tremor_sigma},
       {"tremor_correlation", c.tremor_correlation},
       {"timeout", c.timeout},
       {"release_time", c.release_time}};
}

void from_json(const nlohmann::json& j, OperatorConfig& c) {
  OperatorConfig d;
  c.time_constant = j.value("time_constant", d.time_constant);
  c.tremor_sigma = j.value("tremor_sigma", d.tremor_sigma);
  c.tremor_correlation = j.value("tremor_correlation", d.tremor_correlation);
  c.timeout = j.value("timeout", d.timeout);
  c.release_time = j.value("release_time", d.release_time);
}

}  // namespace curvecal
