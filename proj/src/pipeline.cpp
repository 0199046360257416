#include "curvecal/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "curvecal/csv.hpp"
#include "curvecal/errors.hpp"

namespace curvecal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stage tags for seed derivation.
constexpr std::uint64_t kSeedIdentity = 0x1d;
constexpr std::uint64_t kSeedBaselines = 0x2b;
constexpr std::uint64_t kSeedForce = 0x3f;
constexpr std::uint64_t kSeedEval = 0x4c;

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << bytes;
}

std::vector<ScanFrame> capture(SimulatedRig& rig, double block_force, int n, double rate) {
  std::vector<ScanFrame> frames;
  frames.reserve(n);
  for (int i = 0; i < n; ++i) frames.push_back(rig.scan(i / rate, block_force));
  return frames;
}

double mean_block_sum(std::span<const ScanFrame> frames) {
  double sum = 0.0;
  for (const auto& f : frames) sum += block_sum(f);
  return sum / static_cast<double>(frames.size());
}

const char* const kRemediation =
    "retune training hyperparameters, revisit feature normalization, or add sensors/fixtures";

}  // namespace

// ---- fixtures --------------------------------------------------------------

std::vector<double> FixtureConfig::default_curvatures() {
  std::vector<double> c;
  for (int i = 0; i < 10; ++i) c.push_back(80.0 * i / 9.0);
  c.push_back(100.0);
  return c;
}

void FixtureConfig::validate() const {
  if (curvatures.empty()) throw ConfigError("fixtures.curvatures is empty");
  if (!std::is_sorted(curvatures.begin(), curvatures.end())) {
    throw ConfigError("fixtures.curvatures must be sorted ascending");
  }
  if (curvatures.front() < 0.0) throw ConfigError("fixtures.curvatures must be nonnegative");
  if (sensors < 1) throw ConfigError("fixtures.sensors must be >= 1");
  if (baselines_per_fixture < 1) throw ConfigError("fixtures.baselines_per_fixture must be >= 1");
  if (samples_per_baseline < 1) throw ConfigError("fixtures.samples_per_baseline must be >= 1");
}

std::vector<double> FixtureSet::training_curvatures() const {
  std::vector<double> out;
  for (double c : curvatures) {
    if (c <= kMaxTrainingCurvature) out.push_back(c);
  }
  return out;
}

void FixtureSet::validate() const {
  if (curvatures.empty() || sensors.empty()) throw ConfigError("fixture set is empty");
  if (!std::is_sorted(curvatures.begin(), curvatures.end()) || curvatures.front() < 0.0) {
    throw ConfigError("fixture curvatures must be sorted and nonnegative");
  }
  if (baselines_per_fixture < 1 || samples_per_baseline < 1) {
    throw ConfigError("fixture repetition counts must be >= 1");
  }
}

FixtureSet make_fixture_set(const FixtureConfig& cfg, const SimConfig& sim, std::uint64_t seed) {
  cfg.validate();
  FixtureSet set;
  set.curvatures = cfg.curvatures;
  set.baselines_per_fixture = cfg.baselines_per_fixture;
  set.samples_per_baseline = cfg.samples_per_baseline;
  const std::uint64_t base = mix_seed(seed, kSeedIdentity);
  for (int i = 0; i < cfg.sensors; ++i) {
    set.sensors.push_back(make_identity("S" + std::to_string(i + 1), mix_seed(base, i), sim));
  }
  return set;
}

FeatureDataset build_curvature_dataset(const FixtureSet& fixtures, const SimConfig& sim,
                                       bool augment, std::uint64_t seed) {
  fixtures.validate();
  sim.validate();
  FeatureDataset ds;
  ds.norm = NormalizationSpec::adc_range(sim.circuit.adc_bits);
  const std::uint64_t base = mix_seed(seed, kSeedBaselines);
  const std::vector<double> curvatures = fixtures.training_curvatures();
  const NodeArray no_force{};
  long long group = 0;
  std::vector<ScanFrame> frames(fixtures.samples_per_baseline);
  for (std::size_t si = 0; si < fixtures.sensors.size(); ++si) {
    for (double kappa : curvatures) {
      for (int rep = 0; rep < fixtures.baselines_per_fixture; ++rep, ++group) {
        Rng rng(mix_seed(base, static_cast<std::uint64_t>(group)));
        for (int k = 0; k < fixtures.samples_per_baseline; ++k) {
          frames[k] = scan(fixtures.sensors[si], sim, no_force, kappa, rng,
                           k / sim.circuit.scan_rate_hz);
        }
        const BaselineMeasurement baseline = average_baseline(frames);
        const int orientations = augment ? 8 : 1;
        for (int o = 0; o < orientations; ++o) {
          BaselineMeasurement b = baseline;
          b.node_means = dihedral_transform(baseline.node_means, o);
          ds.rows.push_back({kappa, extract_features(b, ds.norm).as_array(), group});
        }
      }
    }
  }
  return ds;
}

// ---- gate ------------------------------------------------------------------

GateResult run_gate(const std::string& name, const std::optional<double>& r2, double threshold) {
  GateResult g;
  g.name = name;
  g.value = r2;
  g.threshold = threshold;
  if (!r2 || !std::isfinite(*r2)) {
    g.reason = "R^2 undefined (degenerate held-out labels)";
    g.hint = kRemediation;
    return g;
  }
  g.passed = *r2 > threshold;
  if (!g.passed) {
    g.reason = "R^2 " + format_double(*r2) + " <= " + format_double(threshold);
    g.hint = kRemediation;
  }
  return g;
}

GateResult run_gate(const RegressionMetrics& metrics, double threshold) {
  return run_gate("curvature_r2", metrics.r2, threshold);
}

// ---- force dataset ---------------------------------------------------------

std::vector<double> ForceDatasetConfig::default_grid() {
  std::vector<double> g;
  for (int f = 0; f <= 20; ++f) g.push_back(f);
  return g;
}

void ForceDatasetConfig::validate() const {
  if (grid.empty()) throw ConfigError("force.grid is empty");
  for (double f : grid) {
    if (!(f >= 0.0)) throw ConfigError("force.grid values must be >= 0");
  }
  if (frames_per_level < 1) throw ConfigError("force.frames_per_level must be >= 1");
  if (sensor_index < 0) throw ConfigError("force.sensor_index must be >= 0");
}

std::vector<CalibrationSample> build_force_dataset(const FixtureSet& fixtures, const SimConfig& sim,
                                                   const ForceDatasetConfig& cfg,
                                                   std::uint64_t seed) {
  fixtures.validate();
  cfg.validate();
  if (cfg.sensor_index >= static_cast<int>(fixtures.sensors.size())) {
    throw ConfigError("force.sensor_index out of range");
  }
  const SensorIdentity& sensor = fixtures.sensors[cfg.sensor_index];
  const std::uint64_t base = mix_seed(seed, kSeedForce);
  const double rate = sim.circuit.scan_rate_hz;
  std::vector<CalibrationSample> out;
  std::uint64_t stream = 0;
  for (double kappa : fixtures.training_curvatures()) {
    SimulatedRig rig(sensor, sim, kappa, mix_seed(base, stream++));
    const double baseline = mean_block_sum(capture(rig, 0.0, cfg.frames_per_level, rate));
    for (double f : cfg.grid) {
      SimulatedRig level(sensor, sim, kappa, mix_seed(base, stream++));
      const double mean = mean_block_sum(capture(level, f, cfg.frames_per_level, rate));
      out.push_back({std::max(0.0, mean - baseline), kappa, f});
    }
  }
  return out;
}

// ---- objects ---------------------------------------------------------------

std::vector<ObjectSpec> default_objects() {
  return {{"gum box", 0.0, 1.92},
          {"tuna can", 12.03, 2.31},
          {"energy drink", 17.54, 2.23},
          {"rubbing alcohol", 25.0, 1.68},
          {"ping pong ball", 50.0, 1.26}};
}

std::vector<ObjectSpec> read_objects_json(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  const json& list = j.is_object() ? j.at("objects") : j;
  std::vector<ObjectSpec> objects;
  try {
    objects = list.get<std::vector<ObjectSpec>>();
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (objects.empty()) throw ConfigError(path + ": no objects");
  return objects;
}

Evaluation evaluate_objects(const std::vector<ObjectSpec>& objects, const SensorIdentity& sensor,
                            const SimConfig& sim, std::shared_ptr<const CurvNetModel> model,
                            const SessionSurfaces& surfaces, const SessionSpec& spec,
                            const OperatorConfig& op, std::uint64_t seed) {
  Evaluation ev;
  const std::uint64_t base = mix_seed(seed, kSeedEval);
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const ObjectSpec& obj = objects[i];
    if (!(obj.kappa >= 0.0)) throw ConfigError("object '" + obj.name + "' has negative curvature");
    SimulatedRig rig(sensor, sim, obj.kappa, mix_seed(base, 2 * i));
    SessionRunner runner(spec, model, surfaces, std::move(rig), obj.name);
    SessionReport rep = run_scripted_session(runner, obj.natural_force, op, mix_seed(base, 2 * i + 1));
    for (const auto& row : rep.errors.rows) ev.report.rows.push_back(row);
    for (const auto& w : rep.errors.warnings) ev.report.warnings.push_back(w);
    if (!rep.completed) {
      ev.report.warnings.push_back(obj.name + ": session incomplete (" + rep.abort_reason + ")");
    }
    ev.sessions.push_back(std::move(rep));
  }
  return ev;
}

// ---- config ----------------------------------------------------------------

void PipelineConfig::validate() const {
  sim.validate();
  fixtures.validate();
  train.validate();
  force.validate();
  session.validate();
  if (force.sensor_index >= fixtures.sensors) throw ConfigError("force.sensor_index out of range");
  if (std::find(fixtures.curvatures.begin(), fixtures.curvatures.end(), 0.0) ==
      fixtures.curvatures.end()) {
    throw ConfigError("fixtures.curvatures needs a flat (0) fixture for the flat calibration");
  }
  if (objects.empty()) throw ConfigError("no evaluation objects configured");
}

PipelineConfig load_pipeline_config(const std::string& path_or_default) {
  PipelineConfig cfg;
  if (!path_or_default.empty() && path_or_default != "default") {
    try {
      cfg = json::parse(read_file(path_or_default)).get<PipelineConfig>();
    } catch (const json::exception& e) {
      throw ConfigError(path_or_default + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
  }
  cfg.validate();
  return cfg;
}

// ---- manifest --------------------------------------------------------------

const StageRecord* PipelineManifest::stage(const std::string& name) const {
  for (const auto& s : stages) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

bool PipelineManifest::completed() const {
  const StageRecord* last = stage("evaluate");
  return last && last->status == "ok";
}

bool PipelineManifest::gate_failed() const {
  return std::any_of(gates.begin(), gates.end(), [](const auto& g) { return !g.second.passed; });
}

json PipelineManifest::to_json(bool volatile_fields) const {
  json st = json::array();
  for (const auto& s : stages) {
    json r = {{"name", s.name},     {"key", s.key},       {"inputs", s.inputs},
              {"outputs", s.outputs}, {"status", s.status}, {"error", s.error},
              {"summary", s.summary}};
    if (volatile_fields) {
      r["reused"] = s.reused;
      r["started"] = s.started;
      r["finished"] = s.finished;
    }
    st.push_back(r);
  }
  json gj = json::object();
  for (const auto& [name, g] : gates) gj[name] = g;
  json j = {{"format", "curvecal.manifest"}, {"version", 1}, {"config", config},
            {"stages", st}, {"gates", gj}};
  if (volatile_fields) {
    j["created"] = created;
    j["updated"] = updated;
    j["digest"] = digest();
  }
  return j;
}

std::string PipelineManifest::digest() const { return sha256_hex(to_json(false).dump()); }

PipelineManifest manifest_from_json(const json& j) {
  if (j.value("format", "") != "curvecal.manifest") throw FormatError("not a curvecal manifest");
  PipelineManifest m;
  m.config = j.at("config");
  m.created = j.value("created", "");
  m.updated = j.value("updated", "");
  for (const auto& r : j.at("stages")) {
    StageRecord s;
    s.name = r.at("name");
    s.key = r.at("key");
    s.inputs = r.at("inputs").get<std::vector<std::string>>();
    s.outputs = r.at("outputs").get<std::map<std::string, std::string>>();
    s.status = r.at("status");
    s.error = r.value("error", "");
    s.summary = r.value("summary", json::object());
    s.reused = r.value("reused", false);
    s.started = r.value("started", "");
    s.finished = r.value("finished", "");
    m.stages.push_back(std::move(s));
  }
  for (const auto& [name, g] : j.at("gates").items()) {
    GateResult gr;
    gr.name = g.at("name");
    if (!g.at("value").is_null()) gr.value = g.at("value").get<double>();
    gr.threshold = g.at("threshold");
    gr.passed = g.at("passed");
    gr.reason = g.value("reason", "");
    gr.hint = g.value("hint", "");
    m.gates[name] = gr;
  }
  return m;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

ArtifactStore::ArtifactStore(fs::path root) : dir_(std::move(root) / "artifacts") {
  fs::create_directories(dir_);
  for (const auto& e : fs::directory_iterator(dir_)) {
    ext_[e.path().stem().string()] = e.path().extension().string();
  }
}

std::string ArtifactStore::put(const std::string& bytes, const std::string& ext) {
  const std::string h = sha256_hex(bytes);
  ext_[h] = "." + ext;
  if (!valid(h)) write_file(path(h), bytes);
  return h;
}

fs::path ArtifactStore::path(const std::string& hash) const {
  auto it = ext_.find(hash);
  return dir_ / (hash + (it == ext_.end() ? std::string() : it->second));
}

bool ArtifactStore::valid(const std::string& hash) const {
  const fs::path p = path(hash);
  if (!fs::is_regular_file(p)) return false;
  return sha256_hex(read_file(p)) == hash;
}

std::string ArtifactStore::read(const std::string& hash) const {
  if (!valid(hash)) throw Error("artifact " + hash + " is missing or corrupted");
  return read_file(path(hash));
}

// ---- run_full --------------------------------------------------------------

namespace {

class Runner {
 public:
  Runner(const PipelineConfig& cfg, const fs::path& out) : cfg_(cfg), out_(out), store_(out) {
    const fs::path mp = out_ / "manifest.json";
    if (fs::exists(mp)) {
      try {
        previous_ = manifest_from_json(json::parse(read_file(mp)));
      } catch (const std::exception&) {
        previous_.reset();
      }
    }
    manifest_.config = cfg_;
    // Stage records are handed out by reference; keep them from moving.
    manifest_.stages.reserve(std::size(kStageNames));
    manifest_.created = previous_ ? previous_->created : utc_now();
  }

  template <typename Fn>
  StageRecord& stage(const std::string& name, const json& stage_cfg,
                     const std::vector<std::string>& inputs, Fn&& fn) {
    StageRecord rec;
    rec.name = name;
    rec.inputs = inputs;
    rec.key = sha256_hex(json{{"stage", name}, {"config", stage_cfg}, {"inputs", inputs}}.dump());
    if (const StageRecord* prev = previous_ ? previous_->stage(name) : nullptr;
        prev && prev->key == rec.key && prev->status == "ok" &&
        std::all_of(prev->outputs.begin(), prev->outputs.end(),
                    [&](const auto& o) { return store_.valid(o.second); })) {
      rec = *prev;
      rec.reused = true;
    } else {
      rec.started = utc_now();
      try {
        fn(rec);
        rec.status = "ok";
      } catch (const std::exception& e) {
        rec.status = "failed";
        rec.error = e.what();
        rec.outputs.clear();
      }
      rec.finished = utc_now();
    }
    manifest_.stages.push_back(std::move(rec));
    save();
    return manifest_.stages.back();
  }

  void skip(const std::string& name, const std::string& why) {
    StageRecord rec;
    rec.name = name;
    rec.status = "skipped";
    rec.error = why;
    manifest_.stages.push_back(std::move(rec));
  }

  void save() {
    manifest_.updated = utc_now();
    write_file(out_ / "manifest.json", manifest_.to_json().dump(2) + "\n");
  }

  const PipelineConfig& cfg_;
  fs::path out_;
  ArtifactStore store_;
  std::optional<PipelineManifest> previous_;
  PipelineManifest manifest_;
};

void skip_rest(Runner& r, std::size_t from, const std::string& why) {
  for (std::size_t i = from; i < std::size(kStageNames); ++i) r.skip(kStageNames[i], why);
  r.save();
}

}  // namespace

PipelineManifest run_full(const PipelineConfig& config, const fs::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir);
  Runner r(config, out_dir);
  ArtifactStore& store = r.store_;
  const FixtureSet fixtures = make_fixture_set(config.fixtures, config.sim, config.seed);

  // 1. curvature dataset
  const json ds_cfg = {{"seed", config.seed}, {"sim", config.sim}, {"fixtures", config.fixtures}};
  StageRecord& s1 = r.stage("curvature_dataset", ds_cfg, {}, [&](StageRecord& rec) {
    FeatureDataset ds = build_curvature_dataset(fixtures, config.sim, config.fixtures.augment, config.seed);
    double max_label = 0.0;
    std::set<double> levels;
    for (const auto& row : ds.rows) {
      max_label = std::max(max_label, row.kappa_true);
      levels.insert(row.kappa_true);
    }
    if (max_label > kMaxTrainingCurvature) throw DataRejectedError("curvature dataset exceeds 80 m^-1");
    rec.outputs["features"] = store.put(feature_csv_text(ds), "csv");
    rec.summary = {{"rows", ds.rows.size()}, {"levels", levels.size()}, {"max_kappa", max_label}};
  });
  if (s1.status != "ok") {
    skip_rest(r, 1, "upstream stage failed");
    return r.manifest_;
  }

  // 2. curvature model + gate
  TrainConfig tc = config.train;
  tc.seed = config.seed;
  const std::string features_hash = s1.outputs.at("features");
  StageRecord& s2 = r.stage("train_curvature", tc, {features_hash}, [&](StageRecord& rec) {
    const FeatureDataset ds = read_feature_csv(store.path(features_hash).string());
    validate_training_dataset(ds);
    TrainResult res = train(ds, tc);
    json history = json::array();
    for (const auto& e : res.history) history.push_back(e);
    rec.outputs["model"] = store.put(model_to_json(res.model).dump() + "\n", "json");
    rec.outputs["history"] = store.put(history.dump() + "\n", "json");
    rec.summary = {{"train", res.train_metrics},
                   {"val", res.val_metrics},
                   {"test", res.test_metrics},
                   {"best_epoch", res.best_epoch}};
  });
  if (s2.status != "ok") {
    skip_rest(r, 2, "upstream stage failed");
    return r.manifest_;
  }
  {
    const json& r2 = s2.summary.at("test").at("r2");
    r.manifest_.gates["curvature_r2"] =
        run_gate("curvature_r2", r2.is_null() ? std::nullopt : std::optional<double>(r2.get<double>()),
                 config.gate.curvature_r2);
  }
  if (!r.manifest_.gates["curvature_r2"].passed) {
    skip_rest(r, 2, "curvature gate failed");
    return r.manifest_;
  }

  // 3. force calibration data
  const json fd_cfg = {{"seed", config.seed}, {"sim", config.sim}, {"fixtures", config.fixtures},
                       {"force", config.force}};
  StageRecord& s3 = r.stage("force_dataset", fd_cfg, {}, [&](StageRecord& rec) {
    const auto samples = build_force_dataset(fixtures, config.sim, config.force, config.seed);
    rec.outputs["calibration"] = store.put(calibration_csv_text(samples), "csv");
    rec.summary = {{"samples", samples.size()}};
  });
  if (s3.status != "ok") {
    skip_rest(r, 3, "upstream stage failed");
    return r.manifest_;
  }

  // 4. surfaces + gate
  const std::string cal_hash = s3.outputs.at("calibration");
  StageRecord& s4 = r.stage("fit_calibration", json::object(), {cal_hash}, [&](StageRecord& rec) {
    const auto all = read_calibration_csv(store.path(cal_hash).string());
    std::vector<CalibrationSample> flat_data;
    for (const auto& s : all) {
      if (s.c == 0.0) flat_data.push_back(s);
    }
    const CalibrationSurface flat = fit_surface(flat_data, SurfaceVariant::flat);
    const CalibrationSurface aware = fit_surface(all, SurfaceVariant::curvature_aware);
    const auto put = [&](const CalibrationSurface& s) { return store.put(json(s).dump(2) + "\n", "json"); };
    rec.outputs["surface_flat"] = put(flat);
    rec.outputs["surface_aware"] = put(aware);
    rec.outputs["surface_flat_pruned"] = put(prune_surface(flat, flat_data));
    rec.outputs["surface_aware_pruned"] = put(prune_surface(aware, all));
    rec.summary = {{"flat_r2", flat.fit_r2}, {"aware_r2", aware.fit_r2}};
  });
  if (s4.status != "ok") {
    skip_rest(r, 4, "upstream stage failed");
    return r.manifest_;
  }
  r.manifest_.gates["calibration_r2"] =
      run_gate("calibration_r2", s4.summary.at("aware_r2").get<double>(), config.gate.calibration_r2);
  if (!r.manifest_.gates["calibration_r2"].passed) {
    skip_rest(r, 4, "calibration gate failed");
    return r.manifest_;
  }

  // 5. object evaluation
  const json ev_cfg = {{"seed", config.seed}, {"sim", config.sim}, {"fixtures", config.fixtures},
                       {"force", config.force}, {"session", config.session},
                       {"operator", config.op}, {"objects", config.objects}};
  const std::vector<std::string> ev_inputs = {s2.outputs.at("model"), s4.outputs.at("surface_flat"),
                                              s4.outputs.at("surface_aware")};
  r.stage("evaluate", ev_cfg, ev_inputs, [&](StageRecord& rec) {
    auto model = std::make_shared<const CurvNetModel>(load_model(store.path(ev_inputs[0]).string()));
    SessionSurfaces surfaces{load_surface(store.path(ev_inputs[1]).string()),
                             load_surface(store.path(ev_inputs[2]).string())};
    const Evaluation ev = evaluate_objects(config.objects, fixtures.sensors.at(config.force.sensor_index),
                                           config.sim, model, surfaces, config.session, config.op,
                                           config.seed);
    json sessions = json::array();
    for (const auto& s : ev.sessions) sessions.push_back(s.to_json());
    rec.outputs["report_csv"] = store.put(ev.report.to_csv(), "csv");
    rec.outputs["report_txt"] = store.put(ev.report.to_text_table(), "txt");
    rec.outputs["report_json"] = store.put(json(ev.report).dump(2) + "\n", "json");
    rec.outputs["sessions"] = store.put(sessions.dump(2) + "\n", "json");
    json kp = json::object();
    for (const auto& s : ev.sessions) kp[s.object] = s.kappa_pred;
    rec.summary = {{"objects", ev.sessions.size()}, {"kappa_pred", kp},
                   {"warnings", ev.report.warnings}};
  });
  r.save();
  return r.manifest_;
}

// ---- json ------------------------------------------------------------------

void to_json(json& j, const FixtureConfig& c) {
  j = {{"curvatures", c.curvatures},
       {"sensors", c.sensors},
       {"baselines_per_fixture", c.baselines_per_fixture},
       {"samples_per_baseline", c.samples_per_baseline},
       {"augment", c.augment}};
}

void from_json(const json& j, FixtureConfig& c) {
  FixtureConfig d;
  c.curvatures = j.value("curvatures", d.curvatures);
  c.sensors = j.value("sensors", d.sensors);
  c.baselines_per_fixture = j.value("baselines_per_fixture", d.baselines_per_fixture);
  c.samples_per_baseline = j.value("samples_per_baseline", d.samples_per_baseline);
  c.augment = j.value("augment", d.augment);
}

void to_json(json& j, const ForceDatasetConfig& c) {
  j = {{"grid", c.grid}, {"frames_per_level", c.frames_per_level}, {"sensor_index", c.sensor_index}};
}

void from_json(const json& j, ForceDatasetConfig& c) {
  ForceDatasetConfig d;
  c.grid = j.value("grid", d.grid);
  c.frames_per_level = j.value("frames_per_level", d.frames_per_level);
  c.sensor_index = j.value("sensor_index", d.sensor_index);
}

void to_json(json& j, const ObjectSpec& o) {
  j = {{"name", o.name}, {"kappa", o.kappa}, {"natural_force", o.natural_force}};
}

void from_json(const json& j, ObjectSpec& o) {
  o.name = j.at("name").get<std::string>();
  o.kappa = j.at("kappa").get<double>();
  o.natural_force = j.value("natural_force", 2.0);
}

void to_json(json& j, const GateResult& g) {
  j = {{"name", g.name},
       {"value", g.value ? json(*g.value) : json(nullptr)},
       {"threshold", g.threshold},
       {"passed", g.passed},
       {"reason", g.reason},
       {"hint", g.hint}};
}

void to_json(json& j, const PipelineConfig& c) {
  j = {{"seed", c.seed},
       {"sim", c.sim},
       {"fixtures", c.fixtures},
       {"train", c.train},
       {"force", c.force},
       {"gate", {{"curvature_r2", c.gate.curvature_r2}, {"calibration_r2", c.gate.calibration_r2}}},
       {"session", c.session},
       {"operator", c.op},
       {"objects", c.objects}};
}

void from_json(const json& j, PipelineConfig& c) {
  static const std::set<std::string> known = {"seed",  "sim",     "fixtures", "train",   "force",
                                              "gate",  "session", "operator", "objects"};
  if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }
  PipelineConfig d;
  c.seed = j.value("seed", d.seed);
  c.sim = j.value("sim", d.sim);
  c.fixtures = j.value("fixtures", d.fixtures);
  c.train = j.value("train", d.train);
  c.force = j.value("force", d.force);
  if (j.contains("gate")) {
    c.gate.curvature_r2 = j["gate"].value("curvature_r2", d.gate.curvature_r2);
    c.gate.calibration_r2 = j["gate"].value("calibration_r2", d.gate.calibration_r2);
  }
  c.session = j.value("session", d.session);
  c.op = j.value("operator", d.op);
  c.objects = j.value("objects", d.objects);
}

}  // namespace curvecal
