#include "curvecal/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>

#include <CLI11.hpp>

#include "curvecal/csv.hpp"
#include "curvecal/errors.hpp"
#include "curvecal/pipeline.hpp"
#include "curvecal/service.hpp"

namespace curvecal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out = ".";
  CLI::Option* seed_opt = nullptr;

  void add(CLI::App* sub) {
    sub->add_option("--config", config, "Pipeline config JSON file or 'default' (falls back to $CURVECAL_CONFIG)");
    seed_opt = sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", out, "Output directory")->capture_default_str();
  }

  PipelineConfig load() const {
    std::string path = config;
    if (path.empty()) {
      const char* env = std::getenv("CURVECAL_CONFIG");
      path = env ? env : "default";
    }
    PipelineConfig cfg = load_pipeline_config(path);
    if (seed_opt && seed_opt->count() > 0) cfg.seed = seed;
    return cfg;
  }

  fs::path out_dir() const {
    fs::create_directories(out);
    return out;
  }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(prec) << v;
  return ss.str();
}

std::string r2_text(const std::optional<double>& r2) { return r2 ? fmt(*r2) : "undefined"; }

SensorIdentity calibrated_sensor(const PipelineConfig& cfg) {
  return make_fixture_set(cfg.fixtures, cfg.sim, cfg.seed).sensors.at(cfg.force.sensor_index);
}

struct ModelFiles {
  std::string model, flat, aware;

  void add(CLI::App* sub) {
    sub->add_option("--model", model, "Curvature model JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--flat", flat, "Flat calibration surface JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--aware", aware, "Curvature-aware calibration surface JSON")
        ->required()
        ->check(CLI::ExistingFile);
  }

  std::shared_ptr<const CurvNetModel> load_model_ptr() const {
    return std::make_shared<const CurvNetModel>(load_model(model));
  }
  SessionSurfaces surfaces() const { return {load_surface(flat), load_surface(aware)}; }
};

// ---- subcommands -----------------------------------------------------------

struct Simulate {
  Common c;
  double kappa = 0.0;
  double force = 0.0;
  int frames = 100;
  int sensor = 0;
  std::string format = "csv";

  void add(CLI::App* app) {
    auto* s = app->add_subcommand("simulate", "Simulate scan frames for one sensor on one fixture");
    c.add(s);
    s->add_option("--kappa", kappa, "Fixture curvature, 1/m")->capture_default_str()->check(CLI::NonNegativeNumber);
    s->add_option("--force", force, "Force on the central block, N")->capture_default_str()->check(CLI::NonNegativeNumber);
    s->add_option("--frames", frames, "Number of frames")->capture_default_str()->check(CLI::PositiveNumber);
    s->add_option("--sensor", sensor, "Sensor index within the fixture set")->capture_default_str();
    s->add_option("--format", format, "Frame stream format")->capture_default_str()->check(CLI::IsMember({"csv", "jsonl"}));
  }

  int run(std::ostream& out) const {
    const PipelineConfig cfg = c.load();
    const FixtureSet fx = make_fixture_set(cfg.fixtures, cfg.sim, cfg.seed);
    if (sensor < 0 || sensor >= static_cast<int>(fx.sensors.size())) throw ConfigError("--sensor out of range");
    SimulatedRig rig(fx.sensors[sensor], cfg.sim, kappa, mix_seed(cfg.seed, 0x51));
    std::vector<ScanFrame> stream;
    for (int i = 0; i < frames; ++i) stream.push_back(rig.scan(i / cfg.sim.circuit.scan_rate_hz, force));
    const fs::path dir = c.out_dir();
    const fs::path file = dir / (format == "csv" ? "frames.csv" : "frames.jsonl");
    if (format == "csv") {
      write_frames_csv(file.string(), stream);
    } else {
      write_frames_jsonl(file.string(), stream);
    }
    write_text(dir / "identity.json", json(fx.sensors[sensor]).dump(2) + "\n");
    out << "wrote " << frames << " frames (" << fx.sensors[sensor].sensor_id << ", kappa " << kappa
        << ", force " << force << " N) to " << file.string() << "\n";
    return kExitOk;
  }
};

struct Featurize {
  Common c;
  std::string frames;
  double label = 0.0;
  bool no_augment = false;

  void add(CLI::App* app) {
    auto* s = app->add_subcommand("featurize", "Build the curvature feature dataset (or featurize one baseline)");
    c.add(s);
    s->add_option("--frames", frames, "Featurize this no-load frame CSV instead of simulating fixtures")
        ->check(CLI::ExistingFile);
    s->add_option("--label", label, "Curvature label for --frames when the file carries none")->capture_default_str();
    s->add_flag("--no-augment", no_augment, "Skip the 8 dihedral orientations");
  }

  int run(std::ostream& out) const {
    const PipelineConfig cfg = c.load();
    FeatureDataset ds;
    if (!frames.empty()) {
      const auto stream = read_frames_csv(frames);
      ds.norm = NormalizationSpec::adc_range(cfg.sim.circuit.adc_bits);
      const BaselineMeasurement b = average_baseline(stream, cfg.session.force_epsilon);
      const double kappa = !stream.empty() && stream.front().curvature_true ? *stream.front().curvature_true : label;
      ds.rows.push_back({kappa, extract_features(b, ds.norm).as_array(), 0});
    } else {
      const FixtureSet fx = make_fixture_set(cfg.fixtures, cfg.sim, cfg.seed);
      ds = build_curvature_dataset(fx, cfg.sim, cfg.fixtures.augment && !no_augment, cfg.seed);
    }
    const fs::path file = c.out_dir() / "features.csv";
    write_feature_csv(file.string(), ds);
    out << "wrote " << ds.rows.size() << " feature rows to " << file.string() << "\n";
    return kExitOk;
  }
};

struct TrainCurvature {
  Common c;
  std::string dataset;
  int epochs = 0;

  void add(CLI::App* app) {
    auto* s = app->add_subcommand("train-curvature", "Train the curvature model and apply the R^2 gate");
    c.add(s);
    s->add_option("--dataset", dataset, "Feature dataset CSV")->required()->check(CLI::ExistingFile);
    s->add_option("--epochs", epochs, "Override the configured epoch count");
  }

  int run(std::ostream& out) const {
    const PipelineConfig cfg = c.load();
    const FeatureDataset ds = read_feature_csv(dataset);
    validate_training_dataset(ds);
    TrainConfig tc = cfg.train;
    tc.seed = cfg.seed;
    if (epochs > 0) tc.epochs = epochs;
    const TrainResult res = train(ds, tc);
    const fs::path dir = c.out_dir();
    save_model((dir / "model.json").string(), res.model);
    json history = json::array();
    for (const auto& e : res.history) history.push_back(e);
    const GateResult gate = run_gate(res.test_metrics, cfg.gate.curvature_r2);
    write_text(dir / "metrics.json", json{{"train", res.train_metrics},
                                          {"val", res.val_metrics},
                                          {"test", res.test_metrics},
                                          {"best_epoch", res.best_epoch},
                                          {"gate", gate},
                                          {"history", history}}
                                         .dump(2) + "\n");
    out << "test RMSE " << fmt(res.test_metrics.rmse) << " 1/m, MAE " << fmt(res.test_metrics.mae)
        << " 1/m, R^2 " << r2_text(res.test_metrics.r2) << " (best epoch " << res.best_epoch << ")\n";
    out << "gate R^2 > " << cfg.gate.curvature_r2 << ": " << (gate.passed ? "pass" : "FAIL") << "\n";
    if (!gate.passed) {
      out << "hint: " << gate.hint << "\n";
      return kExitGate;
    }
    return kExitOk;
  }
};

struct FitCalibration {
  Common c;
  std::string data;

  void add(CLI::App* app) {
    auto* s = app->add_subcommand("fit-calibration", "Fit flat and curvature-aware force surfaces");
    c.add(s);
    s->add_option("--data", data, "Calibration CSV s,c,f (simulated from the config when omitted)")
        ->check(CLI::ExistingFile);
  }

  int run(std::ostream& out) const {
    const PipelineConfig cfg = c.load();
    const fs::path dir = c.out_dir();
    std::vector<CalibrationSample> all;
    if (!data.empty()) {
      all = read_calibration_csv(data);
    } else {
      const FixtureSet fx = make_fixture_set(cfg.fixtures, cfg.sim, cfg.seed);
      all = build_force_dataset(fx, cfg.sim, cfg.force, cfg.seed);
      write_calibration_csv((dir / "calibration.csv").string(), all);
    }
    std::vector<CalibrationSample> flat_data;
    for (const auto& s : all) {
      if (s.c == 0.0) flat_data.push_back(s);
    }
    if (flat_data.empty()) throw DataRejectedError("calibration data has no flat (c = 0) rows");
    const CalibrationSurface flat = fit_surface(flat_data, SurfaceVariant::flat);
    const CalibrationSurface aware = fit_surface(all, SurfaceVariant::curvature_aware);
    save_surface((dir / "surface_flat.json").string(), flat);
    save_surface((dir / "surface_aware.json").string(), aware);
    save_surface((dir / "surface_flat_pruned.json").string(), prune_surface(flat, flat_data));
    save_surface((dir / "surface_aware_pruned.json").string(), prune_surface(aware, all));
    for (const auto* s : {&flat, &aware}) {
      out << to_string(s->variant) << ": F =";
      for (const auto& t : s->terms) out << " " << (t.coefficient < 0 ? "- " : "+ ") << std::abs(t.coefficient) << "*" << term_name(t.s_power, t.c_power);
      out << "  (R^2 " << fmt(s->fit_r2) << ")\n";
    }
    const GateResult gate = run_gate("calibration_r2", aware.fit_r2, cfg.gate.calibration_r2);
    out << "gate R^2 > " << cfg.gate.calibration_r2 << ": " << (gate.passed ? "pass" : "FAIL") << "\n";
    return gate.passed ? kExitOk : kExitGate;
  }
};

struct Evaluate {
  Common c;
  ModelFiles files;
  std::string objects;

  void add(CLI::App* app) {
    auto* s = app->add_subcommand("evaluate", "Run scripted sessions on objects and compare flat vs aware calibration");
    c.add(s);
    files.add(s);
    s->add_option("--objects", objects, "Objects JSON: [{name, kappa, natural_force}]")->check(CLI::ExistingFile);
  }

  int run(std::ostream& out) const {
    const PipelineConfig cfg = c.load();
    const auto objs = objects.empty() ? cfg.objects : read_objects_json(objects);
    const Evaluation ev = evaluate_objects(objs, calibrated_sensor(cfg), cfg.sim, files.load_model_ptr(),
                                           files.surfaces(), cfg.session, cfg.op, cfg.seed);
    const fs::path dir = c.out_dir();
    write_text(dir / "report.csv", ev.report.to_csv());
    write_text(dir / "report.txt", ev.report.to_text_table());
    write_text(dir / "report.json", json(ev.report).dump(2) + "\n");
    json sessions = json::array();
    for (const auto& s : ev.sessions) sessions.push_back(s.to_json());
    write_text(dir / "sessions.json", sessions.dump(2) + "\n");
    out << ev.report.to_text_table();
    for (const auto& w : ev.report.warnings) out << "warning: " << w << "\n";
    return kExitOk;
  }
};

struct PipelineRun {
  Common c;

  void add(CLI::App* app) {
    auto* s = app->add_subcommand("pipeline-run", "Run every stage end to end with content-hashed artifacts");
    c.add(s);
  }

  int run(std::ostream& out) const {
    const PipelineConfig cfg = c.load();
    const PipelineManifest m = run_full(cfg, c.out_dir());
    for (const auto& s : m.stages) {
      out << std::left << std::setw(18) << s.name << " " << s.status << (s.reused ? " (reused)" : "");
      if (!s.error.empty()) out << ": " << s.error;
      out << "\n";
    }
    for (const auto& [name, g] : m.gates) {
      out << "gate " << name << " = " << r2_text(g.value) << " > " << g.threshold << ": "
          << (g.passed ? "pass" : "FAIL") << "\n";
    }
    out << "manifest " << (fs::path(c.out) / "manifest.json").string() << " digest " << m.digest() << "\n";
    if (m.completed()) return kExitOk;
    if (m.gate_failed()) return kExitGate;
    return kExitFailure;
  }
};

std::unique_ptr<SessionRunner> make_runner(const PipelineConfig& cfg, const ModelFiles& files,
                                           std::shared_ptr<const CurvNetModel> model,
                                           const std::string& object, double kappa, std::uint64_t noise) {
  SimulatedRig rig(calibrated_sensor(cfg), cfg.sim, kappa, noise);
  return std::make_unique<SessionRunner>(cfg.session, std::move(model), files.surfaces(), std::move(rig), object);
}

struct SessionServe {
  Common c;
  ModelFiles files;
  std::string address = "127.0.0.1";
  int port = 8765;
  double kappa = 0.0;

  void add(CLI::App* app) {
    auto* s = app->add_subcommand("session-serve", "Serve interactive sessions over WebSocket");
    c.add(s);
    files.add(s);
    s->add_option("--address", address, "Bind address")->capture_default_str();
    s->add_option("--port", port, "TCP port (0 picks a free one)")->capture_default_str()->check(CLI::Range(0, 65535));
    s->add_option("--kappa", kappa, "Simulated object curvature unless the start command sets one")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
  }

  int run(std::ostream& out, std::ostream& err) const {
    const PipelineConfig cfg = c.load();
    auto model = files.load_model_ptr();
    auto counter = std::make_shared<std::uint64_t>(0);
    SessionFactory factory = [cfg, files = files, model, counter, kappa = kappa](const json& start) {
      const double k = start.value("kappa", kappa);
      if (!(k >= 0.0)) throw DomainError("kappa must be >= 0");
      return make_runner(cfg, files, model, start.value("object", std::string("object")), k,
                         mix_seed(cfg.seed, 0x5e55 + (*counter)++));
    };
    SessionService service({address, static_cast<unsigned short>(port)}, factory, &err);
    const unsigned short bound = service.start();
    out << "serving ws://" << address << ":" << bound << "/session (Ctrl-C to stop)" << std::endl;
    service.wait();
    if (auto rep = service.last_report()) {
      const fs::path dir = c.out_dir();
      write_text(dir / "session_report.json", rep->to_json().dump(2) + "\n");
      write_text(dir / "report.csv", rep->to_csv());
      out << "last report written to " << dir.string() << "\n";
    }
    return kExitOk;
  }
};

struct SessionReplay {
  Common c;
  ModelFiles files;
  std::string trace;
  double kappa = 0.0;
  std::string object = "object";

  void add(CLI::App* app) {
    auto* s = app->add_subcommand("session-replay", "Replay a recorded t,force trace through a session headlessly");
    c.add(s);
    files.add(s);
    s->add_option("--trace", trace, "Trace CSV with columns t,force")->required()->check(CLI::ExistingFile);
    s->add_option("--kappa", kappa, "Simulated object curvature, 1/m")->capture_default_str()->check(CLI::NonNegativeNumber);
    s->add_option("--object", object, "Object name for the report")->capture_default_str();
  }

  int run(std::ostream& out) const {
    const PipelineConfig cfg = c.load();
    auto runner = make_runner(cfg, files, files.load_model_ptr(), object, kappa, mix_seed(cfg.seed, 0x5e55));
    std::vector<StreamMessage> messages;
    const SessionReport rep = run_session(*runner, read_trace_csv(trace), &messages);
    const fs::path dir = c.out_dir();
    std::string lines;
    for (const auto& m : messages) lines += to_json(m).dump() + "\n";
    write_text(dir / "messages.jsonl", lines);
    write_text(dir / "session_report.json", rep.to_json().dump(2) + "\n");
    write_text(dir / "report.csv", rep.to_csv());
    out << "kappa_pred " << fmt(rep.kappa_pred, 2) << " 1/m, " << rep.records.size() << " records"
        << (rep.aborted ? ", aborted: " + rep.abort_reason : rep.completed ? ", completed" : ", incomplete")
        << "\n";
    out << rep.errors.to_text_table();
    return kExitOk;
  }
};

}  // namespace

int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Curvature-aware calibration workbench for 4x4 resistive tactile arrays", "curvecal");
  app.require_subcommand(1);
  app.set_version_flag("--version", "curvecal 0.1.0");

  Simulate simulate;
  Featurize featurize;
  TrainCurvature train_cmd;
  FitCalibration fit;
  Evaluate evaluate;
  PipelineRun pipeline;
  SessionServe serve;
  SessionReplay replay;
  simulate.add(&app);
  featurize.add(&app);
  train_cmd.add(&app);
  fit.add(&app);
  evaluate.add(&app);
  pipeline.add(&app);
  serve.add(&app);
  replay.add(&app);

  std::vector<std::string> args(argv.size() > 1 ? argv.begin() + 1 : argv.end(), argv.end());
  std::reverse(args.begin(), args.end());  // CLI11 consumes from the back
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "simulate") return simulate.run(out);
    if (name == "featurize") return featurize.run(out);
    if (name == "train-curvature") return train_cmd.run(out);
    if (name == "fit-calibration") return fit.run(out);
    if (name == "evaluate") return evaluate.run(out);
    if (name == "pipeline-run") return pipeline.run(out);
    if (name == "session-serve") return serve.run(out, err);
    if (name == "session-replay") return replay.run(out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataRejectedError& e) {
    err << "data rejected: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DegenerateDataError& e) {
    err << "degenerate data: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ContaminationError& e) {
    err << "contaminated baseline: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace curvecal
