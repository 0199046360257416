#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "curvecal/errors.hpp"
#include "curvecal/pipeline.hpp"

namespace py = pybind11;
using namespace curvecal;

namespace {

py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_py(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

NodeArray node_array(const std::vector<double>& v) {
  if (v.size() != kNodeCount) throw py::value_error("expected 16 node values");
  NodeArray a{};
  std::copy(v.begin(), v.end(), a.begin());
  return a;
}

CalibrationSurface surface_from(const py::object& o) { return from_py(o).get<CalibrationSurface>(); }

}  // namespace

PYBIND11_MODULE(_curvecal, m) {
  m.doc() = "Curvature-aware calibration for 4x4 resistive tactile arrays";

  // pybind11 tries translators newest first, so the base class goes first
  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<DataRejectedError>(m, "DataRejectedError", PyExc_ValueError);
  py::register_exception<DegenerateDataError>(m, "DegenerateDataError", PyExc_ValueError);
  py::register_exception<ContaminationError>(m, "ContaminationError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ProtocolError>(m, "ProtocolError", PyExc_RuntimeError);

  m.def("readout_voltage", [](double r, double r_gain, double v_ref) {
    CircuitConfig c;
    c.r_gain = r_gain;
    c.v_ref = v_ref;
    return readout_voltage(c, r);
  }, py::arg("resistance"), py::arg("r_gain") = 5600.0, py::arg("v_ref") = 0.1);

  m.def("simulate_frames", [](double kappa, double force, int n, std::uint64_t seed, int sensor) {
    const PipelineConfig cfg;
    const FixtureSet fx = make_fixture_set(cfg.fixtures, cfg.sim, seed);
    SimulatedRig rig(fx.sensors.at(sensor), cfg.sim, kappa, mix_seed(seed, 0x51));
    std::vector<std::vector<int>> out;
    for (int i = 0; i < n; ++i) {
      const ScanFrame f = rig.scan(i / cfg.sim.circuit.scan_rate_hz, force);
      out.emplace_back(f.node_counts.begin(), f.node_counts.end());
    }
    return out;
  }, "Node counts of n frames from the default simulator", py::arg("kappa"), py::arg("force") = 0.0,
     py::arg("n") = 100, py::arg("seed") = 7, py::arg("sensor") = 0);

  m.def("extract_features", [](const std::vector<double>& node_means, int adc_bits) {
    BaselineMeasurement b{node_array(node_means), 1};
    const auto f = extract_features(b, NormalizationSpec::adc_range(adc_bits)).as_array();
    return std::vector<double>(f.begin(), f.end());
  }, py::arg("node_means"), py::arg("adc_bits") = 10);

  m.def("global_statistics", [](const std::vector<double>& values) {
    const auto s = global_statistics(values);
    return std::vector<double>(s.begin(), s.end());
  });

  m.def("dihedral_transform", [](const std::vector<double>& nodes, int index) {
    const auto t = dihedral_transform(node_array(nodes), index);
    return std::vector<double>(t.begin(), t.end());
  });

  m.def("fit_surface", [](const std::vector<double>& s, const std::vector<double>& c,
                          const std::vector<double>& f, const std::string& variant) {
    if (s.size() != c.size() || s.size() != f.size()) throw py::value_error("s, c, f lengths differ");
    std::vector<CalibrationSample> samples;
    for (std::size_t i = 0; i < s.size(); ++i) samples.push_back({s[i], c[i], f[i]});
    return to_py(fit_surface(samples, surface_variant_from_string(variant)));
  }, py::arg("s"), py::arg("c"), py::arg("f"), py::arg("variant") = "curvature_aware");

  m.def("predict_force", [](const py::object& surface, double s, double c) {
    return predict_force(surface_from(surface), s, c).force;
  });

  m.def("reference_surface", [] { return to_py(reference_surface()); });

  m.def("predict_curvature", [](const std::string& model_path, const std::vector<double>& node_means) {
    const CurvNetModel model = load_model(model_path);
    BaselineMeasurement b{node_array(node_means), 1};
    return predict(model, extract_features(b, model.feature_norm));
  }, py::arg("model_path"), py::arg("node_means"));

  m.def("run_pipeline", [](const std::string& out_dir, const std::string& config, py::object seed) {
    PipelineConfig cfg = load_pipeline_config(config);
    if (!seed.is_none()) cfg.seed = seed.cast<std::uint64_t>();
    PipelineManifest man;
    {
      py::gil_scoped_release release;
      man = run_full(cfg, out_dir);
    }
    return to_py(man.to_json());
  }, py::arg("out_dir"), py::arg("config") = "default", py::arg("seed") = py::none());

  m.def("session_trace", [](const std::vector<std::pair<double, double>>& trace,
                            const std::vector<double>& block_readings, const py::object& spec) {
    // Pure state machine over (t, force, block_reading) samples.
    if (trace.size() != block_readings.size()) throw py::value_error("trace and readings lengths differ");
    const SessionSpec sp = spec.is_none() ? SessionSpec{} : from_py(spec).get<SessionSpec>();
    sp.validate();
    StepResult r = start(SessionState{}, sp, trace.empty() ? 0.0 : trace.front().first, 0.0);
    nlohmann::json msgs = nlohmann::json::array();
    for (auto& msg : r.messages) msgs.push_back(to_json(msg));
    for (std::size_t i = 0; i < trace.size(); ++i) {
      r = step(r.state, sp, {trace[i].first, trace[i].second, block_readings[i]});
      for (auto& msg : r.messages) msgs.push_back(to_json(msg));
    }
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& rec : r.state.recorded) recs.push_back(rec);
    return to_py({{"phase", to_string(r.state.phase)},
                  {"target_index", r.state.target_index},
                  {"dwell_progress", r.state.dwell_progress},
                  {"records", recs},
                  {"messages", msgs}});
  }, py::arg("trace"), py::arg("block_readings"), py::arg("spec") = py::none());

  m.def("sha256_hex", [](const py::bytes& b) { return sha256_hex(std::string(b)); });
}
