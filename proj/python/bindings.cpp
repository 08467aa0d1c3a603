#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "cli.hpp"
#include "eventmatch/error.hpp"
#include "eventmatch/events.hpp"
#include "eventmatch/features.hpp"
#include "eventmatch/geometry.hpp"
#include "eventmatch/io.hpp"
#include "eventmatch/parallel.hpp"
#include "eventmatch/pipeline.hpp"
#include "eventmatch/selfcheck.hpp"

namespace py = pybind11;
using namespace eventmatch;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

py::array_t<float> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
  py::array_t<float> a(shape);
  std::copy(t.data(), t.data() + t.size(), a.mutable_data());
  return a;
}

py::array_t<bool> mask_to_numpy(const Mask& m) {
  std::vector<py::ssize_t> shape(m.dims().begin(), m.dims().end());
  py::array_t<bool> a(shape);
  auto* out = a.mutable_data();
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] != 0;
  return a;
}

Tensor from_numpy(const FloatArray& a) {
  Tensor::Shape dims(a.shape(), a.shape() + a.ndim());
  return Tensor(dims, std::vector<float>(a.data(), a.data() + a.size()));
}

Mask mask_from(const py::object& valid, std::size_t h, std::size_t w) {
  if (valid.is_none()) return Mask({h, w}, 1);
  const auto a = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>::ensure(valid);
  if (!a || a.ndim() != 2 || static_cast<std::size_t>(a.shape(0)) != h || static_cast<std::size_t>(a.shape(1)) != w)
    throw ShapeError("valid mask must be " + std::to_string(h) + " x " + std::to_string(w));
  return Mask({h, w}, std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

DisplacementField field_from(const FloatArray& a, MatchMode mode, const py::object& valid) {
  const std::size_t c = channels_for(mode);
  Tensor t = from_numpy(a);
  if (t.ndim() == 2 && c == 1) t = t.reshaped({t.dim(0), t.dim(1), 1});
  if (t.ndim() != 3 || t.dim(2) != c)
    throw ShapeError(std::string(to_string(mode)) + " field must be H x W x " + std::to_string(c) + ", got " +
                     shape_string(t.dims()));
  DisplacementField d;
  d.mode = mode;
  d.valid = mask_from(valid, t.dim(0), t.dim(1));
  d.data = std::move(t);
  return d;
}

py::object field_array(const DisplacementField& d) {
  if (d.mode == MatchMode::Disparity) return to_numpy(d.data.reshaped({d.height(), d.width()}));
  return to_numpy(d.data);
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict out;
  out["valid"] = m.valid;
  if (m.epe) out["epe"] = *m.epe;
  if (m.ae) out["ae_deg"] = *m.ae;
  if (m.mae) out["mae"] = *m.mae;
  if (m.rmse) out["rmse"] = *m.rmse;
  for (auto [n, v] : m.npe) out[py::str(std::to_string(n) + "pe")] = v;
  return out;
}

EventStream stream_from_arrays(py::array_t<std::uint64_t, py::array::forcecast> t,
                               py::array_t<std::uint16_t, py::array::forcecast> x,
                               py::array_t<std::uint16_t, py::array::forcecast> y,
                               py::array_t<std::int8_t, py::array::forcecast> p, std::uint32_t width, std::uint32_t height,
                               std::uint64_t t_start, std::uint64_t t_end) {
  const auto n = t.size();
  if (x.size() != n || y.size() != n || p.size() != n) throw ShapeError("t, x, y and p must have the same length");
  EventStream s;
  s.width = width;
  s.height = height;
  s.t_start = t_start;
  s.t_end = t_end;
  s.events.resize(n);
  auto tv = t.unchecked<1>();
  auto xv = x.unchecked<1>();
  auto yv = y.unchecked<1>();
  auto pv = p.unchecked<1>();
  for (py::ssize_t i = 0; i < n; ++i) s.events[i] = {tv(i), xv(i), yv(i), static_cast<std::int8_t>(pv(i) > 0 ? 1 : -1)};
  std::stable_sort(s.events.begin(), s.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  s.validate();
  return s;
}

template <typename T, typename F>
py::array_t<T> column(const EventStream& s, F get) {
  py::array_t<T> a(static_cast<py::ssize_t>(s.events.size()));
  auto* out = a.mutable_data();
  for (std::size_t i = 0; i < s.events.size(); ++i) out[i] = get(s.events[i]);
  return a;
}

ModelConfig model_config(std::size_t dim, std::size_t blocks, std::size_t bins) {
  ModelConfig c;
  c.dim = dim;
  c.enhancement.num_blocks = blocks;
  c.bins = bins;
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dense optical flow and stereo disparity from event streams by feature matching";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<BoundsError>(m, "BoundsError", base.ptr());
  py::register_exception<DomainError>(m, "DomainError", base.ptr());

  py::class_<EventStream>(m, "EventStream")
      .def(py::init(&stream_from_arrays), py::arg("t"), py::arg("x"), py::arg("y"), py::arg("p"), py::arg("width"),
           py::arg("height"), py::arg("t_start"), py::arg("t_end"))
      .def_readonly("width", &EventStream::width)
      .def_readonly("height", &EventStream::height)
      .def_readonly("t_start", &EventStream::t_start)
      .def_readonly("t_end", &EventStream::t_end)
      .def("__len__", [](const EventStream& s) { return s.events.size(); })
      .def_property_readonly("t", [](const EventStream& s) { return column<std::uint64_t>(s, [](const Event& e) { return e.t; }); })
      .def_property_readonly("x", [](const EventStream& s) { return column<std::uint16_t>(s, [](const Event& e) { return e.x; }); })
      .def_property_readonly("y", [](const EventStream& s) { return column<std::uint16_t>(s, [](const Event& e) { return e.y; }); })
      .def_property_readonly("p", [](const EventStream& s) { return column<std::int8_t>(s, [](const Event& e) { return e.p; }); })
      .def("__repr__", [](const EventStream& s) {
        std::ostringstream os;
        os << "<EventStream " << s.events.size() << " events, " << s.width << "x" << s.height << ", t in [" << s.t_start
           << ", " << s.t_end << "]>";
        return os.str();
      });

  m.def("read_events", [](const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return parse_events(bytes, detect_event_format(bytes));
  }, py::arg("path"));
  m.def("write_events", [](const EventStream& s, const std::filesystem::path& path, const std::string& format) {
    if (format != "text" && format != "binary") throw DomainError("format must be 'text' or 'binary'");
    write_file(path, write_events(s, format == "text" ? EventFormat::Text : EventFormat::Binary));
  }, py::arg("stream"), py::arg("path"), py::arg("format") = "binary");

  m.def("voxel_grid", [](const EventStream& s, std::size_t bins) { return to_numpy(build_voxel_grid(s, bins).data); },
        py::arg("stream"), py::arg("bins") = kDefaultBins, "H x W x bins float32 grid of temporally bilinear event mass");

  m.def("read_tensor", [](const std::filesystem::path& path) { return to_numpy(read_tensor(read_file(path))); },
        py::arg("path"));
  m.def("write_tensor", [](const std::filesystem::path& path, const FloatArray& a) {
    write_file(path, write_tensor(from_numpy(a)));
  }, py::arg("path"), py::arg("array"));

  m.def("synthesize", [](const std::string& scene_text, std::uint64_t seed) {
    const auto out = render_synthetic(build_scene(parse_scene(scene_text)), seed);
    py::dict d;
    d["left_t"] = out.left_t;
    d["left_t2"] = out.left_t2;
    d["right_t"] = out.right_t;
    d["gt_flow"] = field_array(out.gt_flow);
    d["gt_flow_valid"] = mask_to_numpy(out.gt_flow.valid);
    d["gt_disp"] = field_array(out.gt_disp);
    d["gt_disp_valid"] = mask_to_numpy(out.gt_disp.valid);
    d["dropped_events"] = out.dropped_events;
    return d;
  }, py::arg("scene"), py::arg("seed") = 0, "render a scene description to three event streams and ground truth");

  py::class_<ModelWeights>(m, "Weights")
      .def_property_readonly("names", [](const ModelWeights& w) {
        std::vector<std::string> names;
        for (const auto& [k, v] : w.tensors) names.push_back(k);
        return names;
      })
      .def("tensor", [](const ModelWeights& w, const std::string& name) { return to_numpy(w.get(name)); })
      .def("save", [](const ModelWeights& w, const std::filesystem::path& path) { write_file(path, save_weights(w)); })
      .def_property_readonly("config", [](const ModelWeights& w) {
        const auto c = infer_model_config(w);
        py::dict d;
        d["bins"] = c.bins;
        d["dim"] = c.dim;
        d["blocks"] = c.enhancement.num_blocks;
        return d;
      });
  m.def("init_weights", [](std::uint64_t seed, std::size_t dim, std::size_t blocks, std::size_t bins) {
    return init_weights(seed, model_config(dim, blocks, bins));
  }, py::arg("seed") = 0, py::arg("dim") = 128, py::arg("blocks") = 6, py::arg("bins") = kDefaultBins);
  m.def("load_weights", [](const std::filesystem::path& path) { return load_weights(read_file(path)); }, py::arg("path"));

  m.def(
      "estimate",
      [](const std::string& task, const FloatArray& voxels1, const FloatArray& voxels2, const ModelWeights& w,
         double temperature, std::optional<std::size_t> windows, std::optional<std::size_t> iterations, bool transformer,
         bool propagation, bool multiscale, bool refinement, bool refine_first) {
        PipelineConfig cfg;
        cfg.task = match_mode_from_string(task);
        cfg.model = infer_model_config(w);
        cfg.match.temperature = temperature;
        if (windows) cfg.model.enhancement.windows = *windows;
        if (iterations) (cfg.task == MatchMode::Flow ? cfg.model.refine.flow_iters : cfg.model.refine.disp_iters) = *iterations;
        cfg.stages = {transformer, propagation, multiscale, refinement};
        cfg.order = refine_first ? StageOrder::RefineThenPropagate : StageOrder::PropagateThenRefine;
        cfg.validate();
        auto grid = [](const FloatArray& a) {
          VoxelGrid v;
          v.data = from_numpy(a);
          if (v.data.ndim() != 3) throw ShapeError("voxel grid must be H x W x B, got " + shape_string(v.data.dims()));
          v.height = v.data.dim(0);
          v.width = v.data.dim(1);
          v.bins = v.data.dim(2);
          return v;
        };
        const auto v1 = grid(voxels1), v2 = grid(voxels2);
        PipelineResult r;
        {
          py::gil_scoped_release release;
          r = run(v1, v2, w, cfg);
        }
        py::list stages;
        for (const auto& s : r.stages) {
          py::dict st;
          st["name"] = s.name;
          st["scale"] = s.field.scale;
          st["field"] = field_array(s.field);
          stages.append(st);
        }
        py::dict out;
        out["field"] = field_array(r.final);
        out["valid"] = mask_to_numpy(r.final.valid);
        out["stages"] = stages;
        out["warnings"] = r.warnings;
        return out;
      },
      py::arg("task"), py::arg("voxels1"), py::arg("voxels2"), py::arg("weights"), py::kw_only(),
      py::arg("temperature") = 1.0, py::arg("windows") = py::none(), py::arg("iterations") = py::none(),
      py::arg("transformer") = true, py::arg("propagation") = true, py::arg("multiscale") = true,
      py::arg("refinement") = true, py::arg("refine_first") = false,
      "run the matching pipeline; task is 'flow' or 'disparity'");

  m.def("flow_metrics", [](const FloatArray& pred, const FloatArray& gt, const py::object& valid) {
    const auto g = field_from(gt, MatchMode::Flow, valid);
    return metrics_dict(flow_metrics(field_from(pred, MatchMode::Flow, py::none()), g, g.valid));
  }, py::arg("pred"), py::arg("gt"), py::arg("valid") = py::none());
  m.def("disparity_metrics", [](const FloatArray& pred, const FloatArray& gt, const py::object& valid) {
    const auto g = field_from(gt, MatchMode::Disparity, valid);
    return metrics_dict(disparity_metrics(field_from(pred, MatchMode::Disparity, py::none()), g, g.valid));
  }, py::arg("pred"), py::arg("gt"), py::arg("valid") = py::none());

  m.def("selfcheck", [](std::uint64_t seed, std::optional<std::string> broken) {
    SelfcheckReport r;
    {
      py::gil_scoped_release release;
      r = run_selfcheck(seed, broken);
    }
    py::list checks;
    for (const auto& c : r.checks) {
      py::dict d;
      d["name"] = c.name;
      d["passed"] = c.passed;
      d["measured"] = c.measured;
      d["tolerance"] = c.tolerance;
      d["detail"] = c.detail;
      d["seconds"] = c.seconds;
      checks.append(d);
    }
    py::dict out;
    out["seed"] = r.seed;
    out["passed"] = r.passed();
    out["seconds"] = r.seconds;
    out["checks"] = checks;
    return out;
  }, py::arg("seed") = 0, py::arg("broken") = py::none());
  m.def("selfcheck_names", &selfcheck_names);

  m.def("set_threads", &set_thread_count, py::arg("n"));
  m.def("set_deterministic", &set_deterministic, py::arg("on"));
  m.def("deterministic", &deterministic);

  m.def("cli", [](const std::vector<std::string>& args) {
    std::vector<std::string> full{"eventmatch"};
    full.insert(full.end(), args.begin(), args.end());
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = cli::run(full, out, err);
    }
    return py::make_tuple(code, out.str(), err.str());
  }, py::arg("args"), "run the command-line tool in-process; returns (exit code, stdout, stderr)");
}
