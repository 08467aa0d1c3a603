#include "cli.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "eventmatch/events.hpp"
#include "eventmatch/features.hpp"
#include "eventmatch/geometry.hpp"
#include "eventmatch/io.hpp"
#include "eventmatch/parallel.hpp"
#include "eventmatch/selfcheck.hpp"

namespace eventmatch::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kManifestVersion = 1;
constexpr int kEventFormatVersion = 1;

// Thrown for input that parses but cannot be used (exit code 2).
struct DataError : Error {
  using Error::Error;
};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

ojson versions() {
  return {{"manifest", kManifestVersion},
          {"events", kEventFormatVersion},
          {"tensor", "TNSR f32"},
          {"weights", kWeightsVersion}};
}

EventStream load_events(const fs::path& p) {
  const auto bytes = read_file(p);
  auto s = parse_events(bytes, detect_event_format(bytes));
  return s;
}

void write_field(const fs::path& p, const DisplacementField& d) {
  write_file(p, write_tensor(pack_displacement(d)));
  write_text_file(fs::path(p).concat(".json"), displacement_sidecar(d) + "\n");
}

DisplacementField read_field(const fs::path& p) {
  const Tensor t = read_tensor(read_file(p));
  if (t.ndim() != 3 || (t.dim(2) != 3 && t.dim(2) != 2))
    throw DataError(p.string() + " is not a displacement tensor (got " + shape_string(t.dims()) + ")");
  return unpack_displacement(t, t.dim(2) == 3 ? MatchMode::Flow : MatchMode::Disparity);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory " + dir.string());
}

// Standard colour wheel with 55 hues between the six primaries.
std::array<std::array<double, 3>, 55> colour_wheel() {
  std::array<std::array<double, 3>, 55> w{};
  const int segs[6] = {15, 6, 4, 11, 13, 6};
  int k = 0;
  for (int s = 0; s < 6; ++s)
    for (int i = 0; i < segs[s]; ++i, ++k) {
      const double f = static_cast<double>(i) / segs[s];
      switch (s) {
        case 0: w[k] = {1, f, 0}; break;
        case 1: w[k] = {1 - f, 1, 0}; break;
        case 2: w[k] = {0, 1, f}; break;
        case 3: w[k] = {0, 1 - f, 1}; break;
        case 4: w[k] = {f, 0, 1}; break;
        default: w[k] = {1, 0, 1 - f}; break;
      }
    }
  return w;
}

}  // namespace

std::string config_json(const PipelineConfig& c) {
  const auto& m = c.model;
  ojson j;
  j["task"] = to_string(c.task);
  j["model"] = {{"bins", m.bins},
                {"dim", m.dim},
                {"stem_channels", m.stem_channels},
                {"block1_channels", m.block1_channels},
                {"block2_channels", m.block2_channels},
                {"blocks", m.enhancement.num_blocks},
                {"windows", m.enhancement.windows},
                {"ffn_expansion", m.enhancement.ffn_expansion},
                {"flow_iters", m.refine.flow_iters},
                {"disp_iters", m.refine.disp_iters},
                {"gru_hidden", m.refine.gru_hidden},
                {"context_dim", m.refine.context_dim},
                {"lookup_radius", m.refine.lookup_radius},
                {"fine_windows", m.refine.fine_windows},
                {"local_radius", m.refine.local_radius}};
  j["match"] = {{"temperature", c.match.temperature}, {"scale_by_sqrt_dim", c.match.scale_by_sqrt_dim}};
  j["stages"] = {{"transformer", c.stages.transformer},
                 {"propagation", c.stages.propagation},
                 {"multiscale", c.stages.multiscale},
                 {"refinement", c.stages.refinement}};
  j["order"] = c.order == StageOrder::PropagateThenRefine ? "propagate-then-refine" : "refine-then-propagate";
  j["seed"] = c.seed;
  return j.dump();
}

std::string config_hash(const PipelineConfig& c) { return hex64(fnv1a(config_json(c))); }

std::string render_ppm(const DisplacementField& d) {
  const std::size_t h = d.height(), w = d.width();
  std::string out = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  out.reserve(out.size() + 3 * h * w);
  auto byte = [](double v) { return static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))); };
  if (d.mode == MatchMode::Flow) {
    static const auto wheel = colour_wheel();
    double maxr = 1e-9;
    for (std::size_t p = 0; p < h * w; ++p) maxr = std::max(maxr, std::hypot(static_cast<double>(d.data[2 * p]), static_cast<double>(d.data[2 * p + 1])));
    for (std::size_t p = 0; p < h * w; ++p) {
      const double u = d.data[2 * p], v = d.data[2 * p + 1];
      const double r = std::hypot(u, v) / maxr;
      const double a = std::atan2(-v, -u) / std::numbers::pi;  // in [-1, 1]
      const double fk = (a + 1.0) / 2.0 * (wheel.size() - 1);
      const std::size_t k0 = static_cast<std::size_t>(std::floor(fk)), k1 = (k0 + 1) % wheel.size();
      const double f = fk - k0;
      for (int c = 0; c < 3; ++c) {
        const double col = (1 - f) * wheel[k0][c] + f * wheel[k1][c];
        out += byte(1 - r * (1 - col));
      }
    }
  } else {
    double maxd = 1e-9;
    for (auto v : d.data.values()) maxd = std::max(maxd, static_cast<double>(v));
    for (std::size_t p = 0; p < h * w; ++p) {
      const char g = byte(d.data[p] / maxd);
      out += g;
      out += g;
      out += g;
    }
  }
  return out;
}

namespace {

struct Options {
  // shared
  std::uint64_t seed = 0;
  unsigned threads = 0;
  bool deterministic = false;
  bool json = false;
  // synth
  std::string scene, out_dir, event_format = "binary";
  // voxelize / init-weights / inference
  std::string events, output;
  std::size_t bins = kDefaultBins;
  std::size_t dim = 128;
  std::size_t blocks = 6;
  std::optional<std::size_t> windows;
  double temperature = 1.0;
  std::optional<std::size_t> flow_iters, disp_iters;
  std::string events_a, events_b, weights, ppm, dump_dir;
  bool no_transformer = false, no_propagation = false, no_multiscale = false, no_refinement = false;
  bool refine_first = false;
  // eval
  std::string pred, gt;
  // selfcheck
  std::string broken;
};

int cmd_synth(const Options& o, std::ostream& out, std::ostream& err) {
  const auto text = read_file(o.scene);
  const auto desc = parse_scene(std::string(text.begin(), text.end()));
  const auto scene = build_scene(desc);
  const auto result = render_synthetic(scene, o.seed);
  const fs::path dir(o.out_dir);
  ensure_dir(dir);
  const EventFormat fmt = o.event_format == "text" ? EventFormat::Text : EventFormat::Binary;
  const std::string ext = fmt == EventFormat::Text ? ".txt" : ".evt";
  write_file(dir / ("left_t" + ext), write_events(result.left_t, fmt));
  write_file(dir / ("left_t2" + ext), write_events(result.left_t2, fmt));
  write_file(dir / ("right_t" + ext), write_events(result.right_t, fmt));
  write_field(dir / "gt_flow.tnsr", result.gt_flow);
  write_field(dir / "gt_disp.tnsr", result.gt_disp);

  std::size_t valid = 0;
  for (auto v : result.gt_flow.valid.values()) valid += v != 0;
  ojson m;
  m["command"] = "synth";
  m["seed"] = o.seed;
  m["config_hash"] = hex64(fnv1a(write_scene(desc)));
  m["versions"] = versions();
  m["scene"] = write_scene(desc);
  m["files"] = {{"left_t", "left_t" + ext},   {"left_t2", "left_t2" + ext}, {"right_t", "right_t" + ext},
                {"gt_flow", "gt_flow.tnsr"}, {"gt_disp", "gt_disp.tnsr"}};
  m["events"] = {{"left_t", result.left_t.events.size()},
                 {"left_t2", result.left_t2.events.size()},
                 {"right_t", result.right_t.events.size()}};
  m["dropped_events"] = result.dropped_events;
  m["valid_pixels"] = valid;
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
  if (result.left_t.events.empty()) err << "warning: scene produced no events; ground truth is all invalid\n";
  if (o.json) out << m.dump() << "\n";
  return kOk;
}

int cmd_voxelize(const Options& o, std::ostream& out, std::ostream&) {
  const auto s = load_events(o.events);
  const auto v = build_voxel_grid(s, o.bins);
  write_file(o.output, write_tensor(v.data));
  if (o.json)
    out << ojson{{"height", v.height}, {"width", v.width}, {"bins", v.bins}, {"events", s.events.size()},
                 {"mass", voxel_mass(v)}}
               .dump()
        << "\n";
  return kOk;
}

int cmd_init_weights(const Options& o, std::ostream& out, std::ostream&) {
  ModelConfig c;
  c.bins = o.bins;
  c.dim = o.dim;
  c.enhancement.num_blocks = o.blocks;
  c.validate();
  const auto w = init_weights(o.seed, c);
  const auto bytes = save_weights(w);
  write_file(o.output, bytes);
  if (o.json)
    out << ojson{{"seed", o.seed}, {"tensors", w.tensors.size()}, {"bytes", bytes.size()}, {"version", w.version}}.dump()
        << "\n";
  return kOk;
}

int cmd_infer(const Options& o, MatchMode task, bool dim_given, bool blocks_given, bool bins_given, std::ostream& out,
              std::ostream& err) {
  const auto a = load_events(o.events_a), b = load_events(o.events_b);
  if (a.width != b.width || a.height != b.height)
    throw DataError("resolution mismatch: " + std::to_string(a.width) + "x" + std::to_string(a.height) + " vs " +
                    std::to_string(b.width) + "x" + std::to_string(b.height));
  if (!fs::exists(o.weights)) throw DataError("weights file " + o.weights + " not found");
  const auto w = load_weights(read_file(o.weights));

  PipelineConfig cfg;
  cfg.task = task;
  cfg.seed = o.seed;
  cfg.model = infer_model_config(w);
  if (dim_given && o.dim != cfg.model.dim)
    throw DataError("--dim " + std::to_string(o.dim) + " disagrees with the weights (" + std::to_string(cfg.model.dim) + ")");
  if (blocks_given && o.blocks != cfg.model.enhancement.num_blocks)
    throw DataError("--blocks disagrees with the weights (" + std::to_string(cfg.model.enhancement.num_blocks) + ")");
  if (bins_given && o.bins != cfg.model.bins)
    throw DataError("--bins disagrees with the weights (" + std::to_string(cfg.model.bins) + ")");
  if (o.windows) cfg.model.enhancement.windows = *o.windows;
  if (o.flow_iters) cfg.model.refine.flow_iters = *o.flow_iters;
  if (o.disp_iters) cfg.model.refine.disp_iters = *o.disp_iters;
  cfg.match.temperature = o.temperature;
  cfg.stages = {!o.no_transformer, !o.no_propagation, !o.no_multiscale, !o.no_refinement};
  cfg.order = o.refine_first ? StageOrder::RefineThenPropagate : StageOrder::PropagateThenRefine;
  cfg.validate();

  const auto v1 = build_voxel_grid(a, cfg.model.bins), v2 = build_voxel_grid(b, cfg.model.bins);
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = eventmatch::run(v1, v2, w, cfg);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& warning : r.warnings) err << "warning: " << warning << "\n";

  write_field(o.output, r.final);
  if (!o.ppm.empty()) {
    const auto img = render_ppm(r.final);
    write_file(o.ppm, as_bytes(img));
  }
  ojson stages = ojson::array();
  if (!o.dump_dir.empty()) {
    ensure_dir(o.dump_dir);
    for (std::size_t i = 0; i < r.stages.size(); ++i) {
      std::ostringstream name;
      name << std::setw(2) << std::setfill('0') << i << "_" << r.stages[i].name << ".tnsr";
      write_field(fs::path(o.dump_dir) / name.str(), r.stages[i].field);
      stages.push_back({{"name", r.stages[i].name}, {"file", name.str()}, {"scale", r.stages[i].field.scale}});
    }
  } else {
    for (const auto& s : r.stages) stages.push_back({{"name", s.name}, {"scale", s.field.scale}});
  }

  ojson m;
  m["command"] = to_string(task);
  m["seed"] = o.seed;
  m["config_hash"] = config_hash(cfg);
  m["config"] = ojson::parse(config_json(cfg));
  m["versions"] = versions();
  m["inputs"] = {{"a", o.events_a}, {"b", o.events_b}, {"weights", o.weights}};
  m["output"] = o.output;
  m["size"] = {v1.height, v1.width};
  m["stages"] = stages;
  m["warnings"] = r.warnings;
  m["seconds"] = seconds;
  write_text_file(fs::path(o.output).concat(".manifest.json"), m.dump(2) + "\n");
  if (o.json) out << m.dump() << "\n";
  return kOk;
}

int cmd_eval(const Options& o, MatchMode task, std::ostream& out) {
  const auto pred = read_field(o.pred), gt = read_field(o.gt);
  if (pred.mode != task || gt.mode != task)
    throw DataError(std::string("eval-") + (task == MatchMode::Flow ? "flow" : "disp") + " needs " + to_string(task) +
                    " fields");
  if (pred.data.dims() != gt.data.dims())
    throw DataError("prediction " + shape_string(pred.data.dims()) + " and ground truth " + shape_string(gt.data.dims()) +
                    " differ");
  const auto m = task == MatchMode::Flow ? flow_metrics(pred, gt, gt.valid) : disparity_metrics(pred, gt, gt.valid);
  if (o.json) {
    out << metrics_json(m) << "\n";
  } else {
    out << "valid " << m.valid << "\n";
    if (m.epe) out << "EPE " << *m.epe << "\nAE " << *m.ae << "\n";
    if (m.mae) out << "MAE " << *m.mae << "\nRMSE " << *m.rmse << "\n";
    for (auto [k, v] : m.npe) out << k << "PE " << v << "\n";
  }
  return kOk;
}

int cmd_selfcheck(const Options& o, std::ostream& out) {
  std::optional<std::string> broken;
  if (!o.broken.empty()) broken = o.broken;
  const auto r = run_selfcheck(o.seed, broken);
  out << (o.json ? selfcheck_json(r) + "\n" : selfcheck_text(r));
  return r.passed() ? kOk : kCheckFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Dense flow and disparity from event streams by feature matching", "eventmatch"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  auto common = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "random seed");
    c->add_option("--threads", o.threads, "kernel worker threads (0 = hardware)");
    c->add_flag("--deterministic", o.deterministic, "single-threaded, bitwise reproducible");
    c->add_flag("--json", o.json, "machine-readable report on stdout");
  };

  auto* synth = app.add_subcommand("synth", "render a synthetic scene to events and ground truth");
  synth->add_option("scene", o.scene, "scene description file")->required()->check(CLI::ExistingFile);
  synth->add_option("-o,--out", o.out_dir, "output directory")->required();
  synth->add_option("--format", o.event_format, "event file format")->check(CLI::IsMember({"text", "binary"}));
  common(synth);

  auto* vox = app.add_subcommand("voxelize", "build the H x W x B voxel grid of an event file");
  vox->add_option("events", o.events, "event file")->required()->check(CLI::ExistingFile);
  vox->add_option("-o,--out", o.output, "output TNSR file")->required();
  vox->add_option("--bins", o.bins, "temporal bins")->check(CLI::Range(2, 64));
  common(vox);

  auto* init = app.add_subcommand("init-weights", "write randomly initialized weights");
  init->add_option("-o,--out", o.output, "output weight archive")->required();
  init->add_option("--bins", o.bins, "temporal bins")->check(CLI::Range(2, 64));
  init->add_option("--dim", o.dim, "feature dimension")->check(CLI::Range(2, 4096));
  init->add_option("--blocks", o.blocks, "transformer blocks")->check(CLI::Range(0, 64));
  common(init);

  std::array<CLI::App*, 2> infer{};
  std::array<CLI::Option*, 2> dim_opt{}, blocks_opt{}, bins_opt{};
  for (int k = 0; k < 2; ++k) {
    const bool flow = k == 0;
    auto* c = app.add_subcommand(flow ? "flow" : "disparity",
                                 flow ? "optical flow between two event windows" : "disparity of a rectified stereo pair");
    c->add_option("a", o.events_a, flow ? "events at t" : "left events")->required()->check(CLI::ExistingFile);
    c->add_option("b", o.events_b, flow ? "events at t + dt" : "right events")->required()->check(CLI::ExistingFile);
    c->add_option("-w,--weights", o.weights, "weight archive")->required();
    c->add_option("-o,--out", o.output, "output displacement TNSR")->required();
    bins_opt[k] = c->add_option("--bins", o.bins, "temporal bins (must match the weights)");
    dim_opt[k] = c->add_option("--dim", o.dim, "feature dimension (must match the weights)");
    blocks_opt[k] = c->add_option("--blocks", o.blocks, "transformer blocks (must match the weights)");
    c->add_option("--windows", o.windows, "windows per side K at 1/8")->check(CLI::Range(1, 64));
    c->add_option("--temperature", o.temperature, "softmax temperature")->check(CLI::PositiveNumber);
    c->add_option("--flow-iters", o.flow_iters, "GRU iterations for flow");
    c->add_option("--disp-iters", o.disp_iters, "GRU iterations for disparity");
    c->add_flag("--no-transformer", o.no_transformer, "skip feature enhancement");
    c->add_flag("--no-propagation", o.no_propagation, "skip self-attention propagation");
    c->add_flag("--no-multiscale", o.no_multiscale, "skip the 1/4 local refinement");
    c->add_flag("--no-refinement", o.no_refinement, "skip GRU refinement");
    c->add_flag("--refine-first", o.refine_first, "propagate after the 1/4 refinement");
    c->add_option("--dump-stages", o.dump_dir, "directory for every intermediate field");
    c->add_option("--ppm", o.ppm, "colour visualization of the result");
    common(c);
    infer[k] = c;
  }

  std::array<CLI::App*, 2> evals{};
  for (int k = 0; k < 2; ++k) {
    auto* c = app.add_subcommand(k == 0 ? "eval-flow" : "eval-disp", "metrics of a prediction against ground truth");
    c->add_option("prediction", o.pred, "predicted displacement TNSR")->required()->check(CLI::ExistingFile);
    c->add_option("ground_truth", o.gt, "ground-truth displacement TNSR")->required()->check(CLI::ExistingFile);
    common(c);
    evals[k] = c;
  }

  auto* check = app.add_subcommand("selfcheck", "run the invariant suites");
  check->add_option("--break", o.broken, "inject a fault into one named check")
      ->check(CLI::IsMember(selfcheck_names()));
  common(check);

  std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }

  const bool was_deterministic = deterministic();
  const unsigned old_threads = thread_count();
  if (o.threads) set_thread_count(o.threads);
  if (o.deterministic) set_deterministic(true);
  int code = kOk;
  try {
    if (synth->parsed()) code = cmd_synth(o, out, err);
    else if (vox->parsed()) code = cmd_voxelize(o, out, err);
    else if (init->parsed()) code = cmd_init_weights(o, out, err);
    else if (check->parsed()) code = cmd_selfcheck(o, out);
    else
      for (int k = 0; k < 2; ++k) {
        if (infer[k]->parsed())
          code = cmd_infer(o, k == 0 ? MatchMode::Flow : MatchMode::Disparity, dim_opt[k]->count() > 0,
                           blocks_opt[k]->count() > 0, bins_opt[k]->count() > 0, out, err);
        if (evals[k]->parsed()) code = cmd_eval(o, k == 0 ? MatchMode::Flow : MatchMode::Disparity, out);
      }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    code = kData;
  }
  set_deterministic(was_deterministic);
  set_thread_count(old_threads);
  return code;
}

}  // namespace eventmatch::cli
