#include "occ4d/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "occ4d/baselines.hpp"
#include "occ4d/dataset.hpp"
#include "occ4d/io.hpp"
#include "occ4d/metrics.hpp"
#include "occ4d/scene.hpp"
#include "occ4d/synth.hpp"

namespace occ4d {
namespace {

namespace fs = std::filesystem;

// Runs fn(i) for i in [0, count) on `workers` threads; rethrows the first
// failure after all threads finish.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  const std::size_t w =
      std::min<std::size_t>(std::max(workers, 1), std::max<std::size_t>(count, 1));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex m;
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(m);
        if (!failure) failure = std::current_exception();
        next = count;
        return;
      }
    }
  };
  if (w <= 1) {
    run();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t k = 0; k < w; ++k) threads.emplace_back(run);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

AxisRange parse_range(const std::string& text, const char* flag) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) {
    throw ConfigError(std::string(flag) + " expects MIN,MAX, got \"" + text + "\"");
  }
  try {
    std::size_t used = 0;
    const double lo = std::stod(text.substr(0, comma), &used);
    if (used != comma) throw std::invalid_argument("trailing");
    const std::string hi_text = text.substr(comma + 1);
    const double hi = std::stod(hi_text, &used);
    if (used != hi_text.size()) throw std::invalid_argument("trailing");
    return {lo, hi};
  } catch (const std::logic_error&) {
    throw ConfigError(std::string(flag) + " expects MIN,MAX, got \"" + text + "\"");
  }
}

struct GridFlags {
  int np = 2;
  int nf = 4;
  double res = 0.2;
  std::string x = "-51.2,51.2";
  std::string y = "-51.2,51.2";
  std::string z = "-5,3";

  void add(CLI::App& app) {
    app.add_option("--np", np, "past frames")->capture_default_str();
    app.add_option("--nf", nf, "future frames")->capture_default_str();
    app.add_option("--res", res, "voxel size in meters")->capture_default_str();
    app.add_option("--x-range", x, "MIN,MAX in meters")->capture_default_str();
    app.add_option("--y-range", y, "MIN,MAX in meters")->capture_default_str();
    app.add_option("--z-range", z, "MIN,MAX in meters")->capture_default_str();
  }
  GridSpec spec() const {
    return GridSpec(parse_range(x, "--x-range"), parse_range(y, "--y-range"),
                    parse_range(z, "--z-range"), res, np, nf);
  }
};

// Expands directories to their files with `ext`, sorted by name.
std::vector<fs::path> expand_inputs(const std::vector<std::string>& inputs,
                                    const std::string& ext) {
  std::vector<fs::path> out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (fs::is_directory(p)) {
      std::vector<fs::path> found;
      for (const auto& e : fs::directory_iterator(p)) {
        if (e.is_regular_file() && e.path().extension() == ext) found.push_back(e.path());
      }
      std::sort(found.begin(), found.end());
      out.insert(out.end(), found.begin(), found.end());
    } else if (fs::exists(p)) {
      out.push_back(p);
    } else {
      throw ConfigError("input " + in + " does not exist");
    }
  }
  return out;
}

// Scene documents only: skips fine-label and cloud side files.
std::vector<fs::path> scene_documents(const std::vector<std::string>& inputs) {
  std::vector<fs::path> out;
  for (const auto& p : expand_inputs(inputs, ".json")) {
    if (p.extension() == ".json") out.push_back(p);
  }
  if (out.empty()) throw ConfigError("no scene documents found");
  return out;
}

std::vector<fs::path> sample_files(const std::string& input) {
  std::vector<fs::path> out = expand_inputs({input}, ".c4do");
  if (out.empty()) throw ConfigError("no samples (.c4do) found in " + input);
  return out;
}

std::string sample_stem(const std::string& scene_id, int present) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "_%04d", present);
  return scene_id + buf;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return "undefined";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << *v;
  return os.str();
}

int cmd_build(const std::vector<std::string>& scenes, const std::string& out_dir,
              const GridFlags& grid, const std::string& task, int workers,
              std::ostream& out) {
  const GridSpec spec = grid.spec();
  const TaskMode mode = parse_task_mode(task);
  fs::create_directories(out_dir);
  std::vector<std::shared_ptr<const Scene>> loaded;
  std::vector<SequenceWindow> windows;
  for (const auto& p : scene_documents(scenes)) {
    auto scene = std::make_shared<const Scene>(load_scene_document(p));
    for (const auto& w : split_scene(*scene, spec.n_past(), spec.n_future())) {
      windows.push_back(w);
    }
    loaded.push_back(std::move(scene));
  }
  parallel_for(windows.size(), workers, [&](std::size_t i) {
    const SequenceWindow& w = windows[i];
    const Sample s = build_sample(w, spec, mode);
    save_sample(sample_paths(out_dir, sample_stem(w.scene->id, w.present)), s);
  });
  out << "built " << windows.size() << " samples from " << loaded.size()
      << " scenes into " << out_dir << "\n";
  return 0;
}

int cmd_synth(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& out_dir, int count, std::ostream& out) {
  SynthConfig cfg = config_path.empty() ? SynthConfig{} : load_synth_config(config_path);
  if (seed) cfg.seed = *seed;
  if (count < 1) throw ConfigError("--count must be at least 1");
  fs::create_directories(out_dir);
  const std::string base_id = cfg.scene_id;
  const std::uint64_t base_seed = cfg.seed;
  for (int i = 0; i < count; ++i) {
    SynthConfig c = cfg;
    c.seed = base_seed + static_cast<std::uint64_t>(i);
    if (count > 1) c.scene_id = base_id + "_" + std::to_string(i);
    const SynthScene s = generate_scene(c);
    save_scene_document(fs::path(out_dir) / (c.scene_id + ".json"), s.scene);
  }
  out << "wrote " << count << " scene" << (count == 1 ? "" : "s") << " to "
      << out_dir << "\n";
  return 0;
}

struct BaselineArgs {
  std::string kind;
  std::string gt;
  std::string out;
  std::vector<std::string> scenes;
  std::string bev;
  double z_ground = kDefaultBevGround;
  double height = kDefaultBevHeight;
  int workers = 1;
};

int cmd_baseline(const BaselineArgs& a, std::ostream& out) {
  const std::vector<fs::path> gts = sample_files(a.gt);
  const bool needs_scene = a.kind == "cv" || a.kind == "points";
  std::map<std::string, std::shared_ptr<const Scene>> scenes;
  if (needs_scene) {
    if (a.scenes.empty()) {
      throw ConfigError("--kind " + a.kind + " needs --scene documents");
    }
    for (const auto& p : scene_documents(a.scenes)) {
      auto s = std::make_shared<const Scene>(load_scene_document(p));
      const std::string id = s->id;
      scenes.emplace(id, std::move(s));
    }
  }
  if (a.kind == "bev-lift" && a.bev.empty()) {
    throw ConfigError("--kind bev-lift needs --bev");
  }
  if (a.kind == "bev-lift" && !fs::is_directory(a.bev) && gts.size() != 1) {
    throw ConfigError("--bev must be a directory when several samples are given");
  }
  fs::create_directories(a.out);

  parallel_for(gts.size(), a.workers, [&](std::size_t i) {
    const SamplePaths gp = sample_paths(gts[i]);
    const Sample gt = load_sample(gp);
    const GridSpec& spec = gt.spec;
    Forecast f;
    if (a.kind == "static") {
      f = static_world(gt.occupancy.frame(0), spec.n_future());
    } else if (a.kind == "bev-lift") {
      const fs::path bev = fs::is_directory(a.bev)
                               ? fs::path(a.bev) / (gp.occupancy.stem().string() + ".c4db")
                               : fs::path(a.bev);
      f = lift_bev_sequence(load_bev_file(bev), a.z_ground, a.height, spec);
    } else {
      const auto it = scenes.find(gt.meta.scene_id);
      if (it == scenes.end()) {
        throw ConfigError("sample " + gp.occupancy.string() + " refers to scene \"" +
                          gt.meta.scene_id + "\", which was not given with --scene");
      }
      const SequenceWindow w{it->second.get(), gt.meta.present_index, spec.n_past(),
                             spec.n_future()};
      const PreparedWindow prepared = prepare_window(w, spec);
      if (a.kind == "cv") {
        f = constant_velocity_forecast(prepared.frame, spec);
      } else {
        std::vector<LabeledPointCloud> clouds;
        for (int t = 0; t <= spec.n_future(); ++t) {
          const auto& c = prepared.frame.clouds.empty()
                              ? std::optional<LabeledPointCloud>{}
                              : prepared.frame.clouds[t + spec.n_past()];
          if (!c) {
            throw ConfigError("scene \"" + gt.meta.scene_id +
                              "\" has no labeled point cloud for frame " +
                              std::to_string(w.present + t));
          }
          clouds.push_back(*c);
        }
        f = voxelize_labeled_points(clouds, spec);
      }
    }
    const SamplePaths op = sample_paths(a.out, gp.occupancy.stem().string());
    save_grid_file(op.occupancy, f.occupancy, gt.mode);
    if (f.flows) save_flow_file(op.flow, *f.flows, gt.mode);
  });
  out << "wrote " << gts.size() << " " << a.kind << " forecasts to " << a.out << "\n";
  return 0;
}

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string task;
  std::string report;
  std::string csv;
  double vpq_threshold = kDefaultVpqThreshold;
  double nms_radius = AssocOptions{}.nms_radius;
  double assoc_radius = AssocOptions{}.assoc_radius;
  double min_prob = AssocOptions{}.min_prob;
  bool no_vpq = false;
  int workers = 1;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const std::vector<fs::path> gts = sample_files(a.gt);
  const bool pred_dir = fs::is_directory(a.pred);
  if (!pred_dir && gts.size() != 1) {
    throw ConfigError("--pred must be a directory when several samples are given");
  }
  std::vector<fs::path> preds;
  for (const auto& g : gts) {
    const fs::path p = pred_dir ? fs::path(a.pred) / g.filename()
                                : sample_paths(fs::path(a.pred)).occupancy;
    if (!fs::exists(p)) throw ConfigError("missing forecast " + p.string());
    preds.push_back(p);
  }

  EvalOptions opts;
  if (a.task.empty()) {
    opts.mode = decode_grid_file(read_file_bytes(gts.front())).mode;
  } else {
    opts.mode = parse_task_mode(a.task);
  }
  opts.vpq_threshold = a.vpq_threshold;
  opts.assoc.nms_radius = a.nms_radius;
  opts.assoc.assoc_radius = a.assoc_radius;
  opts.assoc.min_prob = a.min_prob;
  opts.compute_vpq = !a.no_vpq;

  const PairLoader load = [&](std::size_t i) {
    auto gt = std::make_shared<Sample>(load_sample(sample_paths(gts[i])));
    const fs::path flow = sample_paths(preds[i]).flow;
    auto pred = std::make_shared<Forecast>(load_external_forecast(
        preds[i].string(), gt->spec, fs::exists(flow) ? flow.string() : ""));
    return EvalPair{std::move(pred), std::move(gt)};
  };
  const EvalReport r = evaluate_dataset(gts.size(), load, opts, a.workers);

  if (!a.report.empty()) {
    if (fs::path(a.report).extension() == ".csv") {
      save_report_csv(a.report, r);
    } else {
      save_report_json(a.report, r);
    }
  }
  if (!a.csv.empty()) save_report_csv(a.csv, r);

  out << "task " << task_mode_name(r.mode) << ", " << r.sample_count << " samples\n";
  for (const auto& c : r.classes) {
    out << label_name(c.label) << ": IoU_c " << fmt(c.iou_current) << "  IoU_f "
        << fmt(c.iou_future) << "  discounted " << fmt(c.iou_discounted) << "\n";
  }
  if (r.classes.size() > 1) {
    out << "mean: IoU_c " << fmt(r.mean_iou_current) << "  IoU_f "
        << fmt(r.mean_iou_future) << "\n";
  }
  out << "VPQ " << fmt(r.vpq) << "\n";
  return 0;
}

int cmd_stats(const std::vector<std::string>& scenes, const GridFlags& grid,
              const std::string& out_path, std::ostream& out) {
  const GridSpec spec = grid.spec();
  DurationHistogram hist;
  std::size_t windows = 0;
  for (const auto& p : scene_documents(scenes)) {
    const Scene scene = load_scene_document(p);
    std::vector<PresentFrameWindow> filtered;
    for (const auto& w : split_scene(scene, spec.n_past(), spec.n_future())) {
      filtered.push_back(prepare_window(w, spec).frame);
    }
    windows += filtered.size();
    hist.merge(instance_duration_stats(filtered));
  }
  std::ostringstream os;
  os << "t_in,t_out,count,fraction\n";
  for (const auto& [key, n] : hist.buckets()) {
    os << key.first << ',' << key.second << ',' << n << ','
       << hist.fraction(key.first, key.second) << '\n';
  }
  if (out_path.empty()) {
    out << os.str();
  } else {
    std::ofstream f(out_path);
    if (!f) throw FormatError("cannot write " + out_path);
    f << os.str();
  }
  out << "# " << hist.total() << " instances over " << windows << " windows\n";
  return 0;
}

int cmd_inspect(const std::string& path, const std::string& export_path,
                std::ostream& out) {
  const SamplePaths paths = sample_paths(fs::path(path));
  const GridFileData grid = load_grid_file(paths.occupancy);
  const OccupancySequence& seq = grid.frames;
  out << "sample " << paths.occupancy.string() << "\n";
  out << "task " << task_mode_name(grid.mode) << "\n";
  out << "grid " << seq.spec().describe() << "\n";
  out << "frames " << seq.frame_count() << ", instance IDs "
      << (seq.has_instance_ids() ? "yes" : "no") << "\n";
  std::optional<FlowFileData> flow;
  if (fs::exists(paths.flow)) flow = load_flow_file(paths.flow);
  for (int t = 0; t < seq.frame_count(); ++t) {
    const OccupancyGrid& g = seq.frame(t);
    std::set<std::uint16_t> ids;
    for (std::uint16_t id : g.instance_ids()) {
      if (id != 0) ids.insert(id);
    }
    out << "t=" << t << "  GMO " << count_label(g, SemanticLabel::GMO) << "  GSO "
        << count_label(g, SemanticLabel::GSO) << "  instances " << ids.size();
    if (flow && t < static_cast<int>(flow->flows.size())) {
      out << "  flow " << flow->flows[t].valid_count();
    }
    out << "\n";
  }
  if (fs::exists(paths.meta)) {
    const Sample s = load_sample(paths);
    out << "scene " << s.meta.scene_id << ", present frame " << s.meta.present_index
        << ", " << s.meta.instances.size() << " retained instances\n";
  }
  if (!export_path.empty()) {
    std::ofstream f(export_path);
    if (!f) throw FormatError("cannot write " + export_path);
    f << export_voxels_csv(seq);
    out << "exported voxels to " << export_path << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err) {
  CLI::App app{"4D occupancy forecasting benchmark toolkit", "occ4d"};
  app.require_subcommand(1);

  int workers = 1;

  auto* build = app.add_subcommand("build", "turn scene documents into samples");
  std::vector<std::string> build_scenes;
  std::string build_out;
  std::string build_task = "inflated-gmo";
  GridFlags build_grid;
  build->add_option("--scene", build_scenes, "scene documents or directories")->required();
  build->add_option("--out", build_out, "output directory")->required();
  build->add_option("--task", build_task,
                    "inflated-gmo | fine-gmo | inflated-gmo-gso | fine-gmo-gso")
      ->capture_default_str();
  build_grid.add(*build);
  build->add_option("--workers", workers, "worker threads")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "generate synthetic scene documents");
  std::string synth_config;
  std::uint64_t synth_seed = 0;
  std::string synth_out;
  int synth_count = 1;
  synth->add_option("--config", synth_config, "JSON generator config");
  auto* seed_opt = synth->add_option("--seed", synth_seed, "overrides the config seed");
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--count", synth_count, "scenes to generate (seeds seed, seed+1, ...)")
      ->capture_default_str();

  auto* baseline = app.add_subcommand("baseline", "run a non-learned baseline");
  BaselineArgs ba;
  baseline->add_option("--kind", ba.kind, "static | cv | bev-lift | points")
      ->required()
      ->check(CLI::IsMember({"static", "cv", "bev-lift", "points"}));
  baseline->add_option("--gt", ba.gt, "sample file or directory")->required();
  baseline->add_option("--out", ba.out, "output directory")->required();
  baseline->add_option("--scene", ba.scenes, "scene documents (cv, points)");
  baseline->add_option("--bev", ba.bev, "BEV file or directory of <stem>.c4db (bev-lift)");
  baseline->add_option("--z-ground", ba.z_ground, "BEV lift floor in meters")
      ->capture_default_str();
  baseline->add_option("--height", ba.height, "BEV lift height in meters")
      ->capture_default_str();
  baseline->add_option("--workers", workers, "worker threads")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "score forecasts against samples");
  EvalArgs ea;
  eval->add_option("--pred", ea.pred, "forecast file or directory")->required();
  eval->add_option("--gt", ea.gt, "sample file or directory")->required();
  eval->add_option("--task", ea.task, "task level (default: from the samples)");
  eval->add_option("--report", ea.report, "report path (.json, or .csv for the table)");
  eval->add_option("--csv", ea.csv, "additional per-step table");
  eval->add_option("--vpq-threshold", ea.vpq_threshold, "TP IoU threshold (strict)")
      ->capture_default_str();
  eval->add_option("--nms-radius", ea.nms_radius, "center suppression radius in meters")
      ->capture_default_str();
  eval->add_option("--assoc-radius", ea.assoc_radius, "flow association radius in meters")
      ->capture_default_str();
  eval->add_option("--min-prob", ea.min_prob, "minimum center score")->capture_default_str();
  eval->add_flag("--no-vpq", ea.no_vpq, "skip instance metrics");
  eval->add_option("--workers", workers, "worker threads")->capture_default_str();

  auto* stats = app.add_subcommand("stats", "instance-duration histogram");
  std::vector<std::string> stats_scenes;
  std::string stats_out;
  GridFlags stats_grid;
  stats->add_option("--scene", stats_scenes, "scene documents or directories")->required();
  stats->add_option("--out", stats_out, "write the table here instead of stdout");
  stats_grid.add(*stats);

  auto* inspect = app.add_subcommand("inspect", "summarize a sample");
  std::string inspect_path;
  std::string inspect_export;
  inspect->add_option("sample", inspect_path, "sample .c4do or stem")->required();
  inspect->add_option("--export-voxels", inspect_export, "write a voxel list (CSV)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    CLI::App* shown = &app;
    for (auto* sub : app.get_subcommands()) shown = sub;
    out << shown->help();
    return 0;
  } catch (const CLI::ParseError& e) {
    CLI::App* shown = &app;
    for (auto* sub : app.get_subcommands()) shown = sub;
    err << "error: " << e.what() << "\n\n" << shown->help();
    return 2;
  }

  try {
    if (build->parsed()) {
      return cmd_build(build_scenes, build_out, build_grid, build_task, workers, out);
    }
    if (synth->parsed()) {
      std::optional<std::uint64_t> seed;
      if (seed_opt->count() > 0) seed = synth_seed;
      return cmd_synth(synth_config, seed, synth_out, synth_count, out);
    }
    if (baseline->parsed()) {
      ba.workers = workers;
      return cmd_baseline(ba, out);
    }
    if (eval->parsed()) {
      ea.workers = workers;
      return cmd_eval(ea, out);
    }
    if (stats->parsed()) return cmd_stats(stats_scenes, stats_grid, stats_out, out);
    if (inspect->parsed()) return cmd_inspect(inspect_path, inspect_export, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace occ4d
