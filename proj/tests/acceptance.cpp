// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "occ4d/baselines.hpp"
#include "occ4d/cli.hpp"
#include "occ4d/dataset.hpp"
#include "occ4d/instance_assoc.hpp"
#include "occ4d/io.hpp"
#include "occ4d/metrics.hpp"
#include "occ4d/synth.hpp"
#include "support.hpp"

using namespace occ4d;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_++ < 3) first_ += (first_.empty() ? "" : "; ") + what;
  }
  Outcome done(const std::string& summary) const {
    if (failures_ == 0) return {true, summary};
    return {false, std::to_string(failures_) + " failed checks: " + first_};
  }

 private:
  int failures_ = 0;
  std::string first_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int prec = 3) {
  std::ostringstream os;
  os.precision(prec);
  os << std::fixed << v;
  return os.str();
}

Sample first_sample(const Scene& scene, const GridSpec& spec, TaskMode mode) {
  return build_sample(split_scene(scene, spec.n_past(), spec.n_future()).front(), spec, mode);
}

EvalReport score(const Forecast& f, const Sample& gt, bool vpq = false) {
  EvalOptions opt;
  opt.mode = gt.mode;
  opt.compute_vpq = vpq;
  EvalAccumulator acc(gt.mode, gt.spec.n_future());
  acc.add(f, gt, opt);
  return acc.report();
}

// Set-based IoU with no shared code path.
std::optional<double> brute_iou(const OccupancyGrid& p, const OccupancyGrid& g, SemanticLabel l) {
  std::set<std::tuple<int, int, int>> a, b;
  const GridSpec& s = p.spec();
  for (int x = 0; x < s.nx(); ++x) {
    for (int y = 0; y < s.ny(); ++y) {
      for (int z = 0; z < s.nz(); ++z) {
        if (p.at({x, y, z}) == l) a.insert({x, y, z});
        if (g.at({x, y, z}) == l) b.insert({x, y, z});
      }
    }
  }
  std::size_t inter = 0;
  for (const auto& v : a) inter += b.count(v);
  const std::size_t uni = a.size() + b.size() - inter;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

Outcome ac1() {
  Check c;
  testing::Rng rng(1001);
  const GridSpec spec = testing::small_spec(16, 16, 8);
  const auto t0 = std::chrono::steady_clock::now();
  for (int k = 0; k < 200; ++k) {
    const OccupancyGrid p = testing::random_grid(spec, rng, rng.uniform(0, 0.6), rng.uniform(0, 0.3));
    const OccupancyGrid g = testing::random_grid(spec, rng, rng.uniform(0, 0.6), rng.uniform(0, 0.3));
    for (SemanticLabel l : {SemanticLabel::GMO, SemanticLabel::GSO}) {
      const auto got = iou_single(p, g, l);
      const auto want = brute_iou(p, g, l);
      c.expect(got.has_value() == want.has_value() && (!got || *got == *want),
               "pair " + std::to_string(k));
    }
  }
  const GridSpec seq_spec = testing::small_spec(16, 16, 8, 2, 4);
  for (int k = 0; k < 200; ++k) {
    std::vector<OccupancyGrid> pf, gf;
    for (int t = 0; t <= 4; ++t) {
      pf.push_back(testing::random_grid(seq_spec, rng, rng.uniform(0, 0.4), 0.1));
      gf.push_back(testing::random_grid(seq_spec, rng, rng.uniform(0, 0.4), 0.1));
    }
    const OccupancySequence p(pf), g(gf);
    const FutureIoU f = iou_future(p, g, SemanticLabel::GMO);
    double sum = 0.0;
    int defined = 0;
    for (int t = 1; t <= 4; ++t) {
      const auto want = brute_iou(pf[t], gf[t], SemanticLabel::GMO);
      const auto& got = f.per_step[t - 1];
      c.expect(got.has_value() == want.has_value() && (!got || *got == *want),
               "sequence " + std::to_string(k) + " step " + std::to_string(t));
      if (want) {
        sum += *want;
        ++defined;
      }
    }
    c.expect(defined > 0 && f.mean && std::abs(*f.mean - sum / defined) < 1e-15,
             "sequence " + std::to_string(k) + " mean");
  }
  const double s = seconds_since(t0);
  c.expect(s < 10.0, "took " + num(s) + " s");
  return c.done("200 pairs and 200 sequences match the set oracle exactly in " + num(s) + " s");
}

Outcome ac2() {
  Check c;
  c.expect(std::abs(iou_discounted(std::vector<double>{1, 0, 0, 0}) - 25.0 / 48.0) < 1e-12, "{1,0,0,0}");
  c.expect(std::abs(iou_discounted(std::vector<double>{0, 0, 0, 1}) - 1.0 / 16.0) < 1e-12, "{0,0,0,1}");
  testing::Rng rng(1002);
  for (int k = 0; k < 100; ++k) {
    const double v = rng.uniform();
    c.expect(std::abs(iou_discounted(std::vector<double>{v, v, v, v}) - v) < 1e-12, "{c,c,c,c}");
  }
  for (int k = 0; k < 1000; ++k) {
    const int n = 1 + rng.below(8);
    std::vector<double> v(n);
    double cur = rng.uniform();
    for (double& x : v) {
      x = cur;
      cur *= rng.uniform();
    }
    double mean = 0.0, direct = 0.0, prefix = 0.0;
    for (int t = 0; t < n; ++t) {
      mean += v[t] / n;
      prefix += v[t];
      direct += prefix / (t + 1) / n;
    }
    const double d = iou_discounted(v);
    c.expect(std::abs(d - direct) <= 1e-12, "sequence " + std::to_string(k) + " value");
    c.expect(d >= mean - 1e-12 && d <= v[0] + 1e-12, "sequence " + std::to_string(k) + " bounds");
  }
  return c.done("[c,c,c,c] -> c, [1,0,0,0] -> 25/48; discounted >= IoU_f on 1000 non-increasing sequences");
}

Outcome ac3() {
  Check c;
  const GridSpec spec = testing::scaled_spec();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const SynthScene s = generate_scene(testing::scaled_config(3000 + seed, MotionKind::Static, 5));
    const Sample gt = first_sample(s.scene, spec, TaskMode::InflatedGMO);
    const EvalReport r = score(static_world(gt.occupancy.frame(0), spec.n_future()), gt);
    const ClassReport& g = r.classes.front();
    c.expect(g.iou_current == 1.0 && g.iou_future == 1.0 && g.iou_discounted == 1.0,
             "seed " + std::to_string(seed));
  }
  return c.done("static world scores IoU_c = IoU_f = discounted IoU = 1.0 on 20 static scenes");
}

Outcome ac4() {
  Check c;
  const GridSpec spec = testing::scaled_spec();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SynthConfig cfg = testing::scaled_config(4000 + seed, MotionKind::ConstantVelocity, 5);
    cfg.ego.motion = MotionKind::ConstantVelocity;
    cfg.ego.velocity = Vec3(1.0, 0.4, 0.0);
    cfg.ego.yaw = 0.1 * static_cast<double>(seed);
    const SynthScene s = generate_scene(cfg);
    const SequenceWindow w = split_scene(s.scene, 2, 4).front();
    const Sample gt = build_sample(w, spec, TaskMode::InflatedGMO);
    const Forecast f = constant_velocity_forecast(prepare_window(w, spec).frame, spec);
    const EvalReport r = score(f, gt);
    c.expect(r.classes.front().iou_future == 1.0, "seed " + std::to_string(seed) + " IoU_f");
    for (int t = 0; t <= 4; ++t) {
      const FlowVolume a = analytic_flow(s.truth, w.present, 2, gt.occupancy.frame(t), t);
      const FlowVolume& p = gt.flows[t];
      const bool same = a.valid_count() == p.valid_count() &&
                        std::equal(a.valid_indices().begin(), a.valid_indices().end(),
                                   p.valid_indices().begin());
      c.expect(same, "seed " + std::to_string(seed) + " flow mask t=" + std::to_string(t));
      if (!same) continue;
      for (std::size_t k = 0; k < a.valid_count(); ++k) {
        worst = std::max(worst, (a.valid_vectors()[k] - p.valid_vectors()[k]).norm());
      }
    }
  }
  c.expect(worst <= 1e-9, "flow error " + std::to_string(worst));
  std::ostringstream os;
  os << "constant velocity IoU_f = 1.0 on 20 scenes; max flow error " << worst << " m";
  return c.done(os.str());
}

void block(OccupancyGrid& g, int x0, int x1, int y0, int y1, std::uint16_t id) {
  for (int x = x0; x < x1; ++x) {
    for (int y = y0; y < y1; ++y) g.set(VoxelIndex{x, y, 0}, SemanticLabel::GMO, id);
  }
}

Outcome ac5() {
  Check c;
  const GridSpec spec = testing::small_spec(16, 16, 1, 0, 4);
  auto two = [&](std::uint16_t a, std::uint16_t b) {
    OccupancySequence s = OccupancySequence::empty(spec, true);
    for (int t = 0; t < 5; ++t) {
      block(s.frame(t), 0, 3, 0, 3, a);
      block(s.frame(t), 10, 13, 10, 13, b);
    }
    return s;
  };
  const OccupancySequence gt = two(1, 2);
  c.expect(vpq(two(7, 8), gt) == 1.0, "perfect");
  c.expect(vpq(OccupancySequence::empty(spec, true), gt) == 0.0, "empty forecast");
  OccupancySequence swapped = two(7, 8);
  for (int t = 1; t < 5; ++t) swapped.frame(t) = two(8, 7).frame(t);
  const auto sv = vpq(swapped, gt);
  c.expect(sv && std::abs(*sv - 1.0 / 5.0) < 1e-12, "swap");
  const GridSpec one = testing::small_spec(10, 10, 1, 0, 0);
  OccupancySequence big = OccupancySequence::empty(one, true);
  block(big.frame(0), 0, 10, 0, 10, 1);
  OccupancySequence low = OccupancySequence::empty(one, true);
  block(low.frame(0), 0, 10, 0, 1, 4);  // 19 voxels: IoU 0.19
  block(low.frame(0), 0, 9, 1, 2, 4);
  OccupancySequence onthr = OccupancySequence::empty(one, true);
  block(onthr.frame(0), 0, 10, 0, 2, 4);  // exactly 0.2
  c.expect(vpq_tallies(low, big)[0].tp == 0, "IoU 0.19");
  c.expect(vpq_tallies(onthr, big)[0].tp == 0, "IoU 0.2");
  return c.done("perfect 1, empty 0, swap 1/(Nf+1), IoU 0.19 and 0.2 rejected");
}

Outcome ac6() {
  Check c;
  const GridSpec spec = testing::scaled_spec();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MotionKind m = seed % 2 ? MotionKind::ConstantTurn : MotionKind::ConstantVelocity;
    const SynthScene s = generate_scene(testing::scaled_config(6000 + seed, m, 5));
    const Sample gt = first_sample(s.scene, spec, TaskMode::InflatedGMO);
    OccupancySequence bare = gt.occupancy;
    for (int t = 0; t < bare.frame_count(); ++t) bare.frame(t).drop_instance_ids();
    const AssociationResult r = assign_instance_ids(bare, gt.flows);
    c.expect(vpq(r.ids, gt.occupancy) == 1.0, "seed " + std::to_string(seed));
  }
  return c.done("flow association from ground-truth flows gives VPQ 1.0 on 20 scenes");
}

Scene blank_scene(int frames) {
  Scene s;
  s.id = "ac7";
  for (int k = 0; k < frames; ++k) {
    s.timestamps.push_back(0.5 * k);
    s.ego.push_back(Pose::identity());
  }
  return s;
}

InstanceTrack steady(std::uint32_t id, int first, int last, Vec3 c, Vec3 step, double vis) {
  InstanceTrack t;
  t.id = id;
  for (int k = first; k <= last; ++k) {
    BoxState b;
    b.center = c + step * (k - first);
    b.size = Vec3(4, 2, 1.5);
    b.visibility = vis;
    t.states.emplace(k, b);
  }
  return t;
}

Outcome ac7() {
  Check c;
  c.expect(split_scene(blank_scene(40), 2, 4).size() == 34, "40-frame scene");
  // Each crafted scene holds two well-behaved tracks and one rule violator.
  struct Case {
    const char* name;
    InstanceTrack track;
    FilterRule rule;
  };
  const std::vector<Case> cases{
      {"R1", steady(9, 1, 6, Vec3(0, 0, 0), Vec3::Zero(), 0.3), FilterRule::LowVisibilityNewcomer},
      {"R2", steady(9, 3, 6, Vec3(0, 0, 0), Vec3::Zero(), 1.0), FilterRule::AppearsInFuture},
      {"R3", steady(9, 0, 6, Vec3(46, 0, 0), Vec3(2, 0, 0), 1.0), FilterRule::LeavesRange},
  };
  for (const auto& cs : cases) {
    Scene s = blank_scene(7);
    s.tracks.push_back(steady(1, 0, 6, Vec3(-10, 0, 0), Vec3::Zero(), 0.1));  // old, low visibility
    s.tracks.push_back(steady(2, 1, 6, Vec3(-20, 5, 0), Vec3(1, 0, 0), 0.5));  // newcomer, visible
    s.tracks.push_back(cs.track);
    const PreparedWindow w = prepare_window(split_scene(s, 2, 4).front(), GridSpec{});
    const bool ok = w.removed.size() == 1 && w.removed[0].first == 9 &&
                    w.removed[0].second == cs.rule && w.frame.tracks.size() == 2;
    c.expect(ok, cs.name);
  }
  return c.done("34 windows from 40 frames; R1, R2 and R3 scenes each exclude exactly the intended instance");
}

Outcome ac8() {
  Check c;
  const GridSpec spec;
  BoxState cube;
  cube.center = Vec3(0, 0, -1);
  cube.size = Vec3(1, 1, 1);
  c.expect(voxelize_box(cube, spec).size() == 125, "unit cube covers " +
           std::to_string(voxelize_box(cube, spec).size()));
  testing::Rng rng(1008);
  const double margin = spec.resolution() * std::sqrt(3.0) / 2.0 + 1e-6;
  std::size_t disagreements = 0;
  for (int k = 0; k < 100; ++k) {
    BoxState b;
    b.center = Vec3(rng.uniform(-40, 40), rng.uniform(-40, 40), rng.uniform(-2, 0));
    b.size = Vec3(rng.uniform(1.0, 6.0), rng.uniform(1.0, 3.0), rng.uniform(1.0, 2.5));
    b.yaw = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const auto vox = voxelize_box_linear(b, spec);
    const std::set<std::size_t> set(vox.begin(), vox.end());
    const Vec3 h = 0.5 * b.size;
    const Vec3 inner = h - Vec3::Constant(margin);
    const Vec3 outer = h + Vec3::Constant(margin);
    auto to_world = [&](const Vec3& l) {
      return Vec3(b.center.x() + std::cos(b.yaw) * l.x() - std::sin(b.yaw) * l.y(),
                  b.center.y() + std::sin(b.yaw) * l.x() + std::cos(b.yaw) * l.y(),
                  b.center.z() + l.z());
    };
    for (int n = 0; n < 10000; ++n) {
      const bool interior = n % 2 == 0;
      Vec3 l;
      if (interior) {
        l = Vec3(rng.uniform(-inner.x(), inner.x()), rng.uniform(-inner.y(), inner.y()),
                 rng.uniform(-inner.z(), inner.z()));
      } else {
        do {
          l = Vec3(rng.uniform(-outer.x() - 1, outer.x() + 1), rng.uniform(-outer.y() - 1, outer.y() + 1),
                   rng.uniform(-outer.z() - 1, outer.z() + 1));
        } while ((l.cwiseAbs() - outer).maxCoeff() <= 0.0);
      }
      const auto idx = world_to_voxel(to_world(l), spec);
      if (!idx) {
        ++disagreements;  // every sampled point lies inside the grid
        continue;
      }
      if ((set.count(linear_index(spec, *idx)) != 0) != interior) ++disagreements;
    }
  }
  c.expect(disagreements == 0, std::to_string(disagreements) + " point disagreements");
  return c.done("unit cube = 125 voxels; 10^6 interior/exterior points over 100 oriented boxes, 0 disagreements");
}

Outcome ac9() {
  Check c;
  testing::TempDir dir("accept_io");
  const GridSpec spec = testing::scaled_spec();
  int samples = 0;
  for (std::uint64_t seed = 0; samples < 50; ++seed) {
    SynthConfig cfg = testing::scaled_config(9000 + seed, MotionKind::ConstantTurn, 4, 11);
    cfg.fine_labels = true;
    cfg.obstacle_count = 1;
    const SynthScene s = generate_scene(cfg);
    for (const auto& w : split_scene(s.scene, 2, 4)) {
      if (samples == 50) break;
      const TaskMode mode = static_cast<TaskMode>(samples % 4);
      const Sample sample = build_sample(w, spec, mode);
      const SamplePaths p = sample_paths(dir.path(), "s" + std::to_string(samples));
      save_sample(p, sample);
      const Sample back = load_sample(p);
      const bool ok = back.occupancy == sample.occupancy && back.meta == sample.meta &&
                      back.mode == sample.mode && back.spec == sample.spec &&
                      encode_flow_file(back.flows, mode) == encode_flow_file(sample.flows, mode);
      c.expect(ok, "sample " + std::to_string(samples));
      ++samples;
    }
  }

  // Corrupted copies of one forecast.
  const SamplePaths gt = sample_paths(dir.path(), "s0");
  const auto good = read_file_bytes(gt.occupancy);
  std::vector<std::pair<std::string, std::vector<std::uint8_t>>> cases;
  auto bytes = good;
  bytes[1] = '?';
  cases.push_back({"magic", bytes});
  bytes = good;
  bytes[4] = 9;
  cases.push_back({"version", bytes});
  bytes.assign(good.begin(), good.end() - 100);
  cases.push_back({"truncated", bytes});
  bytes.assign(good.begin(), good.begin() + 30);
  cases.push_back({"header", bytes});
  bytes = good;
  bytes[kHeaderBytes + 10] = 3;
  cases.push_back({"label", bytes});
  for (const auto& [name, data] : cases) {
    bool threw = false;
    try {
      decode_grid_file(data);
    } catch (const FormatError&) {
      threw = true;
    }
    c.expect(threw, name + " decoded");
    const fs::path pd = dir / ("pred_" + name);
    fs::create_directories(pd);
    write_file_bytes(pd / "s0.c4do", data);
    std::ostringstream out, err;
    const int rc = run_cli({"eval", "--pred", pd.string(), "--gt", gt.occupancy.string()}, out, err);
    c.expect(rc != 0 && err.str().find("error:") == 0, name + " accepted by eval");
  }
  return c.done("50 samples round-trip; magic, version, truncation, header and label corruption rejected");
}

Outcome ac10() {
  Check c;
  const GridSpec spec;
  SynthConfig cfg;
  cfg.seed = 10010;
  cfg.scene_id = "full";
  cfg.frame_count = 7;
  cfg.instance_count = 20;
  cfg.ego.motion = MotionKind::ConstantVelocity;
  cfg.ego.velocity = Vec3(5, 0, 0);
  const SynthScene s = generate_scene(cfg);
  const SequenceWindow w = split_scene(s.scene, 2, 4).front();
  auto t0 = std::chrono::steady_clock::now();
  auto gt = std::make_shared<Sample>(build_sample(w, spec, TaskMode::InflatedGMO));
  const double build_s = seconds_since(t0);
  c.expect(build_s < 2.0, "build took " + num(build_s) + " s");

  // A second distinct pair so that workers do not only see one sample.
  SynthConfig cfg2 = cfg;
  cfg2.seed = 10011;
  const SynthScene s2 = generate_scene(cfg2);
  const SequenceWindow w2 = split_scene(s2.scene, 2, 4).front();
  auto gt2 = std::make_shared<Sample>(build_sample(w2, spec, TaskMode::InflatedGMO));
  auto p1 = std::make_shared<Forecast>(constant_velocity_forecast(prepare_window(w, spec).frame, spec));
  auto p2 = std::make_shared<Forecast>(constant_velocity_forecast(prepare_window(w2, spec).frame, spec));
  const std::vector<EvalPair> pairs{{p1, gt}, {p2, gt2}};
  const PairLoader load = [&](std::size_t i) { return pairs[i % pairs.size()]; };

  EvalOptions opt;
  opt.mode = TaskMode::InflatedGMO;
  t0 = std::chrono::steady_clock::now();
  const EvalReport r = evaluate_dataset(100, load, opt, 8);
  const double eval_s = seconds_since(t0);
  c.expect(eval_s < 60.0, "evaluation took " + num(eval_s) + " s");
  c.expect(r.sample_count == 100, "sample count");
  c.expect(r.vpq.has_value(), "VPQ missing");
  c.expect(r.classes.front().iou_future == 1.0, "constant velocity forecast not exact");
  return c.done("build " + num(build_s) + " s (< 2 s); 100 full-resolution pairs with 8 workers in " +
                num(eval_s, 1) + " s (< 60 s)");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"AC1", ac1}, {"AC2", ac2}, {"AC3", ac3}, {"AC4", ac4}, {"AC5", ac5},
      {"AC6", ac6}, {"AC7", ac7}, {"AC8", ac8}, {"AC9", ac9}, {"AC10", ac10},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << "  " << o.detail << std::endl;
  }
  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
