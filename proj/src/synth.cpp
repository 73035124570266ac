#include "occ4d/synth.hpp"

#include <cmath>
#include <numbers>

#include "occ4d/dataset.hpp"
#include "occ4d/error.hpp"

namespace occ4d {
namespace {

double circumradius(const Vec3& size) {
  return 0.5 * std::hypot(size.x(), size.y());
}

void check_range(const Range& r, const char* name) {
  if (!(r.min <= r.max) || !std::isfinite(r.min) || !std::isfinite(r.max)) {
    throw ConfigError(std::string("synth range ") + name + " is empty");
  }
}

double sample(Lcg64& rng, const Range& r) { return rng.uniform(r.min, r.max); }

// Kinematic parameters for a box, sampling whatever the script leaves open.
TruthInstance resolve(const InstanceScript& s, const SynthConfig& cfg,
                      Lcg64& rng, std::uint32_t id, int last_frame) {
  TruthInstance t;
  t.id = id;
  t.category = s.category;
  t.motion = s.motion;
  t.start = s.start ? *s.start
                    : Vec3(rng.uniform(cfg.spawn_x.min, cfg.spawn_x.max),
                           rng.uniform(cfg.spawn_y.min, cfg.spawn_y.max),
                           cfg.spawn_z);
  t.size = s.size ? *s.size
                  : Vec3(sample(rng, cfg.length), sample(rng, cfg.width),
                         sample(rng, cfg.height));
  const double heading = rng.uniform(-std::numbers::pi, std::numbers::pi);
  if (s.motion != MotionKind::Static) {
    if (s.velocity) {
      t.velocity = *s.velocity;
    } else {
      const double speed = sample(rng, cfg.speed);
      t.velocity = Vec3(speed * std::cos(heading), speed * std::sin(heading), 0);
    }
  }
  if (s.yaw) {
    t.yaw = *s.yaw;
  } else if (t.velocity.head<2>().norm() > 0.0) {
    t.yaw = std::atan2(t.velocity.y(), t.velocity.x());
  } else {
    t.yaw = heading;
  }
  t.yaw_rate = s.motion == MotionKind::ConstantTurn ? s.yaw_rate : 0.0;
  t.appear = s.appear;
  t.vanish = s.vanish < 0 ? last_frame : s.vanish;
  t.visibility = s.visibility;
  return t;
}

bool in_extent(const SynthConfig& cfg, const Vec3& world, double radius,
               int frame) {
  const Vec3 p =
      truth_ego(cfg.ego, cfg.dt, frame).inverse().apply(world);
  const double m = cfg.extent_margin + radius;
  return p.x() >= cfg.grid.x().min + m && p.x() <= cfg.grid.x().max - m &&
         p.y() >= cfg.grid.y().min + m && p.y() <= cfg.grid.y().max - m;
}

bool separated(const SynthConfig& cfg, const TruthInstance& a,
               const TruthInstance& b, int frames) {
  const double need = circumradius(a.size) + circumradius(b.size) + cfg.clearance;
  for (int k = 0; k < frames; ++k) {
    if (!a.exists(k) || !b.exists(k)) continue;
    const Vec3 d = truth_center(a, cfg.dt, k) - truth_center(b, cfg.dt, k);
    if (d.head<2>().norm() < need || d.norm() < cfg.min_center_distance) {
      return false;
    }
  }
  return true;
}

bool stays_in_extent(const SynthConfig& cfg, const TruthInstance& inst,
                     int frames) {
  for (int k = 0; k < frames; ++k) {
    if (inst.exists(k) &&
        !in_extent(cfg, truth_center(inst, cfg.dt, k), circumradius(inst.size),
                   k)) {
      return false;
    }
  }
  return true;
}

void validate_config(const SynthConfig& cfg) {
  if (cfg.frame_count <= 0) {
    throw ConfigError("synth config needs at least one frame");
  }
  if (!(cfg.dt > 0.0)) throw ConfigError("synth dt must be positive");
  if (cfg.instance_count < 0 || cfg.obstacle_count < 0) {
    throw ConfigError("synth instance counts must be nonnegative");
  }
  if (cfg.scripted.size() + static_cast<std::size_t>(cfg.instance_count) >
      0xFFFF) {
    throw ConfigError("synth config exceeds 65535 instances");
  }
  if (cfg.max_attempts <= 0) throw ConfigError("max_attempts must be positive");
  check_range(cfg.speed, "speed");
  check_range(cfg.yaw_rate, "yaw_rate");
  check_range(cfg.length, "length");
  check_range(cfg.width, "width");
  check_range(cfg.height, "height");
  check_range({cfg.spawn_x.min, cfg.spawn_x.max}, "spawn_x");
  check_range({cfg.spawn_y.min, cfg.spawn_y.max}, "spawn_y");
  if (cfg.length.min <= 0.0 || cfg.width.min <= 0.0 || cfg.height.min <= 0.0) {
    throw ConfigError("synth box sizes must be positive");
  }
  if (cfg.ego.motion == MotionKind::ConstantTurn) {
    throw ConfigError("ego motion must be static or constant-velocity");
  }
  for (std::size_t i = 0; i < cfg.scripted.size(); ++i) {
    const auto& s = cfg.scripted[i];
    const int vanish = s.vanish < 0 ? cfg.frame_count - 1 : s.vanish;
    if (s.appear < 0 || vanish >= cfg.frame_count || s.appear > vanish) {
      throw ConfigError("scripted instance " + std::to_string(i) +
                        " has appearance window [" + std::to_string(s.appear) +
                        ", " + std::to_string(vanish) + "] outside frames 0.." +
                        std::to_string(cfg.frame_count - 1));
    }
    if (s.size && (s.size->minCoeff() <= 0.0)) {
      throw ConfigError("scripted instance " + std::to_string(i) +
                        " has a nonpositive size");
    }
    for (double v : s.visibility) {
      if (!(v >= 0.0 && v <= 1.0)) {
        throw ConfigError("scripted instance " + std::to_string(i) +
                          " has visibility outside [0, 1]");
      }
    }
  }
}

BoxState eroded(BoxState box, double erosion) {
  box.size = (box.size.array() - 2.0 * erosion).max(0.0).matrix();
  return box;
}

OccupancyGrid fine_frame(const SynthConfig& cfg, const SynthTruth& truth,
                         int frame) {
  // Single-frame volumes carry no temporal horizons.
  const GridSpec spec = cfg.grid.with_horizons(0, 0);
  OccupancyGrid g(spec);
  const Pose ego_from_world = truth_ego(cfg.ego, cfg.dt, frame).inverse();
  for (int iz = 0; iz < spec.nz(); ++iz) {
    const double zc = spec.z().min + (iz + 0.5) * spec.resolution();
    if (zc >= cfg.ground_z) continue;
    for (int ix = 0; ix < spec.nx(); ++ix) {
      for (int iy = 0; iy < spec.ny(); ++iy) {
        g.set(VoxelIndex{ix, iy, iz}, SemanticLabel::GSO);
      }
    }
  }
  for (const auto& ob : truth.obstacles) {
    for (std::size_t li :
         voxelize_box_linear(box_to_frame(ob, ego_from_world), spec)) {
      g.set(li, SemanticLabel::GSO);
    }
  }
  for (const auto& inst : truth.instances) {
    if (!inst.exists(frame)) continue;
    const BoxState box = eroded(truth_box(inst, cfg.dt, frame), cfg.fine_erosion);
    if (box.size.minCoeff() <= 0.0) continue;
    for (std::size_t li :
         voxelize_box_linear(box_to_frame(box, ego_from_world), spec)) {
      g.set(li, SemanticLabel::GMO);
    }
  }
  return g;
}

LabeledPointCloud cloud_from(const OccupancyGrid& g) {
  LabeledPointCloud c;
  const auto labels = g.labels();
  for (std::size_t li = 0; li < labels.size(); ++li) {
    if (labels[li] == SemanticLabel::Free) continue;
    c.points.push_back(
        voxel_center_unchecked(voxel_from_linear(g.spec(), li), g.spec()));
    c.labels.push_back(labels[li]);
  }
  return c;
}

}  // namespace

int Lcg64::uniform_int(int lo, int hi) {
  if (hi < lo) throw ConfigError("empty integer range");
  const double span = static_cast<double>(hi) - lo + 1.0;
  const int k = static_cast<int>(std::floor(uniform() * span));
  return lo + std::min(k, hi - lo);
}

const char* motion_kind_name(MotionKind kind) {
  switch (kind) {
    case MotionKind::Static: return "static";
    case MotionKind::ConstantVelocity: return "constant-velocity";
    case MotionKind::ConstantTurn: return "constant-turn";
  }
  return "unknown";
}

MotionKind parse_motion_kind(const std::string& name) {
  if (name == "static") return MotionKind::Static;
  if (name == "constant-velocity") return MotionKind::ConstantVelocity;
  if (name == "constant-turn") return MotionKind::ConstantTurn;
  throw ConfigError("unknown motion kind \"" + name +
                    "\" (expected static, constant-velocity or constant-turn)");
}

const TruthInstance* SynthTruth::find(std::uint32_t id) const {
  for (const auto& inst : instances) {
    if (inst.id == id) return &inst;
  }
  return nullptr;
}

Vec3 truth_center(const TruthInstance& inst, double dt, int frame) {
  const double tau = frame * dt;
  switch (inst.motion) {
    case MotionKind::Static:
      return inst.start;
    case MotionKind::ConstantVelocity:
      return inst.start + inst.velocity * tau;
    case MotionKind::ConstantTurn: {
      const double w = inst.yaw_rate;
      const double s = inst.velocity.head<2>().norm();
      if (std::abs(w) < 1e-12) {
        return inst.start + Vec3(s * std::cos(inst.yaw), s * std::sin(inst.yaw),
                                 inst.velocity.z()) *
                                tau;
      }
      const double h0 = inst.yaw;
      const double h = h0 + w * tau;
      return {inst.start.x() + (s / w) * (std::sin(h) - std::sin(h0)),
              inst.start.y() - (s / w) * (std::cos(h) - std::cos(h0)),
              inst.start.z() + inst.velocity.z() * tau};
    }
  }
  return inst.start;
}

double truth_yaw(const TruthInstance& inst, double dt, int frame) {
  if (inst.motion != MotionKind::ConstantTurn) return inst.yaw;
  return wrap_angle(inst.yaw + inst.yaw_rate * frame * dt);
}

double truth_visibility(const TruthInstance& inst, int frame) {
  if (inst.visibility.empty()) return 1.0;
  const std::size_t k = static_cast<std::size_t>(frame - inst.appear);
  return inst.visibility[std::min(k, inst.visibility.size() - 1)];
}

BoxState truth_box(const TruthInstance& inst, double dt, int frame) {
  BoxState b;
  b.center = truth_center(inst, dt, frame);
  b.size = inst.size;
  b.yaw = truth_yaw(inst, dt, frame);
  b.visibility = truth_visibility(inst, frame);
  return b;
}

Pose truth_ego(const EgoScript& ego, double dt, int frame) {
  Vec3 p = ego.start;
  if (ego.motion == MotionKind::ConstantVelocity) p += ego.velocity * (frame * dt);
  return Pose::from_yaw(ego.yaw, p);
}

SynthScene generate_scene(const SynthConfig& cfg) {
  validate_config(cfg);
  const int frames = cfg.frame_count;
  Lcg64 rng(cfg.seed);
  SynthScene out;
  SynthTruth& truth = out.truth;
  truth.dt = cfg.dt;
  truth.ego = cfg.ego;

  auto place = [&](const InstanceScript& script, std::uint32_t id,
                   const char* what) {
    const bool fixed = script.start.has_value();
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      TruthInstance cand = resolve(script, cfg, rng, id, frames - 1);
      if (fixed) return cand;
      bool ok = stays_in_extent(cfg, cand, frames);
      for (const auto& other : truth.instances) {
        if (!ok) break;
        ok = separated(cfg, cand, other, frames);
      }
      if (ok) return cand;
    }
    throw ConstructionError(std::string("could not place ") + what + " " +
                            std::to_string(id) + " after " +
                            std::to_string(cfg.max_attempts) + " attempts");
  };

  std::uint32_t next_id = 1;
  for (const auto& s : cfg.scripted) {
    truth.instances.push_back(place(s, next_id++, "scripted instance"));
  }
  InstanceScript random_script;
  random_script.motion = cfg.random_motion;
  for (int i = 0; i < cfg.instance_count; ++i) {
    InstanceScript s = random_script;
    if (s.motion == MotionKind::ConstantTurn) s.yaw_rate = sample(rng, cfg.yaw_rate);
    truth.instances.push_back(place(s, next_id++, "instance"));
  }
  // Static obstacles only need to clear the movers.
  for (int i = 0; i < cfg.obstacle_count; ++i) {
    TruthInstance ob;
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      ob = resolve(InstanceScript{}, cfg, rng, 0, frames - 1);
      placed = stays_in_extent(cfg, ob, frames);
      for (const auto& other : truth.instances) {
        if (!placed) break;
        placed = separated(cfg, ob, other, frames);
      }
    }
    if (!placed) {
      throw ConstructionError("could not place obstacle " + std::to_string(i) +
                              " after " + std::to_string(cfg.max_attempts) +
                              " attempts");
    }
    truth.obstacles.push_back(truth_box(ob, cfg.dt, 0));
  }

  Scene& scene = out.scene;
  scene.id = cfg.scene_id;
  for (int k = 0; k < frames; ++k) {
    scene.timestamps.push_back(k * cfg.dt);
    scene.ego.push_back(truth_ego(cfg.ego, cfg.dt, k));
  }
  for (const auto& inst : truth.instances) {
    InstanceTrack track;
    track.id = inst.id;
    track.category = inst.category;
    for (int k = inst.appear; k <= inst.vanish; ++k) {
      track.states.emplace(k, truth_box(inst, cfg.dt, k));
    }
    scene.tracks.push_back(std::move(track));
  }
  if (cfg.fine_labels || cfg.clouds) {
    std::vector<std::optional<OccupancyGrid>> fine;
    fine.reserve(frames);
    for (int k = 0; k < frames; ++k) fine.emplace_back(fine_frame(cfg, truth, k));
    if (cfg.clouds) {
      for (const auto& g : fine) scene.clouds.emplace_back(cloud_from(*g));
    }
    if (cfg.fine_labels) scene.fine_labels = std::move(fine);
  }
  scene.validate();
  return out;
}

FlowVolume analytic_flow(const SynthTruth& truth, int present, int n_past,
                         const OccupancyGrid& frame_t, int t) {
  const GridSpec& spec = frame_t.spec();
  FlowVolume flow(spec);
  if (!frame_t.has_instance_ids()) return flow;
  const int prev = t - 1;
  if (prev < -n_past) return flow;
  const Pose present_from_world =
      truth_ego(truth.ego, truth.dt, present).inverse();
  const auto labels = frame_t.labels();
  const auto ids = frame_t.instance_ids();
  const TruthInstance* cached = nullptr;
  for (std::size_t li = 0; li < labels.size(); ++li) {
    if (labels[li] != SemanticLabel::GMO || ids[li] == 0) continue;
    if (!cached || cached->id != ids[li]) cached = truth.find(ids[li]);
    if (!cached || !cached->exists(present + prev)) continue;
    const Vec3 c = present_from_world.apply(
        truth_center(*cached, truth.dt, present + prev));
    flow.push(li, c - voxel_center_unchecked(voxel_from_linear(spec, li), spec));
  }
  return flow;
}

}  // namespace occ4d
