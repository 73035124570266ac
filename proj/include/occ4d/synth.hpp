#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "occ4d/grid.hpp"
#include "occ4d/scene.hpp"

namespace occ4d {

// 64-bit linear congruential generator (Knuth MMIX constants). Each draw
// advances state = a * state + c (mod 2^64); uniform() maps the top 53 bits
// to [0, 1). The first draw follows one advance from the seed.
class Lcg64 {
 public:
  static constexpr std::uint64_t kMultiplier = 6364136223846793005ULL;
  static constexpr std::uint64_t kIncrement = 1442695040888963407ULL;

  explicit Lcg64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ = state_ * kMultiplier + kIncrement;
    return state_;
  }
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Inclusive range.
  int uniform_int(int lo, int hi);

 private:
  std::uint64_t state_;
};

enum class MotionKind : std::uint8_t { Static, ConstantVelocity, ConstantTurn };

const char* motion_kind_name(MotionKind kind);  // "static", "constant-velocity", ...
MotionKind parse_motion_kind(const std::string& name);

struct Range {
  double min = 0.0;
  double max = 0.0;
};

// One instance with explicit kinematics. Unset fields are sampled.
struct InstanceScript {
  MotionKind motion = MotionKind::Static;
  Category category = Category::Car;
  std::optional<Vec3> start;     // world center at frame 0
  std::optional<Vec3> velocity;  // m/s; constant-turn uses |v_xy| and heading
  double yaw_rate = 0.0;         // rad/s, constant-turn only
  std::optional<Vec3> size;      // l, w, h
  std::optional<double> yaw;     // heading at frame 0; defaults to atan2(v)
  int appear = 0;                // first frame with a state
  int vanish = -1;               // last frame with a state; -1 = last frame
  // Visibility per frame counted from `appear`; the last value repeats and
  // an empty schedule means fully visible.
  std::vector<double> visibility;
};

struct EgoScript {
  MotionKind motion = MotionKind::Static;  // static or constant-velocity
  Vec3 start = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();  // m/s
  double yaw = 0.0;
};

struct SynthConfig {
  std::uint64_t seed = 0;
  std::string scene_id = "synth";
  int frame_count = 10;
  double dt = 0.5;  // s; 0.2 for 5 Hz data

  // Scripted instances come first (IDs 1..), then `instance_count` sampled
  // ones with `random_motion`.
  std::vector<InstanceScript> scripted;
  int instance_count = 0;
  MotionKind random_motion = MotionKind::ConstantVelocity;
  Range speed{1.0, 6.0};       // m/s
  Range yaw_rate{-0.3, 0.3};   // rad/s
  Range length{3.6, 4.8};
  Range width{1.6, 2.0};
  Range height{1.4, 1.8};
  AxisRange spawn_x{-40.0, 40.0};
  AxisRange spawn_y{-40.0, 40.0};
  double spawn_z = -1.0;  // box center height

  EgoScript ego;

  // Lattice used for fine labels, clouds and in-extent checks.
  GridSpec grid;
  // Sampled centers stay this far inside the grid's x-y extent in every
  // frame's ego coordinates.
  double extent_margin = 3.0;
  // Gap between the circumscribed x-y circles of any two boxes in any frame,
  // and minimum center distance.
  double clearance = 0.5;
  double min_center_distance = 3.0;
  int max_attempts = 2000;

  bool fine_labels = false;
  bool clouds = false;           // one labeled point per occupied fine voxel
  double fine_erosion = 0.2;     // fine GMO shrinks each box face by this
  double ground_z = -2.0;        // GSO slab: voxels with center below this
  int obstacle_count = 0;        // static GSO boxes
};

// Closed-form description of one instance.
struct TruthInstance {
  std::uint32_t id = 0;
  Category category = Category::Car;
  MotionKind motion = MotionKind::Static;
  Vec3 start = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  double yaw = 0.0;
  double yaw_rate = 0.0;
  Vec3 size = Vec3::Ones();
  int appear = 0;
  int vanish = 0;
  std::vector<double> visibility;

  bool exists(int frame) const { return frame >= appear && frame <= vanish; }
};

struct SynthTruth {
  double dt = 0.5;
  EgoScript ego;
  std::vector<TruthInstance> instances;
  std::vector<BoxState> obstacles;  // world frame

  const TruthInstance* find(std::uint32_t id) const;
};

struct SynthScene {
  Scene scene;
  SynthTruth truth;
};

// Throws ConfigError on a degenerate config and ConstructionError when the
// sampled instances cannot be separated within max_attempts.
SynthScene generate_scene(const SynthConfig& config);

Vec3 truth_center(const TruthInstance& inst, double dt, int frame);
double truth_yaw(const TruthInstance& inst, double dt, int frame);
double truth_visibility(const TruthInstance& inst, int frame);
BoxState truth_box(const TruthInstance& inst, double dt, int frame);
Pose truth_ego(const EgoScript& ego, double dt, int frame);

// Backward flow at relative time t of the window at `present`, evaluated
// from the closed-form kinematics: for every GMO voxel of `frame_t` with an
// instance ID, flow = center(t - 1) in present coordinates - voxel center,
// valid iff the instance exists at t - 1 inside the window.
FlowVolume analytic_flow(const SynthTruth& truth, int present, int n_past,
                         const OccupancyGrid& frame_t, int t);

}  // namespace occ4d
