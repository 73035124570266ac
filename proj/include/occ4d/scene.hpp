#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Geometry>

#include "occ4d/grid.hpp"

namespace occ4d {

// Rigid transform from a child frame to the world frame.
struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  static Pose from_yaw(double yaw, const Vec3& translation);

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const;
  Pose operator*(const Pose& rhs) const;

  // Throws ConstructionError unless |q| = 1 within 1e-9.
  void validate() const;
};

struct BoxState {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();  // length (x), width (y), height (z)
  double yaw = 0.0;          // radians about +z
  double visibility = 1.0;   // visible fraction in [0, 1]

  double volume() const { return size.x() * size.y() * size.z(); }
  bool operator==(const BoxState&) const = default;
};

enum class Category : std::uint8_t {
  Bicycle,
  Bus,
  Car,
  Construction,
  Motorcycle,
  Trailer,
  Truck,
  Pedestrian,
};

const char* category_name(Category c);
// Throws FormatError for names outside the movable-object set.
Category parse_category(const std::string& name);

struct InstanceTrack {
  std::uint32_t id = 0;
  Category category = Category::Car;
  std::map<int, BoxState> states;  // frame index -> box

  int t_in() const { return states.begin()->first; }
  int t_out() const { return states.rbegin()->first; }
  bool has(int frame) const { return states.count(frame) != 0; }
  bool operator==(const InstanceTrack&) const = default;
};

struct LabeledPointCloud {
  std::vector<Vec3> points;
  std::vector<SemanticLabel> labels;
  bool operator==(const LabeledPointCloud&) const = default;
};

struct Scene {
  std::string id;
  std::vector<double> timestamps;  // seconds, strictly increasing
  std::vector<Pose> ego;           // ego -> world, one per frame
  std::vector<InstanceTrack> tracks;  // boxes in world coordinates
  // Optional per-frame volumes in that frame's ego coordinates. Either empty
  // or sized frame_count().
  std::vector<std::optional<OccupancyGrid>> fine_labels;
  std::vector<std::optional<LabeledPointCloud>> clouds;  // ego coordinates

  int frame_count() const { return static_cast<int>(timestamps.size()); }
  bool has_fine_labels(int first, int last) const;
  bool has_clouds(int first, int last) const;

  // Throws ConstructionError naming the offending frame or track.
  void validate() const;
};

// Frames [present - n_past, present + n_future] of a scene.
struct SequenceWindow {
  const Scene* scene = nullptr;
  int present = 0;
  int n_past = 0;
  int n_future = 0;

  int first_frame() const { return present - n_past; }
  int last_frame() const { return present + n_future; }
  int length() const { return n_past + n_future + 1; }
};

// Sliding windows with stride 1 ordered by present index; empty when the
// scene is shorter than Np + Nf + 1 frames.
std::vector<SequenceWindow> split_scene(const Scene& scene, int n_past,
                                        int n_future);

// Track restricted to a window; keys are window-relative (t = 0 is the
// present frame) and boxes are in present-frame coordinates.
struct WindowTrack {
  std::uint32_t id = 0;
  Category category = Category::Car;
  std::map<int, BoxState> states;

  int t_in() const { return states.begin()->first; }
  int t_out() const { return states.rbegin()->first; }
  const BoxState* at(int t) const {
    const auto it = states.find(t);
    return it == states.end() ? nullptr : &it->second;
  }
};

// Window data re-expressed in the ego frame at t = 0.
struct PresentFrameWindow {
  const Scene* scene = nullptr;
  int present = 0;
  int n_past = 0;
  int n_future = 0;
  // Pose of the ego frame at relative time t in the present frame; index
  // t + n_past. Entry n_past is the identity.
  std::vector<Pose> ego_in_present;
  std::vector<WindowTrack> tracks;
  // Re-referenced clouds, index t + n_past; empty when the scene has none.
  std::vector<std::optional<LabeledPointCloud>> clouds;

  const Pose& ego_at(int t) const { return ego_in_present.at(t + n_past); }
  int absolute_frame(int t) const { return present + t; }
};

// Maps every box and point by T_present^-1 * T_world. Box sizes are kept;
// yaw is re-expressed as the heading of the rotated box x-axis.
PresentFrameWindow to_present_frame(const SequenceWindow& window);

// Same as to_present_frame for a single world-frame box.
BoxState box_to_frame(const BoxState& world_box, const Pose& frame_from_world);

// Fills gaps between annotated frames: linear center, shortest-path yaw,
// size from the earlier frame, min visibility of the two endpoints.
InstanceTrack interpolate_track(const InstanceTrack& track);

// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

enum class FilterRule {
  LowVisibilityNewcomer,  // R1
  AppearsInFuture,        // R2
  LeavesRange,            // R3
  AbsentFromOutput,       // no state at any t in [0, Nf]
};

const char* filter_rule_name(FilterRule rule);

struct FilterOutcome {
  std::vector<WindowTrack> retained;
  std::vector<std::pair<std::uint32_t, FilterRule>> removed;
};

inline constexpr double kNewcomerMinVisibility = 0.40;

FilterOutcome filter_invalid_tracks(const PresentFrameWindow& window,
                                    const GridSpec& spec);

// Interpolation, present-frame re-referencing and filtering composed; the
// returned window holds only the retained tracks.
struct PreparedWindow {
  PresentFrameWindow frame;
  std::vector<std::pair<std::uint32_t, FilterRule>> removed;
};

PreparedWindow prepare_window(const SequenceWindow& window,
                              const GridSpec& spec);

// Counts of retained tracks per (t_in, t_out) bucket.
class DurationHistogram {
 public:
  void add(int t_in, int t_out, std::uint64_t count = 1);
  void merge(const DurationHistogram& other);

  std::uint64_t total() const { return total_; }
  std::uint64_t count(int t_in, int t_out) const;
  double fraction(int t_in, int t_out) const;
  bool empty() const { return total_ == 0; }
  const std::map<std::pair<int, int>, std::uint64_t>& buckets() const {
    return buckets_;
  }
  bool operator==(const DurationHistogram&) const = default;

 private:
  std::map<std::pair<int, int>, std::uint64_t> buckets_;
  std::uint64_t total_ = 0;
};

DurationHistogram instance_duration_stats(
    const std::vector<PresentFrameWindow>& filtered_windows);

}  // namespace occ4d
