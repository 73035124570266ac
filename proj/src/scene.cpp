#include "occ4d/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace occ4d {
namespace {

constexpr std::array<const char*, 8> kCategoryNames = {
    "bicycle",    "bus",     "car",   "construction",
    "motorcycle", "trailer", "truck", "pedestrian"};

std::string frame_str(int frame) { return "frame " + std::to_string(frame); }

// Re-expresses the part of a world-frame track that falls inside the window.
WindowTrack rereference_track(const InstanceTrack& track,
                              const SequenceWindow& window,
                              const Pose& present_from_world) {
  WindowTrack out;
  out.id = track.id;
  out.category = track.category;
  const auto lo = track.states.lower_bound(window.first_frame());
  const auto hi = track.states.upper_bound(window.last_frame());
  for (auto it = lo; it != hi; ++it) {
    out.states.emplace(it->first - window.present,
                       box_to_frame(it->second, present_from_world));
  }
  return out;
}

PresentFrameWindow rereference(const SequenceWindow& window,
                               const std::vector<InstanceTrack>& tracks) {
  const Scene& scene = *window.scene;
  if (window.first_frame() < 0 || window.last_frame() >= scene.frame_count()) {
    throw ConstructionError("window [" + std::to_string(window.first_frame()) +
                            ", " + std::to_string(window.last_frame()) +
                            "] exceeds scene frames");
  }
  for (int f = window.first_frame(); f <= window.last_frame(); ++f) {
    if (f >= static_cast<int>(scene.ego.size())) {
      throw ConstructionError("missing ego pose for " + frame_str(f));
    }
  }
  const Pose present_from_world = scene.ego[window.present].inverse();

  PresentFrameWindow out;
  out.scene = &scene;
  out.present = window.present;
  out.n_past = window.n_past;
  out.n_future = window.n_future;
  out.ego_in_present.reserve(window.length());
  for (int f = window.first_frame(); f <= window.last_frame(); ++f) {
    out.ego_in_present.push_back(f == window.present
                                     ? Pose::identity()
                                     : present_from_world * scene.ego[f]);
  }
  for (const auto& track : tracks) {
    WindowTrack wt = rereference_track(track, window, present_from_world);
    if (!wt.states.empty()) out.tracks.push_back(std::move(wt));
  }
  if (scene.has_clouds(window.first_frame(), window.last_frame())) {
    out.clouds.resize(window.length());
    for (int t = -window.n_past; t <= window.n_future; ++t) {
      const LabeledPointCloud& src = *scene.clouds[window.present + t];
      const Pose& pose = out.ego_at(t);
      LabeledPointCloud dst;
      dst.labels = src.labels;
      dst.points.reserve(src.points.size());
      for (const auto& p : src.points) dst.points.push_back(pose.apply(p));
      out.clouds[t + window.n_past] = std::move(dst);
    }
  }
  return out;
}

}  // namespace

Pose Pose::from_yaw(double yaw, const Vec3& translation) {
  Pose p;
  p.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Vec3::UnitZ()));
  p.translation = translation;
  return p;
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.conjugate();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Pose::operator*(const Pose& rhs) const {
  Pose out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

void Pose::validate() const {
  if (std::abs(rotation.norm() - 1.0) > 1e-9) {
    throw ConstructionError("pose quaternion is not unit length");
  }
  if (!translation.allFinite()) {
    throw ConstructionError("pose translation is not finite");
  }
}

const char* category_name(Category c) {
  return kCategoryNames[static_cast<std::size_t>(c)];
}

Category parse_category(const std::string& name) {
  for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
    if (name == kCategoryNames[i]) return static_cast<Category>(i);
  }
  throw FormatError("unknown instance category \"" + name + "\"");
}

bool Scene::has_fine_labels(int first, int last) const {
  if (static_cast<int>(fine_labels.size()) != frame_count()) return false;
  for (int f = first; f <= last; ++f) {
    if (f < 0 || f >= frame_count() || !fine_labels[f]) return false;
  }
  return true;
}

bool Scene::has_clouds(int first, int last) const {
  if (static_cast<int>(clouds.size()) != frame_count()) return false;
  for (int f = first; f <= last; ++f) {
    if (f < 0 || f >= frame_count() || !clouds[f]) return false;
  }
  return true;
}

void Scene::validate() const {
  for (int f = 1; f < frame_count(); ++f) {
    if (!(timestamps[f] > timestamps[f - 1])) {
      throw ConstructionError("timestamps not strictly increasing at " +
                              frame_str(f));
    }
  }
  if (static_cast<int>(ego.size()) != frame_count()) {
    throw ConstructionError(
        "missing ego pose for " +
        frame_str(std::min<int>(static_cast<int>(ego.size()), frame_count())));
  }
  for (int f = 0; f < frame_count(); ++f) {
    try {
      ego[f].validate();
    } catch (const ConstructionError& e) {
      throw ConstructionError(std::string(e.what()) + " at " + frame_str(f));
    }
  }
  std::vector<std::uint32_t> ids;
  for (const auto& track : tracks) {
    if (track.id == 0 || track.id > 0xFFFF) {
      throw ConstructionError("instance id " + std::to_string(track.id) +
                              " outside [1, 65535]");
    }
    if (track.states.empty()) {
      throw ConstructionError("instance " + std::to_string(track.id) +
                              " has no states");
    }
    for (const auto& [frame, box] : track.states) {
      if (frame < 0 || frame >= frame_count()) {
        throw ConstructionError("instance " + std::to_string(track.id) +
                                " references missing " + frame_str(frame));
      }
      if (!(box.size.x() > 0 && box.size.y() > 0 && box.size.z() > 0)) {
        throw ConstructionError("instance " + std::to_string(track.id) +
                                " has a non-positive box size at " +
                                frame_str(frame));
      }
      if (!(box.visibility >= 0.0 && box.visibility <= 1.0)) {
        throw ConstructionError("instance " + std::to_string(track.id) +
                                " visibility outside [0, 1] at " +
                                frame_str(frame));
      }
    }
    ids.push_back(track.id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ConstructionError("duplicate instance ids in scene");
  }
  if (!fine_labels.empty() &&
      static_cast<int>(fine_labels.size()) != frame_count()) {
    throw ConstructionError("fine label list must cover every frame");
  }
  if (!clouds.empty() && static_cast<int>(clouds.size()) != frame_count()) {
    throw ConstructionError("cloud list must cover every frame");
  }
  for (const auto& c : clouds) {
    if (c && c->points.size() != c->labels.size()) {
      throw ConstructionError("point cloud has mismatched label count");
    }
  }
}

std::vector<SequenceWindow> split_scene(const Scene& scene, int n_past,
                                        int n_future) {
  std::vector<SequenceWindow> windows;
  const int frames = scene.frame_count();
  for (int p = n_past; p + n_future < frames; ++p) {
    windows.push_back({&scene, p, n_past, n_future});
  }
  return windows;
}

BoxState box_to_frame(const BoxState& world_box,
                      const Pose& frame_from_world) {
  BoxState out = world_box;
  out.center = frame_from_world.apply(world_box.center);
  const Vec3 heading = frame_from_world.rotation *
                       Vec3(std::cos(world_box.yaw), std::sin(world_box.yaw), 0);
  out.yaw = std::atan2(heading.y(), heading.x());
  return out;
}

PresentFrameWindow to_present_frame(const SequenceWindow& window) {
  return rereference(window, window.scene->tracks);
}

double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  a = std::fmod(a, kTwoPi);
  if (a <= -std::numbers::pi) a += kTwoPi;
  if (a > std::numbers::pi) a -= kTwoPi;
  return a;
}

InstanceTrack interpolate_track(const InstanceTrack& track) {
  InstanceTrack out = track;
  if (track.states.size() < 2) return out;
  auto it = track.states.begin();
  auto next = std::next(it);
  for (; next != track.states.end(); ++it, ++next) {
    const int a = it->first;
    const int b = next->first;
    if (b - a < 2) continue;
    const BoxState& sa = it->second;
    const BoxState& sb = next->second;
    const double dyaw = wrap_angle(sb.yaw - sa.yaw);
    for (int k = a + 1; k < b; ++k) {
      const double alpha = static_cast<double>(k - a) / (b - a);
      BoxState s;
      s.center = sa.center + alpha * (sb.center - sa.center);
      s.yaw = wrap_angle(sa.yaw + alpha * dyaw);
      s.size = sa.size;
      s.visibility = std::min(sa.visibility, sb.visibility);
      out.states.emplace(k, s);
    }
  }
  return out;
}

const char* filter_rule_name(FilterRule rule) {
  switch (rule) {
    case FilterRule::LowVisibilityNewcomer:
      return "low-visibility-newcomer";
    case FilterRule::AppearsInFuture:
      return "appears-in-future";
    case FilterRule::LeavesRange:
      return "leaves-range";
    case FilterRule::AbsentFromOutput:
      return "absent-from-output";
  }
  return "?";
}

FilterOutcome filter_invalid_tracks(const PresentFrameWindow& window,
                                    const GridSpec& spec) {
  FilterOutcome out;
  for (const auto& track : window.tracks) {
    const int first = track.t_in();
    const BoxState& first_box = track.states.begin()->second;
    std::optional<FilterRule> rule;
    if (first >= 1) {
      rule = FilterRule::AppearsInFuture;
    } else if (first > -window.n_past &&
               first_box.visibility < kNewcomerMinVisibility) {
      rule = FilterRule::LowVisibilityNewcomer;
    } else if (std::any_of(track.states.begin(), track.states.end(),
                           [&](const auto& kv) {
                             return !world_to_voxel(kv.second.center, spec);
                           })) {
      rule = FilterRule::LeavesRange;
    } else if (track.t_out() < 0) {
      rule = FilterRule::AbsentFromOutput;
    }
    if (rule) {
      out.removed.emplace_back(track.id, *rule);
    } else {
      out.retained.push_back(track);
    }
  }
  return out;
}

PreparedWindow prepare_window(const SequenceWindow& window,
                              const GridSpec& spec) {
  std::vector<InstanceTrack> filled;
  filled.reserve(window.scene->tracks.size());
  for (const auto& track : window.scene->tracks) {
    if (track.t_out() < window.first_frame() ||
        track.t_in() > window.last_frame()) {
      continue;
    }
    filled.push_back(interpolate_track(track));
  }
  PreparedWindow out;
  out.frame = rereference(window, filled);
  FilterOutcome filtered = filter_invalid_tracks(out.frame, spec);
  out.frame.tracks = std::move(filtered.retained);
  out.removed = std::move(filtered.removed);
  return out;
}

void DurationHistogram::add(int t_in, int t_out, std::uint64_t count) {
  buckets_[{t_in, t_out}] += count;
  total_ += count;
}

void DurationHistogram::merge(const DurationHistogram& other) {
  for (const auto& [key, n] : other.buckets_) add(key.first, key.second, n);
}

std::uint64_t DurationHistogram::count(int t_in, int t_out) const {
  const auto it = buckets_.find({t_in, t_out});
  return it == buckets_.end() ? 0 : it->second;
}

double DurationHistogram::fraction(int t_in, int t_out) const {
  if (total_ == 0) return 0.0;
  return static_cast<double>(count(t_in, t_out)) /
         static_cast<double>(total_);
}

DurationHistogram instance_duration_stats(
    const std::vector<PresentFrameWindow>& filtered_windows) {
  DurationHistogram hist;
  for (const auto& w : filtered_windows) {
    for (const auto& track : w.tracks) hist.add(track.t_in(), track.t_out());
  }
  return hist;
}

}  // namespace occ4d
