#include "occ4d/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace occ4d {
namespace {

// Shifts both half-open box bounds down by this amount so that voxel centers
// lying on a face up to rounding noise resolve like exact arithmetic would.
constexpr double kFaceTolerance = 1e-9;  // m

struct TaskInfo {
  TaskMode mode;
  const char* name;
};

constexpr std::array<TaskInfo, 4> kTasks = {{
    {TaskMode::InflatedGMO, "inflated-gmo"},
    {TaskMode::FineGMO, "fine-gmo"},
    {TaskMode::InflatedGMO_GSO, "inflated-gmo-gso"},
    {TaskMode::FineGMO_GSO, "fine-gmo-gso"},
}};

struct LocalFrame {
  double c, s;
  Vec3 half;
  Vec3 center;

  explicit LocalFrame(const BoxState& box)
      : c(std::cos(box.yaw)),
        s(std::sin(box.yaw)),
        half(0.5 * box.size),
        center(box.center) {}

  bool contains(const Vec3& p) const {
    const double dx = p.x() - center.x();
    const double dy = p.y() - center.y();
    const double lx = c * dx + s * dy;
    const double ly = -s * dx + c * dy;
    const double lz = p.z() - center.z();
    return lx >= -half.x() - kFaceTolerance && lx < half.x() - kFaceTolerance &&
           ly >= -half.y() - kFaceTolerance && ly < half.y() - kFaceTolerance &&
           lz >= -half.z() - kFaceTolerance && lz < half.z() - kFaceTolerance;
  }
};

// Index range [lo, hi] of cells whose centers can fall in [a, b].
std::pair<int, int> center_range(double a, double b, double min, double res,
                                 int n) {
  const double lo = std::floor((a - min) / res - 0.5) ;
  const double hi = std::ceil((b - min) / res - 0.5);
  const int ilo = static_cast<int>(std::max(0.0, lo));
  const int ihi = static_cast<int>(std::min<double>(n - 1, hi));
  return {ilo, ihi};
}

template <typename Fn>
void for_each_box_voxel(const BoxState& box, const GridSpec& spec, Fn&& fn) {
  const LocalFrame frame(box);
  const double ex = std::abs(frame.c) * frame.half.x() +
                    std::abs(frame.s) * frame.half.y() + kFaceTolerance;
  const double ey = std::abs(frame.s) * frame.half.x() +
                    std::abs(frame.c) * frame.half.y() + kFaceTolerance;
  const double ez = frame.half.z() + kFaceTolerance;
  const double r = spec.resolution();
  const auto [x0, x1] = center_range(box.center.x() - ex, box.center.x() + ex,
                                     spec.x().min, r, spec.nx());
  const auto [y0, y1] = center_range(box.center.y() - ey, box.center.y() + ey,
                                     spec.y().min, r, spec.ny());
  const auto [z0, z1] = center_range(box.center.z() - ez, box.center.z() + ez,
                                     spec.z().min, r, spec.nz());
  if (x0 > x1 || y0 > y1 || z0 > z1) return;
  for (int ix = x0; ix <= x1; ++ix) {
    for (int iy = y0; iy <= y1; ++iy) {
      for (int iz = z0; iz <= z1; ++iz) {
        const VoxelIndex idx{ix, iy, iz};
        if (frame.contains(voxel_center_unchecked(idx, spec))) {
          fn(idx, linear_index(spec, idx));
        }
      }
    }
  }
}

std::vector<LabeledBox> boxes_at(const PresentFrameWindow& window, int t) {
  std::vector<LabeledBox> boxes;
  for (const auto& track : window.tracks) {
    if (const BoxState* b = track.at(t)) {
      boxes.push_back({static_cast<std::uint16_t>(track.id), *b});
    }
  }
  return boxes;
}

void check_fine(const std::vector<OccupancyGrid>* fine, const GridSpec& spec,
                const char* what) {
  if (fine == nullptr) {
    throw ConfigError(std::string(what) + " requires fine labels");
  }
  if (static_cast<int>(fine->size()) != spec.n_future() + 1) {
    throw SpecError(std::string(what) + ": expected " +
                    std::to_string(spec.n_future() + 1) +
                    " fine label frames, found " +
                    std::to_string(fine->size()));
  }
  for (const auto& g : *fine) {
    if (!g.spec().same_geometry(spec)) {
      throw SpecError(std::string(what) + ": fine label dims " +
                      g.spec().describe() + " do not match " +
                      spec.describe());
    }
  }
}

}  // namespace

const char* task_mode_name(TaskMode mode) {
  for (const auto& t : kTasks) {
    if (t.mode == mode) return t.name;
  }
  return "?";
}

TaskMode parse_task_mode(const std::string& name) {
  for (const auto& t : kTasks) {
    if (name == t.name) return t.mode;
  }
  throw ConfigError("unknown task \"" + name +
                    "\" (expected inflated-gmo, fine-gmo, inflated-gmo-gso or "
                    "fine-gmo-gso)");
}

bool is_valid_task_code(std::uint8_t code) { return code <= 3; }

bool uses_fine_gmo(TaskMode mode) {
  return mode == TaskMode::FineGMO || mode == TaskMode::FineGMO_GSO;
}

bool uses_gso(TaskMode mode) {
  return mode == TaskMode::InflatedGMO_GSO || mode == TaskMode::FineGMO_GSO;
}

bool box_contains(const BoxState& box, const Vec3& p) {
  return LocalFrame(box).contains(p);
}

std::vector<std::size_t> voxelize_box_linear(const BoxState& box,
                                             const GridSpec& spec) {
  std::vector<std::size_t> out;
  for_each_box_voxel(box, spec,
                     [&](const VoxelIndex&, std::size_t li) { out.push_back(li); });
  return out;
}

std::vector<VoxelIndex> voxelize_box(const BoxState& box,
                                     const GridSpec& spec) {
  std::vector<VoxelIndex> out;
  for_each_box_voxel(box, spec, [&](const VoxelIndex& idx, std::size_t) {
    out.push_back(idx);
  });
  return out;
}

std::vector<std::size_t> paint_boxes(std::vector<LabeledBox> boxes,
                                     OccupancyGrid& grid) {
  // Larger boxes first so that smaller ones overwrite contested voxels.
  std::sort(boxes.begin(), boxes.end(),
            [](const LabeledBox& a, const LabeledBox& b) {
              const double va = a.box.volume();
              const double vb = b.box.volume();
              if (va != vb) return va > vb;
              return a.id > b.id;
            });
  std::vector<std::size_t> painted;
  for (const auto& lb : boxes) {
    for_each_box_voxel(lb.box, grid.spec(),
                       [&](const VoxelIndex&, std::size_t li) {
                         if (grid.label(li) != SemanticLabel::GMO) {
                           painted.push_back(li);
                         }
                         grid.set(li, SemanticLabel::GMO, lb.id);
                       });
  }
  std::sort(painted.begin(), painted.end());
  return painted;
}

OccupancySequence build_gmo_sequence(
    const PresentFrameWindow& window, const GridSpec& spec, TaskMode mode,
    const std::vector<OccupancyGrid>* fine_present) {
  const bool fine = uses_fine_gmo(mode);
  if (fine) check_fine(fine_present, spec, task_mode_name(mode));
  OccupancySequence seq = OccupancySequence::empty(spec, true);
  for (int t = 0; t <= spec.n_future(); ++t) {
    OccupancyGrid& grid = seq.frame(t);
    const std::vector<std::size_t> painted = paint_boxes(boxes_at(window, t), grid);
    if (fine) {
      const OccupancyGrid& f = (*fine_present)[t];
      for (std::size_t li : painted) {
        if (f.label(li) != SemanticLabel::GMO) {
          grid.set(li, SemanticLabel::Free);
        }
      }
    }
  }
  return seq;
}

OccupancyGrid resample_to_present(const OccupancyGrid& fine,
                                  const Pose& present_from_frame,
                                  const GridSpec& spec) {
  const bool identity =
      present_from_frame.translation.norm() == 0.0 &&
      present_from_frame.rotation.isApprox(Eigen::Quaterniond::Identity(), 0.0);
  if (identity && fine.spec().same_geometry(spec)) {
    OccupancyGrid out(spec);
    std::copy(fine.labels().begin(), fine.labels().end(), out.labels().begin());
    return out;
  }
  const Pose frame_from_present = present_from_frame.inverse();
  const Eigen::Matrix3d rot = frame_from_present.rotation.toRotationMatrix();
  const Vec3 step_z = rot * Vec3(0, 0, spec.resolution());
  OccupancyGrid out(spec);
  auto labels = out.labels();
  const GridSpec& src = fine.spec();
  std::size_t li = 0;
  for (int ix = 0; ix < spec.nx(); ++ix) {
    for (int iy = 0; iy < spec.ny(); ++iy) {
      Vec3 q = frame_from_present.apply(
          voxel_center_unchecked(VoxelIndex{ix, iy, 0}, spec));
      for (int iz = 0; iz < spec.nz(); ++iz, ++li, q += step_z) {
        if (const auto idx = world_to_voxel(q, src)) {
          labels[li] = fine.at(*idx);
        }
      }
    }
  }
  return out;
}

OccupancySequence merge_gso(const OccupancySequence& seq,
                            const std::vector<OccupancyGrid>& fine_present) {
  if (fine_present.size() != static_cast<std::size_t>(seq.frame_count())) {
    throw SpecError("merge_gso: " + std::to_string(fine_present.size()) +
                    " fine frames for a " + std::to_string(seq.frame_count()) +
                    "-frame sequence");
  }
  OccupancySequence out = seq;
  for (int t = 0; t < seq.frame_count(); ++t) {
    const OccupancyGrid& f = fine_present[t];
    OccupancyGrid& g = out.frame(t);
    if (!f.spec().same_geometry(g.spec())) {
      throw SpecError("merge_gso: fine label dims " + f.spec().describe() +
                      " do not match " + g.spec().describe());
    }
    auto dst = g.labels();
    const auto src = f.labels();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i] != SemanticLabel::GMO && src[i] == SemanticLabel::GSO) {
        dst[i] = SemanticLabel::GSO;
      }
    }
  }
  return out;
}

std::vector<FlowVolume> generate_backward_flow(const PresentFrameWindow& window,
                                               const OccupancySequence& seq) {
  if (!seq.has_instance_ids()) {
    throw ConfigError("backward flow requires instance ids on every frame");
  }
  const GridSpec& spec = seq.spec();
  std::vector<const WindowTrack*> by_id(0x10000, nullptr);
  for (const auto& track : window.tracks) by_id[track.id] = &track;

  std::vector<FlowVolume> flows;
  flows.reserve(seq.frame_count());
  for (int t = 0; t < seq.frame_count(); ++t) {
    FlowVolume flow(spec);
    const OccupancyGrid& grid = seq.frame(t);
    const auto labels = grid.labels();
    const auto ids = grid.instance_ids();
    for (std::size_t li = 0; li < labels.size(); ++li) {
      if (labels[li] != SemanticLabel::GMO || ids[li] == 0) continue;
      const WindowTrack* track = by_id[ids[li]];
      if (track == nullptr) continue;
      const BoxState* prev = track->at(t - 1);
      if (prev == nullptr) continue;
      flow.push(li, prev->center -
                        voxel_center_unchecked(voxel_from_linear(spec, li), spec));
    }
    flows.push_back(std::move(flow));
  }
  return flows;
}

Sample build_sample(const SequenceWindow& window, const GridSpec& spec,
                    TaskMode mode) {
  if (window.n_past != spec.n_past() || window.n_future != spec.n_future()) {
    throw ConfigError("window horizons (Np=" + std::to_string(window.n_past) +
                      ", Nf=" + std::to_string(window.n_future) +
                      ") do not match grid spec");
  }
  const Scene& scene = *window.scene;
  if (needs_fine_labels(mode) &&
      !scene.has_fine_labels(window.present, window.last_frame())) {
    throw ConfigError("task " + std::string(task_mode_name(mode)) +
                      " requires fine labels for frames " +
                      std::to_string(window.present) + ".." +
                      std::to_string(window.last_frame()) + " of scene \"" +
                      scene.id + "\"");
  }
  PreparedWindow prepared = prepare_window(window, spec);
  const PresentFrameWindow& pw = prepared.frame;

  std::vector<OccupancyGrid> fine;
  if (needs_fine_labels(mode)) {
    fine.reserve(spec.n_future() + 1);
    for (int t = 0; t <= spec.n_future(); ++t) {
      fine.push_back(resample_to_present(*scene.fine_labels[window.present + t],
                                         pw.ego_at(t), spec));
    }
  }

  Sample sample;
  sample.spec = spec;
  sample.mode = mode;
  sample.occupancy = build_gmo_sequence(pw, spec, mode, &fine);
  if (uses_gso(mode)) sample.occupancy = merge_gso(sample.occupancy, fine);
  sample.flows = generate_backward_flow(pw, sample.occupancy);
  sample.meta.scene_id = scene.id;
  sample.meta.present_index = window.present;
  for (const auto& track : pw.tracks) {
    sample.meta.instances.push_back(
        {track.id, track.category, track.t_in(), track.t_out()});
  }
  return sample;
}

}  // namespace occ4d
