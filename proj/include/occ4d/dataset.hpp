#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "occ4d/grid.hpp"
#include "occ4d/scene.hpp"

namespace occ4d {

// The four benchmark task levels. Numeric codes are part of the file format.
enum class TaskMode : std::uint8_t {
  InflatedGMO = 0,
  FineGMO = 1,
  InflatedGMO_GSO = 2,
  FineGMO_GSO = 3,
};

const char* task_mode_name(TaskMode mode);  // CLI spelling, e.g. "fine-gmo"
// Throws ConfigError on unknown names.
TaskMode parse_task_mode(const std::string& name);
bool is_valid_task_code(std::uint8_t code);
bool uses_fine_gmo(TaskMode mode);
bool uses_gso(TaskMode mode);
inline bool needs_fine_labels(TaskMode mode) {
  return uses_fine_gmo(mode) || uses_gso(mode);
}

struct RetainedInstance {
  std::uint32_t id = 0;
  Category category = Category::Car;
  int t_in = 0;
  int t_out = 0;
  bool operator==(const RetainedInstance&) const = default;
};

struct SampleMetadata {
  std::string scene_id;
  int present_index = 0;
  std::vector<RetainedInstance> instances;
  bool operator==(const SampleMetadata&) const = default;
};

struct Sample {
  GridSpec spec;
  TaskMode mode = TaskMode::InflatedGMO;
  OccupancySequence occupancy;
  // flows[t] points from frame t back to the instance centers at t - 1.
  std::vector<FlowVolume> flows;
  SampleMetadata meta;

  bool operator==(const Sample&) const = default;
};

// Linear indices (ascending) of the voxels whose centers fall inside the
// oriented box: local offsets in [-size/2, +size/2) per axis after rotating
// the center offset by -yaw.
std::vector<std::size_t> voxelize_box_linear(const BoxState& box,
                                             const GridSpec& spec);
std::vector<VoxelIndex> voxelize_box(const BoxState& box,
                                     const GridSpec& spec);

// Exact point-in-box test under the same half-open local bounds.
bool box_contains(const BoxState& box, const Vec3& p);

// Paints one frame of inflated GMO labels. Overlaps go to the smaller box
// (ties: smaller ID). Returns the painted voxels in ascending order.
struct LabeledBox {
  std::uint16_t id = 0;
  BoxState box;
};
std::vector<std::size_t> paint_boxes(std::vector<LabeledBox> boxes,
                                     OccupancyGrid& grid);

// Inflated mode labels every voxel of every retained box. Fine modes keep
// only fine GMO voxels that lie inside a retained box (ID of that box).
// `fine_present` holds Nf + 1 present-frame fine volumes and is required in
// fine modes.
OccupancySequence build_gmo_sequence(
    const PresentFrameWindow& window, const GridSpec& spec, TaskMode mode,
    const std::vector<OccupancyGrid>* fine_present = nullptr);

// Nearest-voxel resampling of a fine volume given in some frame's ego
// coordinates into the present-frame grid. `present_from_frame` maps that
// frame's ego coordinates into the present frame.
OccupancyGrid resample_to_present(const OccupancyGrid& fine,
                                  const Pose& present_from_frame,
                                  const GridSpec& spec);

// Voxel precedence GMO > GSO > Free. Throws SpecError on dimension mismatch.
OccupancySequence merge_gso(const OccupancySequence& seq,
                            const std::vector<OccupancyGrid>& fine_present);

// Backward centripetal flow for t = 0..Nf.
std::vector<FlowVolume> generate_backward_flow(const PresentFrameWindow& window,
                                               const OccupancySequence& seq);

// Filtering, GMO sequence, optional GSO merge and flow for one window.
Sample build_sample(const SequenceWindow& window, const GridSpec& spec,
                    TaskMode mode);

}  // namespace occ4d
