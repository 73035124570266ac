#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "occ4d/dataset.hpp"
#include "occ4d/grid.hpp"
#include "occ4d/scene.hpp"

namespace occ4d {

// A method's present + future occupancy (frames 0..Nf), with optional
// instance IDs (on the occupancy frames) and backward flows.
struct Forecast {
  OccupancySequence occupancy;
  std::optional<std::vector<FlowVolume>> flows;
  std::string method;

  bool has_instance_ids() const { return occupancy.has_instance_ids(); }
};

// Throws SpecError unless the forecast has Nf + 1 frames on `spec`'s lattice.
void check_forecast(const Forecast& forecast, const GridSpec& spec);

// Frames 1..Nf are copies of the present grid.
Forecast static_world(const OccupancyGrid& present, int n_future);

// 2D occupancy map aligned with a grid's x-y plane; cell (ix, iy) at index
// ix * ny + iy.
struct BevMap {
  double x_min = 0.0;
  double y_min = 0.0;
  double resolution = 0.2;
  int nx = 0;
  int ny = 0;
  std::vector<std::uint8_t> occupied;
  std::vector<std::uint16_t> instance_ids;  // empty or nx * ny

  BevMap() = default;
  // Empty map covering the x-y footprint of `spec`.
  explicit BevMap(const GridSpec& spec);
  std::size_t index(int ix, int iy) const {
    return static_cast<std::size_t>(ix) * ny + iy;
  }
  bool operator==(const BevMap&) const = default;
};

inline constexpr double kDefaultBevGround = -2.0;  // m
inline constexpr double kDefaultBevHeight = 2.0;   // m

// Replicates each occupied cell along z over voxels whose centers lie in
// [z_ground, z_ground + height). Output is GMO-only; IDs are copied when the
// map carries them. Throws SpecError if the map is not aligned to `spec`.
OccupancyGrid lift_bev(const BevMap& bev, double z_ground, double height,
                       const GridSpec& spec);
Forecast lift_bev_sequence(const std::vector<BevMap>& frames, double z_ground,
                           double height, const GridSpec& spec);

// Majority label per voxel; ties go to GMO, then GSO.
OccupancyGrid voxelize_labeled_points(const LabeledPointCloud& cloud,
                                      const GridSpec& spec);
Forecast voxelize_labeled_points(const std::vector<LabeledPointCloud>& clouds,
                                 const GridSpec& spec);

// Extrapolates each retained track from its last two observed states
// (t <= 0) with constant displacement and yaw rate per step; single
// observations are held static. Produces IDs and backward flows.
Forecast constant_velocity_forecast(const PresentFrameWindow& window,
                                    const GridSpec& spec);

// Reads a forecast GridFile (and, when given, a FlowFile). Flow vectors are
// kept only on voxels the forecast labels GMO. Throws FormatError/SpecError
// with descriptive messages.
Forecast load_external_forecast(const std::string& grid_path,
                                const GridSpec& eval_spec,
                                const std::string& flow_path = "");

}  // namespace occ4d
