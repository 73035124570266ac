#include "occ4d/baselines.hpp"

#include <array>
#include <cmath>
#include <unordered_map>

#include "occ4d/io.hpp"

namespace occ4d {
namespace {

constexpr double kAlignTolerance = 1e-9;

// Kinematic state of one track extrapolated from its last two observations.
struct Extrapolation {
  std::uint16_t id = 0;
  BoxState anchor;  // last observed state
  int anchor_t = 0;
  Vec3 step = Vec3::Zero();  // displacement per frame
  double yaw_rate = 0.0;     // radians per frame

  BoxState at(int t) const {
    BoxState b = anchor;
    const double dt = t - anchor_t;
    b.center = anchor.center + step * dt;
    b.yaw = wrap_angle(anchor.yaw + yaw_rate * dt);
    return b;
  }
};

Extrapolation extrapolate(const WindowTrack& track) {
  Extrapolation ex;
  ex.id = static_cast<std::uint16_t>(track.id);
  auto last = track.states.upper_bound(0);
  // Retained tracks always have an observation at or before t = 0.
  --last;
  ex.anchor = last->second;
  ex.anchor_t = last->first;
  if (last != track.states.begin()) {
    const auto prev = std::prev(last);
    const double span = last->first - prev->first;
    ex.step = (last->second.center - prev->second.center) / span;
    ex.yaw_rate = wrap_angle(last->second.yaw - prev->second.yaw) / span;
  }
  return ex;
}

}  // namespace

void check_forecast(const Forecast& forecast, const GridSpec& spec) {
  const GridSpec& fs = forecast.occupancy.spec();
  if (!fs.same_geometry(spec)) {
    throw SpecError("forecast grid " + fs.describe() +
                    " does not match evaluation grid " + spec.describe());
  }
  if (forecast.occupancy.frame_count() != spec.n_future() + 1) {
    throw SpecError("forecast has " +
                    std::to_string(forecast.occupancy.frame_count()) +
                    " frames, expected Nf+1 = " +
                    std::to_string(spec.n_future() + 1));
  }
  if (forecast.flows &&
      static_cast<int>(forecast.flows->size()) != spec.n_future() + 1) {
    throw SpecError("forecast flow has " +
                    std::to_string(forecast.flows->size()) +
                    " frames, expected " + std::to_string(spec.n_future() + 1));
  }
}

Forecast static_world(const OccupancyGrid& present, int n_future) {
  const OccupancyGrid base =
      present.with_horizons(present.spec().n_past(), n_future);
  std::vector<OccupancyGrid> frames(static_cast<std::size_t>(n_future) + 1,
                                    base);
  Forecast f;
  f.occupancy = OccupancySequence(std::move(frames));
  f.method = "static-world";
  return f;
}

BevMap::BevMap(const GridSpec& spec)
    : x_min(spec.x().min),
      y_min(spec.y().min),
      resolution(spec.resolution()),
      nx(spec.nx()),
      ny(spec.ny()),
      occupied(static_cast<std::size_t>(spec.nx()) * spec.ny(), 0) {}

OccupancyGrid lift_bev(const BevMap& bev, double z_ground, double height,
                       const GridSpec& spec) {
  if (std::abs(bev.resolution - spec.resolution()) > kAlignTolerance) {
    throw SpecError("BEV resolution " + std::to_string(bev.resolution) +
                    " m does not match grid resolution " +
                    std::to_string(spec.resolution()) + " m");
  }
  if (bev.nx != spec.nx() || bev.ny != spec.ny() ||
      std::abs(bev.x_min - spec.x().min) > kAlignTolerance ||
      std::abs(bev.y_min - spec.y().min) > kAlignTolerance) {
    throw SpecError("BEV map " + std::to_string(bev.nx) + "x" +
                    std::to_string(bev.ny) +
                    " is not aligned with the grid x-y plane");
  }
  if (bev.occupied.size() != static_cast<std::size_t>(bev.nx) * bev.ny) {
    throw SpecError("BEV occupancy plane has the wrong length");
  }
  const bool with_ids = !bev.instance_ids.empty();
  OccupancyGrid grid(spec, with_ids);
  std::vector<int> column;
  for (int iz = 0; iz < spec.nz(); ++iz) {
    const double zc = spec.z().min + (iz + 0.5) * spec.resolution();
    if (zc >= z_ground && zc < z_ground + height) column.push_back(iz);
  }
  for (int ix = 0; ix < bev.nx; ++ix) {
    for (int iy = 0; iy < bev.ny; ++iy) {
      const std::size_t cell = bev.index(ix, iy);
      if (!bev.occupied[cell]) continue;
      const std::uint16_t id = with_ids ? bev.instance_ids[cell] : 0;
      for (int iz : column) grid.set(VoxelIndex{ix, iy, iz}, SemanticLabel::GMO, id);
    }
  }
  return grid;
}

Forecast lift_bev_sequence(const std::vector<BevMap>& frames, double z_ground,
                           double height, const GridSpec& spec) {
  if (static_cast<int>(frames.size()) != spec.n_future() + 1) {
    throw SpecError("BEV forecast has " + std::to_string(frames.size()) +
                    " frames, expected Nf+1 = " +
                    std::to_string(spec.n_future() + 1));
  }
  std::vector<OccupancyGrid> grids;
  grids.reserve(frames.size());
  for (const auto& bev : frames) {
    grids.push_back(lift_bev(bev, z_ground, height, spec));
  }
  Forecast f;
  f.occupancy = OccupancySequence(std::move(grids));
  f.method = "bev-lift";
  return f;
}

OccupancyGrid voxelize_labeled_points(const LabeledPointCloud& cloud,
                                      const GridSpec& spec) {
  if (cloud.points.size() != cloud.labels.size()) {
    throw SpecError("point cloud has mismatched label count");
  }
  std::unordered_map<std::size_t, std::array<std::uint32_t, 3>> votes;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const auto idx = world_to_voxel(cloud.points[i], spec);
    if (!idx) continue;
    ++votes[linear_index(spec, *idx)][static_cast<std::size_t>(cloud.labels[i])];
  }
  OccupancyGrid grid(spec);
  for (const auto& [li, v] : votes) {
    const auto free_n = v[0];
    const auto gmo = v[1];
    const auto gso = v[2];
    SemanticLabel label = SemanticLabel::Free;
    if (gmo >= gso && gmo >= free_n) {
      label = SemanticLabel::GMO;
    } else if (gso >= free_n) {
      label = SemanticLabel::GSO;
    }
    grid.set(li, label);
  }
  return grid;
}

Forecast voxelize_labeled_points(const std::vector<LabeledPointCloud>& clouds,
                                 const GridSpec& spec) {
  if (static_cast<int>(clouds.size()) != spec.n_future() + 1) {
    throw SpecError("point forecast has " + std::to_string(clouds.size()) +
                    " frames, expected Nf+1 = " +
                    std::to_string(spec.n_future() + 1));
  }
  std::vector<OccupancyGrid> grids;
  grids.reserve(clouds.size());
  for (const auto& c : clouds) grids.push_back(voxelize_labeled_points(c, spec));
  Forecast f;
  f.occupancy = OccupancySequence(std::move(grids));
  f.method = "points";
  return f;
}

Forecast constant_velocity_forecast(const PresentFrameWindow& window,
                                    const GridSpec& spec) {
  std::vector<Extrapolation> tracks;
  tracks.reserve(window.tracks.size());
  std::vector<int> slot(0x10000, -1);
  for (const auto& track : window.tracks) {
    if (track.t_in() > 0) continue;
    slot[track.id] = static_cast<int>(tracks.size());
    tracks.push_back(extrapolate(track));
  }

  OccupancySequence seq = OccupancySequence::empty(spec, true);
  std::vector<FlowVolume> flows;
  flows.reserve(spec.n_future() + 1);
  for (int t = 0; t <= spec.n_future(); ++t) {
    std::vector<LabeledBox> boxes;
    boxes.reserve(tracks.size());
    for (const auto& ex : tracks) boxes.push_back({ex.id, ex.at(t)});
    OccupancyGrid& grid = seq.frame(t);
    const std::vector<std::size_t> painted = paint_boxes(std::move(boxes), grid);

    FlowVolume flow(spec);
    for (std::size_t li : painted) {
      const Extrapolation& ex = tracks[slot[grid.instance_id(li)]];
      flow.push(li, ex.at(t - 1).center -
                        voxel_center_unchecked(voxel_from_linear(spec, li), spec));
    }
    flows.push_back(std::move(flow));
  }
  Forecast f;
  f.occupancy = std::move(seq);
  f.flows = std::move(flows);
  f.method = "constant-velocity";
  return f;
}

Forecast load_external_forecast(const std::string& grid_path,
                                const GridSpec& eval_spec,
                                const std::string& flow_path) {
  GridFileData grid = load_grid_file(grid_path);
  Forecast f;
  f.occupancy = std::move(grid.frames);
  f.method = std::filesystem::path(grid_path).stem().string();
  if (!flow_path.empty()) {
    FlowFileData flow = load_flow_file(flow_path);
    if (!flow.flows.front().spec().same_geometry(f.occupancy.spec())) {
      throw SpecError("flow file grid does not match forecast grid");
    }
    if (flow.flows.size() != static_cast<std::size_t>(f.occupancy.frame_count())) {
      throw SpecError("flow file has " + std::to_string(flow.flows.size()) +
                      " frames, forecast has " +
                      std::to_string(f.occupancy.frame_count()));
    }
    std::vector<FlowVolume> masked;
    masked.reserve(flow.flows.size());
    for (int t = 0; t < f.occupancy.frame_count(); ++t) {
      const FlowVolume& src = flow.flows[t];
      const OccupancyGrid& g = f.occupancy.frame(t);
      FlowVolume dst(g.spec());
      const auto idx = src.valid_indices();
      const auto vec = src.valid_vectors();
      for (std::size_t k = 0; k < idx.size(); ++k) {
        if (g.label(idx[k]) == SemanticLabel::GMO) dst.push(idx[k], vec[k]);
      }
      masked.push_back(std::move(dst));
    }
    f.flows = std::move(masked);
  }
  check_forecast(f, eval_spec);
  return f;
}

}  // namespace occ4d
