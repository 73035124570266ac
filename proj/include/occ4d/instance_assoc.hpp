#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "occ4d/grid.hpp"

namespace occ4d {

struct InstanceCenter {
  std::uint16_t id = 0;
  Vec3 position = Vec3::Zero();
  double score = 0.0;
};

// Per frame: centers with IDs unique within the frame.
using InstanceCenters = std::vector<std::vector<InstanceCenter>>;

struct AssocOptions {
  double nms_radius = 2.0;    // m
  double min_prob = 0.5;
  double assoc_radius = 2.0;  // m
};

// Hard-label variant. Scores are the 3x3x3 box-averaged GMO density; each
// 26-connected GMO blob contributes its density argmax (ties: nearest to the
// blob centroid, then lowest index) as one candidate. Candidates below
// min_prob are dropped, the rest go through greedy NMS. IDs are assigned
// 1, 2, ... in acceptance order.
std::vector<InstanceCenter> extract_centers(const OccupancyGrid& grid,
                                            double nms_radius, double min_prob);

// Probability-volume variant: candidates are voxels whose probability is
// >= min_prob and >= every 26-neighbor, then greedy NMS.
std::vector<InstanceCenter> extract_centers(std::span<const float> gmo_prob,
                                            const GridSpec& spec,
                                            double nms_radius, double min_prob);

struct AssociationResult {
  OccupancySequence ids;     // input labels with assigned instance IDs
  InstanceCenters centers;   // per frame, centroid of each ID's voxels
};

// Frame 0: each blob takes the ID of the center it contains; voxels of blobs
// without one take the nearest center within assoc_radius, else a fresh ID
// per connected component. Frames t >= 1: each GMO voxel follows its flow
// (voxel center + flow) and inherits the nearest frame t-1 center within
// assoc_radius (ties: smaller ID); the rest spawn fresh IDs per connected
// component. Throws ConfigError when a flow frame is missing.
AssociationResult associate_via_flow(const OccupancySequence& labels,
                                     const std::vector<FlowVolume>& flows,
                                     const std::vector<InstanceCenter>& centers0,
                                     double assoc_radius);

// extract_centers on frame 0 followed by associate_via_flow.
AssociationResult assign_instance_ids(const OccupancySequence& labels,
                                      const std::vector<FlowVolume>& flows,
                                      const AssocOptions& options = {});

}  // namespace occ4d
