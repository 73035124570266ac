#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "occ4d/error.hpp"

namespace occ4d {

using Vec3 = Eigen::Vector3d;

struct AxisRange {
  double min = 0.0;
  double max = 0.0;
  double length() const { return max - min; }
};

// Spatial extent, resolution and temporal horizons shared by every volume of
// a sample. Immutable once constructed; the constructor validates that every
// extent is an integer multiple of the resolution.
class GridSpec {
 public:
  // Range [-51.2, 51.2] x [-51.2, 51.2] x [-5, 3] m at 0.2 m, Np = 2, Nf = 4.
  GridSpec();
  GridSpec(AxisRange x, AxisRange y, AxisRange z, double resolution,
           int n_past, int n_future);

  // Builds a spec from a lower corner and voxel counts (used by file readers).
  static GridSpec from_corner(const Vec3& min_corner, double resolution,
                              int nx, int ny, int nz, int n_past,
                              int n_future);

  const AxisRange& x() const { return x_; }
  const AxisRange& y() const { return y_; }
  const AxisRange& z() const { return z_; }
  double resolution() const { return resolution_; }
  int n_past() const { return n_past_; }
  int n_future() const { return n_future_; }
  int window_length() const { return n_past_ + n_future_ + 1; }

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  int nz() const { return nz_; }
  std::size_t voxel_count() const {
    return static_cast<std::size_t>(nx_) * ny_ * nz_;
  }

  Vec3 min_corner() const { return {x_.min, y_.min, z_.min}; }
  Vec3 max_corner() const { return {x_.max, y_.max, z_.max}; }
  double diagonal() const;

  // Same voxel lattice (dims, lower corner, resolution within 1e-9 m).
  // Temporal horizons are not compared.
  bool same_geometry(const GridSpec& other) const;
  // Geometry plus n_past / n_future.
  bool operator==(const GridSpec& other) const;

  GridSpec with_horizons(int n_past, int n_future) const;
  std::string describe() const;

 private:
  AxisRange x_, y_, z_;
  double resolution_;
  int n_past_, n_future_;
  int nx_ = 0, ny_ = 0, nz_ = 0;
};

enum class SemanticLabel : std::uint8_t { Free = 0, GMO = 1, GSO = 2 };

const char* label_name(SemanticLabel label);
bool is_valid_label_code(std::uint8_t code);

struct VoxelIndex {
  int ix = 0;
  int iy = 0;
  int iz = 0;
  bool operator==(const VoxelIndex&) const = default;
  auto operator<=>(const VoxelIndex&) const = default;
};

// Memory layout: iz fastest, then iy, then ix.
inline std::size_t linear_index(const GridSpec& spec, const VoxelIndex& idx) {
  return (static_cast<std::size_t>(idx.ix) * spec.ny() + idx.iy) * spec.nz() +
         idx.iz;
}

inline VoxelIndex voxel_from_linear(const GridSpec& spec, std::size_t linear) {
  const auto nz = static_cast<std::size_t>(spec.nz());
  const auto ny = static_cast<std::size_t>(spec.ny());
  VoxelIndex idx;
  idx.iz = static_cast<int>(linear % nz);
  idx.iy = static_cast<int>((linear / nz) % ny);
  idx.ix = static_cast<int>(linear / (nz * ny));
  return idx;
}

inline bool in_dims(const GridSpec& spec, const VoxelIndex& idx) {
  return idx.ix >= 0 && idx.iy >= 0 && idx.iz >= 0 && idx.ix < spec.nx() &&
         idx.iy < spec.ny() && idx.iz < spec.nz();
}

// Half-open cell membership: voxel i along an axis covers
// [min + i*res, min + (i+1)*res). Returns nullopt outside the extent.
std::optional<VoxelIndex> world_to_voxel(const Vec3& p, const GridSpec& spec);

// Throws SpecError when idx is outside the grid dims.
Vec3 voxel_center(const VoxelIndex& idx, const GridSpec& spec);

// Unchecked variant for hot loops.
inline Vec3 voxel_center_unchecked(const VoxelIndex& idx,
                                   const GridSpec& spec) {
  const double r = spec.resolution();
  return {spec.x().min + (idx.ix + 0.5) * r, spec.y().min + (idx.iy + 0.5) * r,
          spec.z().min + (idx.iz + 0.5) * r};
}

// Dense label volume with an optional 16-bit instance-ID plane (0 = none).
class OccupancyGrid {
 public:
  explicit OccupancyGrid(GridSpec spec, bool with_instance_ids = false);

  const GridSpec& spec() const { return spec_; }
  std::size_t size() const { return labels_.size(); }

  std::span<const SemanticLabel> labels() const { return labels_; }
  std::span<SemanticLabel> labels() { return labels_; }

  SemanticLabel label(std::size_t linear) const { return labels_[linear]; }
  SemanticLabel at(const VoxelIndex& idx) const {
    return labels_[linear_index(spec_, idx)];
  }

  bool has_instance_ids() const { return has_ids_; }
  void enable_instance_ids();
  void drop_instance_ids();
  std::span<const std::uint16_t> instance_ids() const { return ids_; }
  std::span<std::uint16_t> instance_ids() { return ids_; }
  std::uint16_t instance_id(std::size_t linear) const {
    return has_ids_ ? ids_[linear] : 0;
  }

  // Sets the label and (when the ID plane exists) the instance ID. Non-GMO
  // labels always clear the ID.
  void set(std::size_t linear, SemanticLabel label, std::uint16_t id = 0);
  void set(const VoxelIndex& idx, SemanticLabel label, std::uint16_t id = 0) {
    set(linear_index(spec_, idx), label, id);
  }

  // Throws SpecError if an instance ID sits on a non-GMO voxel or an unknown
  // label code is present.
  void validate() const;

  // Copy re-tagged with other temporal horizons (same lattice).
  OccupancyGrid with_horizons(int n_past, int n_future) const;

  bool operator==(const OccupancyGrid& other) const;

 private:
  GridSpec spec_;
  std::vector<SemanticLabel> labels_;
  bool has_ids_ = false;
  std::vector<std::uint16_t> ids_;
};

std::size_t count_label(const OccupancyGrid& grid, SemanticLabel label);

// Present frame (index 0) followed by Nf future frames, all sharing one spec
// expressed in the present ego frame.
class OccupancySequence {
 public:
  OccupancySequence() = default;
  explicit OccupancySequence(std::vector<OccupancyGrid> frames);
  // Nf + 1 all-Free frames.
  static OccupancySequence empty(const GridSpec& spec, bool with_instance_ids);

  const GridSpec& spec() const;
  int frame_count() const { return static_cast<int>(frames_.size()); }
  int n_future() const { return frame_count() - 1; }
  const OccupancyGrid& frame(int t) const { return frames_.at(t); }
  OccupancyGrid& frame(int t) { return frames_.at(t); }
  const std::vector<OccupancyGrid>& frames() const { return frames_; }
  bool has_instance_ids() const;

  // Frame count must equal spec.n_future() + 1 and every frame must share
  // the spec geometry.
  void validate() const;

  bool operator==(const OccupancySequence& other) const = default;

 private:
  std::vector<OccupancyGrid> frames_;
};

// Per-voxel backward flow with a dense validity mask. Vectors are stored only
// for valid voxels (ordered by linear index); every invalid voxel reads as the
// zero vector.
class FlowVolume {
 public:
  FlowVolume() = default;
  explicit FlowVolume(GridSpec spec);

  const GridSpec& spec() const { return spec_; }
  std::size_t size() const { return valid_.size(); }

  bool valid(std::size_t linear) const { return valid_[linear] != 0; }
  // Zero vector for invalid voxels.
  Vec3 vector_at(std::size_t linear) const;

  // Appends a valid entry. Linear indices must be strictly increasing across
  // calls; magnitude must not exceed the grid diagonal.
  void push(std::size_t linear, const Vec3& v);

  std::size_t valid_count() const { return indices_.size(); }
  std::span<const std::uint32_t> valid_indices() const { return indices_; }
  std::span<const Vec3> valid_vectors() const { return vectors_; }
  std::span<const std::uint8_t> mask() const { return valid_; }

  bool operator==(const FlowVolume& other) const;

 private:
  GridSpec spec_;
  std::vector<std::uint8_t> valid_;
  std::vector<std::uint32_t> indices_;
  std::vector<Vec3> vectors_;
};

}  // namespace occ4d
