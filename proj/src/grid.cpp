#include "occ4d/grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace occ4d {
namespace {

constexpr double kExtentTolerance = 1e-9;  // m

int axis_cells(const AxisRange& r, double resolution, const char* axis) {
  const double len = r.length();
  if (!(len > 0.0)) {
    throw SpecError(std::string("grid extent along ") + axis +
                    " must be positive");
  }
  const double cells = len / resolution;
  const double rounded = std::round(cells);
  if (rounded < 1.0 ||
      std::abs(rounded * resolution - len) > kExtentTolerance) {
    std::ostringstream os;
    os << "grid extent along " << axis << " (" << len
       << " m) is not an integer multiple of resolution " << resolution;
    throw SpecError(os.str());
  }
  return static_cast<int>(rounded);
}

int axis_cell(double p, double min, double res, int n) {
  if (!(p >= min)) return -1;
  auto i = static_cast<long long>(std::floor((p - min) / res));
  // Re-anchor against the cell bounds as they are computed elsewhere so that
  // p always lies in [min + i*res, min + (i+1)*res).
  if (i > 0 && p < min + static_cast<double>(i) * res) --i;
  if (p >= min + static_cast<double>(i + 1) * res) ++i;
  if (i < 0 || i >= n) return -1;
  return static_cast<int>(i);
}

}  // namespace

GridSpec::GridSpec()
    : GridSpec({-51.2, 51.2}, {-51.2, 51.2}, {-5.0, 3.0}, 0.2, 2, 4) {}

GridSpec::GridSpec(AxisRange x, AxisRange y, AxisRange z, double resolution,
                   int n_past, int n_future)
    : x_(x),
      y_(y),
      z_(z),
      resolution_(resolution),
      n_past_(n_past),
      n_future_(n_future) {
  if (!(resolution > 0.0) || !std::isfinite(resolution)) {
    throw SpecError("grid resolution must be positive");
  }
  if (n_past < 0 || n_future < 0 || n_past > 255 || n_future > 255) {
    throw SpecError("temporal horizons must lie in [0, 255]");
  }
  nx_ = axis_cells(x_, resolution_, "x");
  ny_ = axis_cells(y_, resolution_, "y");
  nz_ = axis_cells(z_, resolution_, "z");
  if (voxel_count() > std::numeric_limits<std::uint32_t>::max()) {
    throw SpecError("grid has more voxels than a 32-bit index can address");
  }
}

GridSpec GridSpec::from_corner(const Vec3& min_corner, double resolution,
                               int nx, int ny, int nz, int n_past,
                               int n_future) {
  if (nx < 1 || ny < 1 || nz < 1) throw SpecError("grid dims must be >= 1");
  return GridSpec({min_corner.x(), min_corner.x() + nx * resolution},
                  {min_corner.y(), min_corner.y() + ny * resolution},
                  {min_corner.z(), min_corner.z() + nz * resolution},
                  resolution, n_past, n_future);
}

double GridSpec::diagonal() const {
  return std::sqrt(x_.length() * x_.length() + y_.length() * y_.length() +
                   z_.length() * z_.length());
}

bool GridSpec::same_geometry(const GridSpec& o) const {
  return nx_ == o.nx_ && ny_ == o.ny_ && nz_ == o.nz_ &&
         std::abs(resolution_ - o.resolution_) <= kExtentTolerance &&
         std::abs(x_.min - o.x_.min) <= kExtentTolerance &&
         std::abs(y_.min - o.y_.min) <= kExtentTolerance &&
         std::abs(z_.min - o.z_.min) <= kExtentTolerance;
}

bool GridSpec::operator==(const GridSpec& o) const {
  return same_geometry(o) && n_past_ == o.n_past_ && n_future_ == o.n_future_;
}

GridSpec GridSpec::with_horizons(int n_past, int n_future) const {
  return GridSpec(x_, y_, z_, resolution_, n_past, n_future);
}

std::string GridSpec::describe() const {
  std::ostringstream os;
  os << nx_ << "x" << ny_ << "x" << nz_ << " @ " << resolution_ << " m, x ["
     << x_.min << ", " << x_.max << "], y [" << y_.min << ", " << y_.max
     << "], z [" << z_.min << ", " << z_.max << "], Np=" << n_past_
     << ", Nf=" << n_future_;
  return os.str();
}

const char* label_name(SemanticLabel label) {
  switch (label) {
    case SemanticLabel::Free:
      return "Free";
    case SemanticLabel::GMO:
      return "GMO";
    case SemanticLabel::GSO:
      return "GSO";
  }
  return "?";
}

bool is_valid_label_code(std::uint8_t code) { return code <= 2; }

std::optional<VoxelIndex> world_to_voxel(const Vec3& p, const GridSpec& spec) {
  const double r = spec.resolution();
  const int ix = axis_cell(p.x(), spec.x().min, r, spec.nx());
  if (ix < 0) return std::nullopt;
  const int iy = axis_cell(p.y(), spec.y().min, r, spec.ny());
  if (iy < 0) return std::nullopt;
  const int iz = axis_cell(p.z(), spec.z().min, r, spec.nz());
  if (iz < 0) return std::nullopt;
  return VoxelIndex{ix, iy, iz};
}

Vec3 voxel_center(const VoxelIndex& idx, const GridSpec& spec) {
  if (!in_dims(spec, idx)) {
    std::ostringstream os;
    os << "voxel index (" << idx.ix << ", " << idx.iy << ", " << idx.iz
       << ") outside grid dims " << spec.nx() << "x" << spec.ny() << "x"
       << spec.nz();
    throw SpecError(os.str());
  }
  return voxel_center_unchecked(idx, spec);
}

OccupancyGrid::OccupancyGrid(GridSpec spec, bool with_instance_ids)
    : spec_(std::move(spec)),
      labels_(spec_.voxel_count(), SemanticLabel::Free),
      has_ids_(with_instance_ids) {
  if (has_ids_) ids_.assign(labels_.size(), 0);
}

void OccupancyGrid::enable_instance_ids() {
  if (has_ids_) return;
  has_ids_ = true;
  ids_.assign(labels_.size(), 0);
}

void OccupancyGrid::drop_instance_ids() {
  has_ids_ = false;
  ids_.clear();
  ids_.shrink_to_fit();
}

void OccupancyGrid::set(std::size_t linear, SemanticLabel label,
                        std::uint16_t id) {
  labels_[linear] = label;
  if (has_ids_) ids_[linear] = label == SemanticLabel::GMO ? id : 0;
}

void OccupancyGrid::validate() const {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (!is_valid_label_code(static_cast<std::uint8_t>(labels_[i]))) {
      throw SpecError("unknown label code " +
                      std::to_string(static_cast<int>(labels_[i])) +
                      " at voxel " + std::to_string(i));
    }
    if (has_ids_ && ids_[i] != 0 && labels_[i] != SemanticLabel::GMO) {
      throw SpecError("instance id " + std::to_string(ids_[i]) +
                      " on non-GMO voxel " + std::to_string(i));
    }
  }
}

OccupancyGrid OccupancyGrid::with_horizons(int n_past, int n_future) const {
  OccupancyGrid out = *this;
  out.spec_ = spec_.with_horizons(n_past, n_future);
  return out;
}

bool OccupancyGrid::operator==(const OccupancyGrid& o) const {
  return spec_ == o.spec_ && labels_ == o.labels_ && has_ids_ == o.has_ids_ &&
         ids_ == o.ids_;
}

std::size_t count_label(const OccupancyGrid& grid, SemanticLabel label) {
  const auto labels = grid.labels();
  return static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), label));
}

OccupancySequence::OccupancySequence(std::vector<OccupancyGrid> frames)
    : frames_(std::move(frames)) {
  validate();
}

OccupancySequence OccupancySequence::empty(const GridSpec& spec,
                                           bool with_instance_ids) {
  std::vector<OccupancyGrid> frames;
  frames.reserve(spec.n_future() + 1);
  for (int t = 0; t <= spec.n_future(); ++t) {
    frames.emplace_back(spec, with_instance_ids);
  }
  return OccupancySequence(std::move(frames));
}

const GridSpec& OccupancySequence::spec() const {
  if (frames_.empty()) throw SpecError("occupancy sequence has no frames");
  return frames_.front().spec();
}

bool OccupancySequence::has_instance_ids() const {
  return !frames_.empty() &&
         std::all_of(frames_.begin(), frames_.end(),
                     [](const OccupancyGrid& g) { return g.has_instance_ids(); });
}

void OccupancySequence::validate() const {
  if (frames_.empty()) throw SpecError("occupancy sequence has no frames");
  const GridSpec& s = frames_.front().spec();
  if (frame_count() != s.n_future() + 1) {
    throw SpecError("occupancy sequence has " + std::to_string(frame_count()) +
                    " frames, expected Nf+1 = " +
                    std::to_string(s.n_future() + 1));
  }
  for (const auto& f : frames_) {
    if (!(f.spec() == s)) {
      throw SpecError("occupancy frames do not share one grid spec");
    }
  }
}

FlowVolume::FlowVolume(GridSpec spec)
    : spec_(std::move(spec)), valid_(spec_.voxel_count(), 0) {}

Vec3 FlowVolume::vector_at(std::size_t linear) const {
  if (!valid_[linear]) return Vec3::Zero();
  const auto it =
      std::lower_bound(indices_.begin(), indices_.end(),
                       static_cast<std::uint32_t>(linear));
  return vectors_[static_cast<std::size_t>(it - indices_.begin())];
}

void FlowVolume::push(std::size_t linear, const Vec3& v) {
  if (linear >= valid_.size()) {
    throw SpecError("flow voxel index " + std::to_string(linear) +
                    " outside grid");
  }
  if (!indices_.empty() && linear <= indices_.back()) {
    throw SpecError("flow entries must be pushed in increasing voxel order");
  }
  if (!v.allFinite() || v.norm() > spec_.diagonal() + 1e-9) {
    throw SpecError("flow vector at voxel " + std::to_string(linear) +
                    " exceeds the grid diagonal");
  }
  valid_[linear] = 1;
  indices_.push_back(static_cast<std::uint32_t>(linear));
  vectors_.push_back(v);
}

bool FlowVolume::operator==(const FlowVolume& o) const {
  return spec_ == o.spec_ && valid_ == o.valid_ && indices_ == o.indices_ &&
         vectors_ == o.vectors_;
}

}  // namespace occ4d
