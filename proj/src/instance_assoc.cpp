#include "occ4d/instance_assoc.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>

namespace occ4d {
namespace {

// Sorted voxel set with 26-connected component labels.
struct VoxelSet {
  std::vector<std::uint32_t> voxels;  // ascending linear indices
  std::vector<int> component;         // parallel to voxels
  int component_count = 0;

  std::ptrdiff_t find(std::size_t li) const {
    const auto it = std::lower_bound(voxels.begin(), voxels.end(),
                                     static_cast<std::uint32_t>(li));
    if (it == voxels.end() || *it != li) return -1;
    return it - voxels.begin();
  }
};

template <typename Fn>
void for_each_neighbor(const GridSpec& spec, const VoxelIndex& v, Fn&& fn) {
  for (int dx = -1; dx <= 1; ++dx) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dz = -1; dz <= 1; ++dz) {
        if (dx == 0 && dy == 0 && dz == 0) continue;
        const VoxelIndex n{v.ix + dx, v.iy + dy, v.iz + dz};
        if (in_dims(spec, n)) fn(n, linear_index(spec, n));
      }
    }
  }
}

void label_components(const GridSpec& spec, VoxelSet& set) {
  set.component.assign(set.voxels.size(), -1);
  set.component_count = 0;
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < set.voxels.size(); ++seed) {
    if (set.component[seed] >= 0) continue;
    const int c = set.component_count++;
    set.component[seed] = c;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t k = stack.back();
      stack.pop_back();
      for_each_neighbor(spec, voxel_from_linear(spec, set.voxels[k]),
                        [&](const VoxelIndex&, std::size_t nli) {
                          const auto j = set.find(nli);
                          if (j >= 0 && set.component[j] < 0) {
                            set.component[j] = c;
                            stack.push_back(static_cast<std::size_t>(j));
                          }
                        });
    }
  }
}

VoxelSet gmo_voxels(const OccupancyGrid& grid) {
  VoxelSet set;
  const auto labels = grid.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == SemanticLabel::GMO) {
      set.voxels.push_back(static_cast<std::uint32_t>(i));
    }
  }
  return set;
}

std::vector<InstanceCenter> greedy_nms(std::vector<InstanceCenter> candidates,
                                       std::vector<std::size_t> order_key,
                                       double nms_radius) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (candidates[a].score != candidates[b].score) {
      return candidates[a].score > candidates[b].score;
    }
    return order_key[a] < order_key[b];
  });
  std::vector<InstanceCenter> accepted;
  for (std::size_t k : order) {
    const InstanceCenter& c = candidates[k];
    const bool suppressed =
        std::any_of(accepted.begin(), accepted.end(), [&](const auto& a) {
          return (a.position - c.position).norm() <= nms_radius;
        });
    if (suppressed) continue;
    if (accepted.size() >= 0xFFFF) throw Error("too many instance centers");
    InstanceCenter out = c;
    out.id = static_cast<std::uint16_t>(accepted.size() + 1);
    accepted.push_back(out);
  }
  return accepted;
}

// Nearest center within radius; ties go to the smaller ID. 0 when none.
std::uint16_t nearest_center(const std::vector<InstanceCenter>& centers,
                             const Vec3& p, double radius) {
  std::uint16_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& c : centers) {
    const double d = (c.position - p).norm();
    if (d > radius) continue;
    if (d < best_d || (d == best_d && c.id < best)) {
      best = c.id;
      best_d = d;
    }
  }
  return best;
}

class IdAllocator {
 public:
  explicit IdAllocator(std::uint32_t next) : next_(next) {}
  std::uint16_t fresh() {
    if (next_ > 0xFFFF) throw Error("instance id space exhausted");
    return static_cast<std::uint16_t>(next_++);
  }

 private:
  std::uint32_t next_;
};

// Gives every still-unassigned voxel (id 0) a fresh ID per connected
// component of the unassigned set.
void spawn_unmatched(const GridSpec& spec, const VoxelSet& gmo,
                     std::vector<std::uint16_t>& ids, IdAllocator& alloc) {
  VoxelSet rest;
  for (std::size_t k = 0; k < gmo.voxels.size(); ++k) {
    if (ids[k] == 0) rest.voxels.push_back(gmo.voxels[k]);
  }
  if (rest.voxels.empty()) return;
  label_components(spec, rest);
  std::vector<std::uint16_t> comp_id(rest.component_count);
  for (auto& id : comp_id) id = alloc.fresh();
  std::size_t r = 0;
  for (std::size_t k = 0; k < gmo.voxels.size(); ++k) {
    if (ids[k] != 0) continue;
    ids[k] = comp_id[rest.component[r++]];
  }
}

std::vector<InstanceCenter> centroids(const GridSpec& spec, const VoxelSet& gmo,
                                      const std::vector<std::uint16_t>& ids) {
  std::map<std::uint16_t, std::pair<Vec3, std::size_t>> acc;
  for (std::size_t k = 0; k < gmo.voxels.size(); ++k) {
    auto& [sum, n] = acc[ids[k]];
    if (n == 0) sum = Vec3::Zero();
    sum += voxel_center_unchecked(voxel_from_linear(spec, gmo.voxels[k]), spec);
    ++n;
  }
  std::vector<InstanceCenter> out;
  out.reserve(acc.size());
  for (const auto& [id, sn] : acc) {
    out.push_back({id, sn.first / static_cast<double>(sn.second),
                   static_cast<double>(sn.second)});
  }
  return out;
}

OccupancyGrid with_ids(const OccupancyGrid& labels, const VoxelSet& gmo,
                       const std::vector<std::uint16_t>& ids) {
  OccupancyGrid out = labels;
  out.drop_instance_ids();
  out.enable_instance_ids();
  auto plane = out.instance_ids();
  for (std::size_t k = 0; k < gmo.voxels.size(); ++k) {
    plane[gmo.voxels[k]] = ids[k];
  }
  return out;
}

}  // namespace

std::vector<InstanceCenter> extract_centers(const OccupancyGrid& grid,
                                            double nms_radius,
                                            double min_prob) {
  const GridSpec& spec = grid.spec();
  VoxelSet gmo = gmo_voxels(grid);
  if (gmo.voxels.empty()) return {};
  label_components(spec, gmo);

  std::vector<double> density(gmo.voxels.size());
  for (std::size_t k = 0; k < gmo.voxels.size(); ++k) {
    int n = 1;
    for_each_neighbor(spec, voxel_from_linear(spec, gmo.voxels[k]),
                      [&](const VoxelIndex&, std::size_t nli) {
                        if (grid.label(nli) == SemanticLabel::GMO) ++n;
                      });
    density[k] = n / 27.0;
  }

  std::vector<Vec3> blob_sum(gmo.component_count, Vec3::Zero());
  std::vector<std::size_t> blob_n(gmo.component_count, 0);
  for (std::size_t k = 0; k < gmo.voxels.size(); ++k) {
    blob_sum[gmo.component[k]] +=
        voxel_center_unchecked(voxel_from_linear(spec, gmo.voxels[k]), spec);
    ++blob_n[gmo.component[k]];
  }

  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> best(gmo.component_count, kNone);
  std::vector<double> best_dist(gmo.component_count, 0.0);
  for (std::size_t k = 0; k < gmo.voxels.size(); ++k) {
    const int c = gmo.component[k];
    const Vec3 centroid = blob_sum[c] / static_cast<double>(blob_n[c]);
    const double d =
        (voxel_center_unchecked(voxel_from_linear(spec, gmo.voxels[k]), spec) -
         centroid)
            .norm();
    // Voxels are visited in ascending index, so strict comparisons keep the
    // lowest index among exact ties.
    if (best[c] == kNone || density[k] > density[best[c]] ||
        (density[k] == density[best[c]] && d < best_dist[c])) {
      best[c] = k;
      best_dist[c] = d;
    }
  }

  std::vector<InstanceCenter> candidates;
  std::vector<std::size_t> keys;
  for (int c = 0; c < gmo.component_count; ++c) {
    const std::size_t k = best[c];
    if (density[k] < min_prob) continue;
    candidates.push_back(
        {0, voxel_center_unchecked(voxel_from_linear(spec, gmo.voxels[k]), spec),
         density[k]});
    keys.push_back(gmo.voxels[k]);
  }
  return greedy_nms(std::move(candidates), std::move(keys), nms_radius);
}

std::vector<InstanceCenter> extract_centers(std::span<const float> gmo_prob,
                                            const GridSpec& spec,
                                            double nms_radius,
                                            double min_prob) {
  if (gmo_prob.size() != spec.voxel_count()) {
    throw SpecError("probability volume has " +
                    std::to_string(gmo_prob.size()) + " voxels, expected " +
                    std::to_string(spec.voxel_count()));
  }
  std::vector<InstanceCenter> candidates;
  std::vector<std::size_t> keys;
  for (std::size_t li = 0; li < gmo_prob.size(); ++li) {
    const float p = gmo_prob[li];
    if (!(p >= min_prob)) continue;
    const VoxelIndex v = voxel_from_linear(spec, li);
    bool is_max = true;
    for_each_neighbor(spec, v, [&](const VoxelIndex&, std::size_t nli) {
      if (gmo_prob[nli] > p) is_max = false;
    });
    if (!is_max) continue;
    candidates.push_back({0, voxel_center_unchecked(v, spec), p});
    keys.push_back(li);
  }
  return greedy_nms(std::move(candidates), std::move(keys), nms_radius);
}

AssociationResult associate_via_flow(const OccupancySequence& labels,
                                     const std::vector<FlowVolume>& flows,
                                     const std::vector<InstanceCenter>& centers0,
                                     double assoc_radius) {
  const GridSpec& spec = labels.spec();
  for (int t = 1; t < labels.frame_count(); ++t) {
    if (t >= static_cast<int>(flows.size())) {
      throw ConfigError("missing flow for frame " + std::to_string(t));
    }
    if (!flows[t].spec().same_geometry(spec)) {
      throw SpecError("flow frame " + std::to_string(t) +
                      " does not match the occupancy grid");
    }
  }
  std::uint32_t max_id = 0;
  for (const auto& c : centers0) max_id = std::max<std::uint32_t>(max_id, c.id);
  IdAllocator alloc(max_id + 1);

  AssociationResult result;
  std::vector<OccupancyGrid> frames;
  frames.reserve(labels.frame_count());

  // Frame 0: blob membership first, radius fallback second.
  {
    VoxelSet gmo = gmo_voxels(labels.frame(0));
    label_components(spec, gmo);
    std::vector<std::vector<const InstanceCenter*>> in_blob(gmo.component_count);
    for (const auto& c : centers0) {
      const auto idx = world_to_voxel(c.position, spec);
      if (!idx) continue;
      const auto k = gmo.find(linear_index(spec, *idx));
      if (k >= 0) in_blob[gmo.component[k]].push_back(&c);
    }
    std::vector<std::uint16_t> ids(gmo.voxels.size(), 0);
    for (std::size_t k = 0; k < gmo.voxels.size(); ++k) {
      const Vec3 p =
          voxel_center_unchecked(voxel_from_linear(spec, gmo.voxels[k]), spec);
      const auto& own = in_blob[gmo.component[k]];
      if (!own.empty()) {
        const InstanceCenter* best = own.front();
        double bd = (best->position - p).norm();
        for (const InstanceCenter* c : own) {
          const double d = (c->position - p).norm();
          if (d < bd || (d == bd && c->id < best->id)) {
            best = c;
            bd = d;
          }
        }
        ids[k] = best->id;
      } else {
        ids[k] = nearest_center(centers0, p, assoc_radius);
      }
    }
    spawn_unmatched(spec, gmo, ids, alloc);
    result.centers.push_back(centroids(spec, gmo, ids));
    frames.push_back(with_ids(labels.frame(0), gmo, ids));
  }

  for (int t = 1; t < labels.frame_count(); ++t) {
    const std::vector<InstanceCenter>& prev = result.centers.back();
    VoxelSet gmo = gmo_voxels(labels.frame(t));
    std::vector<std::uint16_t> ids(gmo.voxels.size(), 0);
    const FlowVolume& flow = flows[t];
    const auto fidx = flow.valid_indices();
    const auto fvec = flow.valid_vectors();
    std::size_t f = 0;
    for (std::size_t k = 0; k < gmo.voxels.size(); ++k) {
      const std::uint32_t li = gmo.voxels[k];
      while (f < fidx.size() && fidx[f] < li) ++f;
      if (f == fidx.size() || fidx[f] != li) continue;
      const Vec3 target =
          voxel_center_unchecked(voxel_from_linear(spec, li), spec) + fvec[f];
      ids[k] = nearest_center(prev, target, assoc_radius);
    }
    spawn_unmatched(spec, gmo, ids, alloc);
    result.centers.push_back(centroids(spec, gmo, ids));
    frames.push_back(with_ids(labels.frame(t), gmo, ids));
  }
  result.ids = OccupancySequence(std::move(frames));
  return result;
}

AssociationResult assign_instance_ids(const OccupancySequence& labels,
                                      const std::vector<FlowVolume>& flows,
                                      const AssocOptions& options) {
  const auto centers = extract_centers(labels.frame(0), options.nms_radius,
                                       options.min_prob);
  return associate_via_flow(labels, flows, centers, options.assoc_radius);
}

}  // namespace occ4d
