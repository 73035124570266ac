#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"
#include "occ4d/dataset.hpp"
#include "support.hpp"

using namespace occ4d;

namespace {

// Exact half-open containment computed independently of the library.
bool oracle_contains(const BoxState& b, const Vec3& p) {
  const double dx = p.x() - b.center.x();
  const double dy = p.y() - b.center.y();
  const double lx = std::cos(-b.yaw) * dx - std::sin(-b.yaw) * dy;
  const double ly = std::sin(-b.yaw) * dx + std::cos(-b.yaw) * dy;
  const double lz = p.z() - b.center.z();
  return -b.size.x() / 2 <= lx && lx < b.size.x() / 2 && -b.size.y() / 2 <= ly &&
         ly < b.size.y() / 2 && -b.size.z() / 2 <= lz && lz < b.size.z() / 2;
}

GridSpec local_spec() { return GridSpec({-5, 5}, {-5, 5}, {-2, 2}, 0.5, 2, 4); }

Scene moving_scene(double vx, int frames = 7) {
  Scene s;
  s.id = "moving";
  for (int k = 0; k < frames; ++k) {
    s.timestamps.push_back(0.5 * k);
    s.ego.push_back(Pose::identity());
  }
  InstanceTrack t;
  t.id = 3;
  for (int k = 0; k < frames; ++k) {
    BoxState b;
    b.center = Vec3(-2.1 + vx * k, 0.3, 0.1);
    b.size = Vec3(1.5, 1.0, 1.0);
    t.states.emplace(k, b);
  }
  s.tracks.push_back(t);
  return s;
}

}  // namespace

TEST_SUITE("dataset") {

TEST_CASE("task names round-trip") {
  for (TaskMode m : {TaskMode::InflatedGMO, TaskMode::FineGMO, TaskMode::InflatedGMO_GSO,
                     TaskMode::FineGMO_GSO}) {
    CHECK(parse_task_mode(task_mode_name(m)) == m);
  }
  CHECK_THROWS_AS(parse_task_mode("gmo"), ConfigError);
  CHECK(needs_fine_labels(TaskMode::InflatedGMO_GSO));
  CHECK_FALSE(needs_fine_labels(TaskMode::InflatedGMO));
}

TEST_CASE("a unit cube covers 125 voxels at 0.2 m") {
  BoxState b;
  b.center = Vec3(0, 0, -1);
  b.size = Vec3(1, 1, 1);
  CHECK(voxelize_box(b, GridSpec{}).size() == 125);
}

TEST_CASE("a box the size of one voxel covers exactly that voxel") {
  const GridSpec spec;
  BoxState b;
  b.center = voxel_center({100, 200, 10}, spec);
  b.size = Vec3(0.2, 0.2, 0.2);
  const auto v = voxelize_box(b, spec);
  REQUIRE(v.size() == 1);
  CHECK(v[0] == VoxelIndex{100, 200, 10});
}

TEST_CASE("boxes are clipped to the grid") {
  BoxState b;
  b.center = Vec3(5, 0, 0);
  b.size = Vec3(2.0, 1.0, 1.0);
  const auto v = voxelize_box(b, local_spec());
  // Only x centers 4.25 and 4.75 remain inside.
  CHECK(v.size() == 2 * 2 * 2);
}

TEST_CASE("property: voxelization matches a brute-force center test") {
  testing::Rng rng(31);
  const GridSpec spec = local_spec();
  for (int trial = 0; trial < 100; ++trial) {
    BoxState b;
    b.center = Vec3(rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(-1.5, 1.5));
    b.size = Vec3(rng.uniform(0.3, 4), rng.uniform(0.3, 3), rng.uniform(0.3, 2));
    b.yaw = rng.uniform(-3.14, 3.14);
    std::set<std::size_t> expected;
    for (std::size_t li = 0; li < spec.voxel_count(); ++li) {
      if (oracle_contains(b, voxel_center(voxel_from_linear(spec, li), spec))) {
        expected.insert(li);
      }
    }
    const auto got = voxelize_box_linear(b, spec);
    CHECK(std::set<std::size_t>(got.begin(), got.end()) == expected);
    CHECK(std::is_sorted(got.begin(), got.end()));
  }
}

TEST_CASE("a quarter turn swaps the box extents") {
  testing::Rng rng(32);
  const GridSpec spec = local_spec();
  for (int trial = 0; trial < 30; ++trial) {
    BoxState a;
    a.center = Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-1, 1));
    a.size = Vec3(rng.uniform(0.6, 3), rng.uniform(0.6, 3), 1.1);
    a.yaw = std::numbers::pi / 2;
    BoxState b = a;
    b.size = Vec3(a.size.y(), a.size.x(), a.size.z());
    b.yaw = 0.0;
    CHECK(voxelize_box(a, spec) == voxelize_box(b, spec));
  }
}

TEST_CASE("property: box_contains agrees with the oracle away from faces") {
  testing::Rng rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    BoxState b;
    b.center = Vec3(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-2, 2));
    b.size = Vec3(rng.uniform(0.5, 5), rng.uniform(0.5, 3), rng.uniform(0.5, 2));
    b.yaw = rng.uniform(-3.14, 3.14);
    for (int k = 0; k < 1000; ++k) {
      const Vec3 p = b.center + Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-1.2, 1.2));
      CHECK(box_contains(b, p) == oracle_contains(b, p));
    }
  }
}

TEST_CASE("overlapping boxes: the smaller one wins, then the smaller ID") {
  const GridSpec spec = local_spec();
  BoxState big;
  big.center = Vec3(0.1, 0.1, 0.1);
  big.size = Vec3(4, 4, 2);
  BoxState small = big;
  small.size = Vec3(1, 1, 1);
  OccupancyGrid g(spec, true);
  paint_boxes({{9, small}, {2, big}}, g);
  const std::size_t inner = linear_index(spec, *world_to_voxel(Vec3(0.1, 0.1, 0.1), spec));
  const std::size_t outer = linear_index(spec, *world_to_voxel(Vec3(1.6, 1.6, 0.1), spec));
  CHECK(g.instance_id(inner) == 9);
  CHECK(g.instance_id(outer) == 2);

  OccupancyGrid tie(spec, true);
  BoxState shifted = small;
  shifted.center += Vec3(0.5, 0, 0);
  paint_boxes({{7, small}, {4, shifted}}, tie);
  const std::size_t shared = linear_index(spec, *world_to_voxel(Vec3(0.3, 0.1, 0.1), spec));
  const std::size_t only7 = linear_index(spec, *world_to_voxel(Vec3(-0.2, 0.1, 0.1), spec));
  CHECK(tie.instance_id(shared) == 4);
  CHECK(tie.instance_id(only7) == 7);
}

TEST_CASE("GSO merge keeps GMO on top") {
  const GridSpec spec = testing::small_spec(2, 1, 1, 0, 0);
  OccupancySequence seq = OccupancySequence::empty(spec, true);
  seq.frame(0).set(0, SemanticLabel::GMO, 5);
  OccupancyGrid fine(spec);
  fine.set(0, SemanticLabel::GSO);
  fine.set(1, SemanticLabel::GSO);
  const OccupancySequence m = merge_gso(seq, {fine});
  CHECK(m.frame(0).label(0) == SemanticLabel::GMO);
  CHECK(m.frame(0).instance_id(0) == 5);
  CHECK(m.frame(0).label(1) == SemanticLabel::GSO);
  CHECK_THROWS_AS(merge_gso(seq, {}), SpecError);
}

TEST_CASE("resampling an identity pose copies the labels; a shift moves them") {
  const GridSpec spec = testing::small_spec(4, 4, 2, 0, 0);
  OccupancyGrid fine(spec);
  fine.set(VoxelIndex{1, 2, 0}, SemanticLabel::GSO);
  CHECK(resample_to_present(fine, Pose::identity(), spec) == fine);
  // The frame's ego sits one voxel ahead in x of the present ego.
  const Pose present_from_frame = Pose::from_yaw(0.0, Vec3(1, 0, 0));
  const OccupancyGrid moved = resample_to_present(fine, present_from_frame, spec);
  CHECK(moved.at({2, 2, 0}) == SemanticLabel::GSO);
  CHECK(count_label(moved, SemanticLabel::GSO) == 1);
}

TEST_CASE("fine GMO keeps only fine voxels inside retained boxes") {
  const GridSpec spec = local_spec();
  const Scene s = moving_scene(0.0);
  const SequenceWindow w = split_scene(s, 2, 4).front();
  const PresentFrameWindow pw = prepare_window(w, spec).frame;
  std::vector<OccupancyGrid> fine(5, OccupancyGrid(spec));
  const auto box_voxels = voxelize_box_linear(pw.tracks[0].states.at(0), spec);
  REQUIRE(box_voxels.size() > 2);
  fine[0].set(box_voxels[0], SemanticLabel::GMO);
  fine[0].set(0, SemanticLabel::GMO);  // outside every box
  const OccupancySequence seq = build_gmo_sequence(pw, spec, TaskMode::FineGMO, &fine);
  CHECK(count_label(seq.frame(0), SemanticLabel::GMO) == 1);
  CHECK(seq.frame(0).instance_id(box_voxels[0]) == 3);
  CHECK(count_label(seq.frame(1), SemanticLabel::GMO) == 0);
  CHECK_THROWS_AS(build_gmo_sequence(pw, spec, TaskMode::FineGMO, nullptr), ConfigError);
}

TEST_CASE("backward flow points at the previous center") {
  const GridSpec spec = local_spec();
  const Scene s = moving_scene(0.5);
  const Sample sample = build_sample(split_scene(s, 2, 4).front(), spec, TaskMode::InflatedGMO);
  REQUIRE(sample.flows.size() == 5);
  for (int t = 0; t <= 4; ++t) {
    const OccupancyGrid& g = sample.occupancy.frame(t);
    const FlowVolume& f = sample.flows[t];
    // Center at window time t - 1 is frame present + t - 1 = t + 1.
    const Vec3 prev(-2.1 + 0.5 * (t + 1), 0.3, 0.1);
    std::size_t gmo = 0;
    for (std::size_t li = 0; li < g.size(); ++li) {
      if (g.label(li) != SemanticLabel::GMO) {
        CHECK_FALSE(f.valid(li));
        continue;
      }
      ++gmo;
      REQUIRE(f.valid(li));
      const Vec3 expected = prev - voxel_center(voxel_from_linear(spec, li), spec);
      CHECK((f.vector_at(li) - expected).norm() < 1e-12);
    }
    CHECK(gmo == f.valid_count());
    CHECK(gmo > 0);
  }
}

TEST_CASE("flow is invalid where the instance has no previous state") {
  const GridSpec spec = local_spec();
  Scene s = moving_scene(0.0);
  // Appears exactly at the present frame.
  for (int k = 0; k < 2; ++k) s.tracks[0].states.erase(k);
  const Sample sample = build_sample(split_scene(s, 2, 4).front(), spec, TaskMode::InflatedGMO);
  CHECK(sample.flows[0].valid_count() == 0);
  CHECK(sample.flows[1].valid_count() == count_label(sample.occupancy.frame(1), SemanticLabel::GMO));
  REQUIRE(sample.meta.instances.size() == 1);
  CHECK(sample.meta.instances[0].t_in == 0);
  CHECK(sample.meta.instances[0].t_out == 4);
}

TEST_CASE("sample construction is deterministic") {
  const GridSpec spec = local_spec();
  const Scene s = moving_scene(0.3, 9);
  for (const auto& w : split_scene(s, 2, 4)) {
    CHECK(build_sample(w, spec, TaskMode::InflatedGMO) == build_sample(w, spec, TaskMode::InflatedGMO));
  }
}

TEST_CASE("fine tasks without fine labels are rejected") {
  const GridSpec spec = local_spec();
  const Scene s = moving_scene(0.3);
  const SequenceWindow w = split_scene(s, 2, 4).front();
  CHECK_THROWS_AS(build_sample(w, spec, TaskMode::FineGMO), ConfigError);
  CHECK_THROWS_AS(build_sample(w, spec, TaskMode::InflatedGMO_GSO), ConfigError);
  CHECK_THROWS_AS(build_sample(w, spec.with_horizons(1, 4), TaskMode::InflatedGMO), ConfigError);
}

}  // TEST_SUITE
