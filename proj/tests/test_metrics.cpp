#include <memory>
#include <set>
#include <vector>

#include "doctest.h"
#include "occ4d/metrics.hpp"
#include "support.hpp"

using namespace occ4d;

namespace {

// Set-based IoU oracle.
std::optional<double> oracle_iou(const OccupancyGrid& p, const OccupancyGrid& g, SemanticLabel l) {
  std::set<std::size_t> a, b, both;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.label(i) == l) a.insert(i);
    if (g.label(i) == l) b.insert(i);
    if (p.label(i) == l && g.label(i) == l) both.insert(i);
  }
  const std::size_t uni = a.size() + b.size() - both.size();
  if (uni == 0) return std::nullopt;
  return static_cast<double>(both.size()) / static_cast<double>(uni);
}

// Paints an instance as an axis-aligned block of voxels [x0, x1) x [y0, y1) x {0}.
void block(OccupancyGrid& g, int x0, int x1, int y0, int y1, std::uint16_t id) {
  for (int x = x0; x < x1; ++x) {
    for (int y = y0; y < y1; ++y) g.set(VoxelIndex{x, y, 0}, SemanticLabel::GMO, id);
  }
}

OccupancySequence two_instances(const GridSpec& spec, std::uint16_t a, std::uint16_t b) {
  OccupancySequence s = OccupancySequence::empty(spec, true);
  for (int t = 0; t < s.frame_count(); ++t) {
    block(s.frame(t), 0, 3, 0, 3, a);
    block(s.frame(t), 10, 13, 10, 13, b);
  }
  return s;
}

Sample make_sample(const OccupancySequence& occ, TaskMode mode = TaskMode::InflatedGMO) {
  Sample s;
  s.spec = occ.spec();
  s.mode = mode;
  s.occupancy = occ;
  s.flows.assign(occ.frame_count(), FlowVolume(occ.spec()));
  s.meta.scene_id = "m";
  return s;
}

Forecast make_forecast(const OccupancySequence& occ) {
  Forecast f;
  f.occupancy = occ;
  return f;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("IoU of two sets sharing one of three voxels") {
  const GridSpec spec = testing::small_spec(3, 1, 1, 0, 0);
  OccupancyGrid p(spec), g(spec);
  p.set(0, SemanticLabel::GMO);
  p.set(1, SemanticLabel::GMO);
  g.set(1, SemanticLabel::GMO);
  g.set(2, SemanticLabel::GMO);
  const auto iou = iou_single(p, g, SemanticLabel::GMO);
  REQUIRE(iou);
  CHECK(*iou == doctest::Approx(1.0 / 3.0));
  CHECK_FALSE(iou_single(p, g, SemanticLabel::GSO));
  const ClassCounts c = count_overlap(p, g, SemanticLabel::GMO);
  CHECK(c.intersection == 1);
  CHECK(c.union_count() == 3);
  CHECK_THROWS_AS(count_overlap(p, OccupancyGrid(testing::small_spec(4, 1, 1, 0, 0)), SemanticLabel::GMO),
                  SpecError);
}

TEST_CASE("property: IoU matches a set-based oracle") {
  testing::Rng rng(51);
  const GridSpec spec = testing::small_spec(16, 16, 8);
  for (int k = 0; k < 50; ++k) {
    const OccupancyGrid p = testing::random_grid(spec, rng, rng.uniform(0, 0.5), rng.uniform(0, 0.3));
    const OccupancyGrid g = testing::random_grid(spec, rng, rng.uniform(0, 0.5), rng.uniform(0, 0.3));
    for (SemanticLabel l : {SemanticLabel::GMO, SemanticLabel::GSO}) {
      const auto got = iou_single(p, g, l);
      const auto want = oracle_iou(p, g, l);
      REQUIRE(got.has_value() == want.has_value());
      if (got) CHECK(*got == *want);
    }
  }
}

TEST_CASE("discounted IoU weights early steps more") {
  const std::vector<double> first{1, 0, 0, 0};
  const std::vector<double> last{0, 0, 0, 1};
  CHECK(iou_discounted(first) == doctest::Approx(25.0 / 48.0));
  CHECK(iou_discounted(last) == doctest::Approx(1.0 / 16.0));
  CHECK(iou_discounted(std::vector<double>{1, 1, 1, 1}) == doctest::Approx(1.0));
  CHECK(iou_discounted(std::vector<double>{0.5}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(iou_discounted(std::vector<double>{}), ConfigError);
}

TEST_CASE("property: discounted IoU of a constant sequence is that constant") {
  testing::Rng rng(52);
  for (int k = 0; k < 200; ++k) {
    const double a = rng.uniform();
    const std::vector<double> v(1 + rng.below(8), a);
    CHECK(iou_discounted(v) == doctest::Approx(a).epsilon(1e-12));
  }
}

TEST_CASE("property: discounted IoU is monotone in every step") {
  testing::Rng rng(53);
  for (int k = 0; k < 200; ++k) {
    std::vector<double> v(4);
    for (double& x : v) x = rng.uniform(0, 0.9);
    std::vector<double> w = v;
    w[rng.below(4)] += 0.1;
    CHECK(iou_discounted(w) > iou_discounted(v));
    CHECK(iou_discounted(v) >= 0.0);
    CHECK(iou_discounted(v) <= 1.0);
  }
}

TEST_CASE("future IoU averages the defined steps") {
  const GridSpec spec = testing::small_spec(2, 1, 1, 0, 2);
  OccupancySequence p = OccupancySequence::empty(spec, false);
  OccupancySequence g = OccupancySequence::empty(spec, false);
  p.frame(1).set(0, SemanticLabel::GMO);
  g.frame(1).set(0, SemanticLabel::GMO);
  g.frame(1).set(1, SemanticLabel::GMO);
  const FutureIoU f = iou_future(p, g, SemanticLabel::GMO);
  REQUIRE(f.per_step.size() == 2);
  CHECK(f.per_step[0] == 0.5);
  CHECK_FALSE(f.per_step[1]);
  CHECK(f.mean == 0.5);
}

TEST_CASE("VPQ of a perfect forecast is 1") {
  const GridSpec spec = testing::small_spec(16, 16, 1, 0, 4);
  const OccupancySequence g = two_instances(spec, 1, 2);
  CHECK(vpq(two_instances(spec, 8, 9), g) == 1.0);
}

TEST_CASE("VPQ of an empty forecast is 0; empty frames are skipped") {
  const GridSpec spec = testing::small_spec(16, 16, 1, 0, 4);
  const OccupancySequence g = two_instances(spec, 1, 2);
  const OccupancySequence none = OccupancySequence::empty(spec, true);
  CHECK(vpq(none, g) == 0.0);
  CHECK_FALSE(vpq(none, none));
  OccupancySequence partial = g;
  partial.frame(3) = OccupancyGrid(spec, true);
  OccupancySequence gpartial = partial;
  CHECK(vpq(partial, gpartial) == 1.0);
  const auto t = vpq_tallies(partial, gpartial);
  CHECK(t[3].denominator() == 0.0);
  CHECK_THROWS_AS(vpq(OccupancySequence::empty(spec, false), g), ConfigError);
}

TEST_CASE("swapping identities after the first frame scores only that frame") {
  const GridSpec spec = testing::small_spec(16, 16, 1, 0, 4);
  const OccupancySequence g = two_instances(spec, 1, 2);
  OccupancySequence p = two_instances(spec, 5, 6);
  for (int t = 1; t <= 4; ++t) p.frame(t) = two_instances(spec, 6, 5).frame(t);
  const auto tallies = vpq_tallies(p, g);
  CHECK(tallies[0].tp == 2);
  for (int t = 1; t <= 4; ++t) {
    CHECK(tallies[t].tp == 0);
    CHECK(tallies[t].fp == 2);
    CHECK(tallies[t].fn == 2);
  }
  CHECK(*vpq(p, g) == doctest::Approx(1.0 / 5.0));
}

TEST_CASE("matches at or below the threshold are never true positives") {
  const GridSpec spec = testing::small_spec(10, 10, 1, 0, 0);
  OccupancySequence g = OccupancySequence::empty(spec, true);
  block(g.frame(0), 0, 10, 0, 10, 1);
  for (int n : {19, 20}) {
    OccupancySequence p = OccupancySequence::empty(spec, true);
    block(p.frame(0), 0, 10, 0, 1, 3);  // n inside a 100-voxel instance
    block(p.frame(0), 0, n - 10, 1, 2, 3);
    const auto t = vpq_tallies(p, g);
    CHECK(t[0].tp == 0);
    CHECK(t[0].fp == 1);
    CHECK(t[0].fn == 1);
    CHECK(vpq(p, g) == 0.0);
  }
  OccupancySequence p = OccupancySequence::empty(spec, true);
  block(p.frame(0), 0, 10, 0, 3, 3);  // IoU 0.3
  CHECK(*vpq(p, g) == doctest::Approx(0.3 / 1.0));
}

TEST_CASE("one prediction cannot match two ground-truth instances") {
  const GridSpec spec = testing::small_spec(16, 16, 1, 0, 0);
  OccupancySequence g = OccupancySequence::empty(spec, true);
  block(g.frame(0), 0, 4, 0, 2, 1);
  block(g.frame(0), 0, 4, 2, 4, 2);
  OccupancySequence p = OccupancySequence::empty(spec, true);
  block(p.frame(0), 0, 4, 0, 4, 7);
  // IoU 0.5 with each; only one can be matched.
  const auto t = vpq_tallies(p, g);
  CHECK(t[0].tp == 1);
  CHECK(t[0].fn == 1);
  CHECK(t[0].fp == 0);
  CHECK(t[0].sum_iou == doctest::Approx(0.5));
}

TEST_CASE("accumulated counts are order independent and duplicates do not change IoU") {
  testing::Rng rng(54);
  const GridSpec spec = testing::small_spec(12, 12, 4, 2, 4);
  std::vector<Sample> gts;
  std::vector<Forecast> preds;
  for (int k = 0; k < 6; ++k) {
    std::vector<OccupancyGrid> gf, pf;
    for (int t = 0; t <= 4; ++t) {
      gf.push_back(testing::random_grid(spec, rng, 0.1, 0.1, true));
      pf.push_back(testing::random_grid(spec, rng, 0.1, 0.1, true));
    }
    gts.push_back(make_sample(OccupancySequence(gf), TaskMode::InflatedGMO_GSO));
    preds.push_back(make_forecast(OccupancySequence(pf)));
  }
  EvalOptions opt;
  opt.mode = TaskMode::InflatedGMO_GSO;
  opt.compute_vpq = false;  // float sums would depend on the order
  EvalAccumulator all(opt.mode, 4), left(opt.mode, 4), right(opt.mode, 4);
  for (int k = 0; k < 6; ++k) {
    all.add(preds[k], gts[k], opt);
    (k < 3 ? left : right).add(preds[k], gts[k], opt);
  }
  EvalAccumulator merged = right;
  merged.merge(left);
  CHECK(merged == all);
  opt.compute_vpq = true;

  EvalAccumulator once(opt.mode, 4), twice(opt.mode, 4);
  once.add(preds[0], gts[0], opt);
  twice.add(preds[0], gts[0], opt);
  twice.add(preds[0], gts[0], opt);
  const EvalReport a = once.report(), b = twice.report();
  CHECK(a.find(SemanticLabel::GMO)->iou_current == b.find(SemanticLabel::GMO)->iou_current);
  CHECK(a.find(SemanticLabel::GSO)->iou_future == b.find(SemanticLabel::GSO)->iou_future);
  CHECK(a.vpq == b.vpq);
  CHECK(b.sample_count == 2);
  REQUIRE(b.mean_iou_current);
  CHECK(*b.mean_iou_current ==
        doctest::Approx((*b.find(SemanticLabel::GMO)->iou_current + *b.find(SemanticLabel::GSO)->iou_current) / 2));
}

TEST_CASE("report fields follow the counts") {
  const GridSpec spec = testing::small_spec(16, 16, 1, 0, 4);
  const Sample gt = make_sample(two_instances(spec, 1, 2));
  EvalAccumulator acc(TaskMode::InflatedGMO, 4);
  acc.add(make_forecast(two_instances(spec, 3, 4)), gt, {});
  const EvalReport r = acc.report();
  REQUIRE(r.classes.size() == 1);
  CHECK(r.classes[0].iou_current == 1.0);
  CHECK(r.classes[0].iou_future == 1.0);
  CHECK(r.classes[0].iou_discounted == doctest::Approx(1.0));
  CHECK(r.classes[0].counts[2].gt == 18);
  CHECK(r.vpq == 1.0);
  CHECK_FALSE(r.mean_iou_current);

  EvalOptions no_vpq;
  no_vpq.compute_vpq = false;
  EvalAccumulator plain(TaskMode::InflatedGMO, 4);
  plain.add(make_forecast(two_instances(spec, 3, 4)), gt, no_vpq);
  CHECK_FALSE(plain.report().vpq);
  CHECK(plain.report().vpq_counts.empty());

  // Neither IDs nor flows: VPQ cannot be computed for this sample.
  OccupancySequence bare = two_instances(spec, 3, 4);
  for (int t = 0; t < bare.frame_count(); ++t) bare.frame(t).drop_instance_ids();
  EvalAccumulator mixed(TaskMode::InflatedGMO, 4);
  mixed.add(make_forecast(two_instances(spec, 3, 4)), gt, {});
  mixed.add(make_forecast(bare), gt, {});
  CHECK_FALSE(mixed.report().vpq);
}

TEST_CASE("the accumulator rejects mismatched samples") {
  const GridSpec spec = testing::small_spec(16, 16, 1, 0, 4);
  const Sample gt = make_sample(two_instances(spec, 1, 2), TaskMode::FineGMO);
  EvalAccumulator acc(TaskMode::InflatedGMO, 4);
  CHECK_THROWS_AS(acc.add(make_forecast(gt.occupancy), gt, {}), ConfigError);
  EvalAccumulator fine(TaskMode::FineGMO, 4);
  const OccupancySequence short_seq = OccupancySequence::empty(testing::small_spec(16, 16, 1, 0, 3), true);
  CHECK_THROWS_AS(fine.add(make_forecast(short_seq), gt, {}), SpecError);
  EvalAccumulator other(TaskMode::FineGMO_GSO, 4);
  CHECK_THROWS_AS(fine.merge(other), ConfigError);
}

TEST_CASE("evaluate_dataset is independent of the worker count") {
  testing::Rng rng(55);
  const GridSpec spec = testing::small_spec(12, 12, 4, 2, 4);
  std::vector<EvalPair> pairs;
  for (int k = 0; k < 7; ++k) {
    std::vector<OccupancyGrid> gf, pf;
    for (int t = 0; t <= 4; ++t) {
      gf.push_back(testing::random_grid(spec, rng, 0.1, 0.0, true));
      pf.push_back(testing::random_grid(spec, rng, 0.1, 0.0, true));
    }
    pairs.push_back({std::make_shared<Forecast>(make_forecast(OccupancySequence(pf))),
                     std::make_shared<Sample>(make_sample(OccupancySequence(gf)))});
  }
  const PairLoader load = [&](std::size_t i) { return pairs[i]; };
  const EvalReport one = evaluate_dataset(pairs.size(), load, {}, 1);
  const EvalReport three = evaluate_dataset(pairs.size(), load, {}, 3);
  CHECK(one.sample_count == 7);
  CHECK(one.classes[0].counts == three.classes[0].counts);
  REQUIRE(one.vpq_counts.size() == three.vpq_counts.size());
  for (std::size_t t = 0; t < one.vpq_counts.size(); ++t) {
    CHECK(one.vpq_counts[t].tp == three.vpq_counts[t].tp);
    CHECK(one.vpq_counts[t].fp == three.vpq_counts[t].fp);
    CHECK(one.vpq_counts[t].fn == three.vpq_counts[t].fn);
    CHECK(one.vpq_counts[t].sum_iou == doctest::Approx(three.vpq_counts[t].sum_iou));
  }
  CHECK_THROWS_AS(evaluate_dataset(0, load, {}, 2), ConfigError);
  const PairLoader failing = [&](std::size_t i) -> EvalPair {
    if (i == 5) throw FormatError("broken pair");
    return pairs[i];
  };
  CHECK_THROWS_WITH_AS(evaluate_dataset(pairs.size(), failing, {}, 2), "broken pair", FormatError);
}

}  // TEST_SUITE
