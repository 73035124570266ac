#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "occ4d/baselines.hpp"
#include "occ4d/dataset.hpp"
#include "occ4d/grid.hpp"
#include "occ4d/instance_assoc.hpp"

namespace occ4d {

// Raw voxel counts behind one IoU value.
struct ClassCounts {
  std::uint64_t intersection = 0;
  std::uint64_t pred = 0;
  std::uint64_t gt = 0;

  std::uint64_t union_count() const { return pred + gt - intersection; }
  // Undefined when both sets are empty.
  std::optional<double> iou() const;
  ClassCounts& operator+=(const ClassCounts& o);
  bool operator==(const ClassCounts&) const = default;
};

// Throws SpecError when the two grids are not on the same lattice.
ClassCounts count_overlap(const OccupancyGrid& pred, const OccupancyGrid& gt,
                          SemanticLabel label);

std::optional<double> iou_single(const OccupancyGrid& pred,
                                 const OccupancyGrid& gt, SemanticLabel label);

struct FutureIoU {
  std::vector<std::optional<double>> per_step;  // t = 1..Nf
  std::optional<double> mean;                    // over defined steps
};

FutureIoU iou_future(const OccupancySequence& pred, const OccupancySequence& gt,
                     SemanticLabel label);
FutureIoU iou_future(const Forecast& pred, const Sample& gt,
                     SemanticLabel label);

// (1/Nf) * sum_t (1/t) * sum_{k<=t} a_k. Throws ConfigError on empty input.
double iou_discounted(std::span<const double> per_step);

// Per-frame video panoptic tallies.
struct VpqTally {
  double sum_iou = 0.0;
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;

  double denominator() const { return tp + 0.5 * fp + 0.5 * fn; }
  VpqTally& operator+=(const VpqTally& o);
  bool operator==(const VpqTally&) const = default;
};

inline constexpr double kDefaultVpqThreshold = 0.2;

// Matches instances frame by frame. A pair is a true positive when its IoU
// exceeds `threshold` (strict), it is one-to-one within the frame, and the
// predicted ID maps to the same ground-truth instance as at its first match.
// Throws ConfigError when either side lacks instance IDs.
std::vector<VpqTally> vpq_tallies(const OccupancySequence& pred,
                                  const OccupancySequence& gt,
                                  double threshold = kDefaultVpqThreshold);

// Mean over frames with a nonzero denominator; undefined if none.
std::optional<double> vpq_from_tallies(std::span<const VpqTally> tallies);
std::optional<double> vpq(const OccupancySequence& pred,
                          const OccupancySequence& gt,
                          double threshold = kDefaultVpqThreshold);

// Classes scored for a task: GMO only, or GMO and GSO.
std::vector<SemanticLabel> task_classes(TaskMode mode);

struct ClassReport {
  SemanticLabel label = SemanticLabel::GMO;
  std::vector<ClassCounts> counts;  // t = 0..Nf, summed over samples
  std::optional<double> iou_current;
  std::vector<std::optional<double>> iou_per_step;  // t = 1..Nf
  std::optional<double> iou_future;
  // Undefined when any future step is undefined.
  std::optional<double> iou_discounted;
};

struct EvalReport {
  TaskMode mode = TaskMode::InflatedGMO;
  int n_future = 0;
  std::uint64_t sample_count = 0;
  double vpq_threshold = kDefaultVpqThreshold;
  std::vector<ClassReport> classes;
  // Mean over classes of IoU_c / IoU_f when more than one class is scored.
  std::optional<double> mean_iou_current;
  std::optional<double> mean_iou_future;
  std::vector<VpqTally> vpq_counts;  // t = 0..Nf; empty when not evaluated
  std::optional<double> vpq;

  const ClassReport* find(SemanticLabel label) const;
};

struct EvalOptions {
  TaskMode mode = TaskMode::InflatedGMO;
  double vpq_threshold = kDefaultVpqThreshold;
  // Used to derive forecast IDs from forecast flows when IDs are absent.
  AssocOptions assoc;
  bool compute_vpq = true;
};

// Count-level accumulation over samples; merging is field-wise addition.
class EvalAccumulator {
 public:
  EvalAccumulator(TaskMode mode, int n_future);

  void add(const Forecast& pred, const Sample& gt, const EvalOptions& options);
  void merge(const EvalAccumulator& other);
  EvalReport report(double vpq_threshold = kDefaultVpqThreshold) const;

  std::uint64_t sample_count() const { return samples_; }
  bool operator==(const EvalAccumulator&) const = default;

 private:
  TaskMode mode_;
  int n_future_;
  std::vector<SemanticLabel> classes_;
  std::vector<std::vector<ClassCounts>> counts_;  // [class][t]
  std::vector<VpqTally> vpq_;
  std::uint64_t vpq_samples_ = 0;
  std::uint64_t samples_ = 0;
};

struct EvalPair {
  std::shared_ptr<const Forecast> pred;
  std::shared_ptr<const Sample> gt;
};

// Yields the i-th pair; called concurrently from several workers with
// distinct indices.
using PairLoader = std::function<EvalPair(std::size_t index)>;

// Evaluates `count` pairs with `workers` threads and reduces their
// accumulators. Throws ConfigError when count is zero.
EvalReport evaluate_dataset(std::size_t count, const PairLoader& load,
                            const EvalOptions& options, int workers = 1);

}  // namespace occ4d
