#include "occ4d/metrics.hpp"

#include <algorithm>
#include <array>
#include <exception>
#include <mutex>
#include <thread>
#include <unordered_map>

namespace occ4d {
namespace {

void check_same_lattice(const OccupancyGrid& pred, const OccupancyGrid& gt) {
  if (!pred.spec().same_geometry(gt.spec())) {
    throw SpecError("prediction grid " + pred.spec().describe() +
                    " does not match ground-truth grid " + gt.spec().describe());
  }
}

void check_frame_counts(const OccupancySequence& pred,
                        const OccupancySequence& gt) {
  if (pred.frame_count() != gt.frame_count()) {
    throw SpecError("prediction has " + std::to_string(pred.frame_count()) +
                    " frames, ground truth has " +
                    std::to_string(gt.frame_count()));
  }
}

// confusion[p][g] over label codes 0..2.
using Confusion = std::array<std::array<std::uint64_t, 3>, 3>;

Confusion confusion(const OccupancyGrid& pred, const OccupancyGrid& gt) {
  check_same_lattice(pred, gt);
  const auto p = pred.labels();
  const auto g = gt.labels();
  std::array<std::uint64_t, 9> c{};
  for (std::size_t i = 0; i < p.size(); ++i) {
    ++c[static_cast<std::size_t>(p[i]) * 3 + static_cast<std::size_t>(g[i])];
  }
  Confusion out{};
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) out[a][b] = c[a * 3 + b];
  }
  return out;
}

ClassCounts counts_from(const Confusion& c, SemanticLabel label) {
  const auto l = static_cast<std::size_t>(label);
  ClassCounts out;
  out.intersection = c[l][l];
  for (int k = 0; k < 3; ++k) {
    out.pred += c[l][k];
    out.gt += c[k][l];
  }
  return out;
}

std::optional<double> mean_of_defined(
    const std::vector<std::optional<double>>& values) {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

VpqTally vpq_frame(const OccupancyGrid& pred, const OccupancyGrid& gt,
                   double threshold,
                   std::unordered_map<std::uint16_t, std::uint16_t>& mapping) {
  check_same_lattice(pred, gt);
  const auto pi = pred.instance_ids();
  const auto gi = gt.instance_ids();
  std::unordered_map<std::uint16_t, std::uint64_t> pred_n, gt_n;
  std::unordered_map<std::uint32_t, std::uint64_t> inter;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    const std::uint16_t a = pi[i];
    const std::uint16_t b = gi[i];
    if (a != 0) ++pred_n[a];
    if (b != 0) ++gt_n[b];
    if (a != 0 && b != 0) ++inter[(static_cast<std::uint32_t>(a) << 16) | b];
  }

  struct Candidate {
    double iou;
    std::uint16_t p, g;
  };
  std::vector<Candidate> candidates;
  for (const auto& [key, n] : inter) {
    const auto p = static_cast<std::uint16_t>(key >> 16);
    const auto g = static_cast<std::uint16_t>(key & 0xFFFF);
    const double iou =
        static_cast<double>(n) / static_cast<double>(pred_n[p] + gt_n[g] - n);
    if (iou > threshold) candidates.push_back({iou, p, g});
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& x, const Candidate& y) {
              if (x.iou != y.iou) return x.iou > y.iou;
              if (x.p != y.p) return x.p < y.p;
              return x.g < y.g;
            });

  VpqTally tally;
  std::unordered_map<std::uint16_t, bool> pred_used, gt_used;
  for (const auto& c : candidates) {
    if (pred_used[c.p] || gt_used[c.g]) continue;
    const auto m = mapping.find(c.p);
    if (m != mapping.end() && m->second != c.g) continue;
    if (m == mapping.end()) mapping.emplace(c.p, c.g);
    pred_used[c.p] = gt_used[c.g] = true;
    tally.sum_iou += c.iou;
    ++tally.tp;
  }
  tally.fp = pred_n.size() - tally.tp;
  tally.fn = gt_n.size() - tally.tp;
  return tally;
}

}  // namespace

std::optional<double> ClassCounts::iou() const {
  const std::uint64_t u = union_count();
  if (u == 0) return std::nullopt;
  return static_cast<double>(intersection) / static_cast<double>(u);
}

ClassCounts& ClassCounts::operator+=(const ClassCounts& o) {
  intersection += o.intersection;
  pred += o.pred;
  gt += o.gt;
  return *this;
}

ClassCounts count_overlap(const OccupancyGrid& pred, const OccupancyGrid& gt,
                          SemanticLabel label) {
  check_same_lattice(pred, gt);
  const auto p = pred.labels();
  const auto g = gt.labels();
  ClassCounts c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool a = p[i] == label;
    const bool b = g[i] == label;
    c.pred += a;
    c.gt += b;
    c.intersection += a && b;
  }
  return c;
}

std::optional<double> iou_single(const OccupancyGrid& pred,
                                 const OccupancyGrid& gt, SemanticLabel label) {
  return count_overlap(pred, gt, label).iou();
}

FutureIoU iou_future(const OccupancySequence& pred, const OccupancySequence& gt,
                     SemanticLabel label) {
  check_frame_counts(pred, gt);
  FutureIoU out;
  for (int t = 1; t < gt.frame_count(); ++t) {
    out.per_step.push_back(iou_single(pred.frame(t), gt.frame(t), label));
  }
  out.mean = mean_of_defined(out.per_step);
  return out;
}

FutureIoU iou_future(const Forecast& pred, const Sample& gt,
                     SemanticLabel label) {
  check_forecast(pred, gt.spec);
  return iou_future(pred.occupancy, gt.occupancy, label);
}

double iou_discounted(std::span<const double> per_step) {
  if (per_step.empty()) {
    throw ConfigError("discounted IoU needs at least one future step");
  }
  double total = 0.0;
  double prefix = 0.0;
  for (std::size_t t = 1; t <= per_step.size(); ++t) {
    prefix += per_step[t - 1];
    total += prefix / static_cast<double>(t);
  }
  return total / static_cast<double>(per_step.size());
}

VpqTally& VpqTally::operator+=(const VpqTally& o) {
  sum_iou += o.sum_iou;
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  return *this;
}

std::vector<VpqTally> vpq_tallies(const OccupancySequence& pred,
                                  const OccupancySequence& gt,
                                  double threshold) {
  check_frame_counts(pred, gt);
  if (!pred.has_instance_ids()) {
    throw ConfigError("prediction has no instance-ID volumes");
  }
  if (!gt.has_instance_ids()) {
    throw ConfigError("ground truth has no instance-ID volumes");
  }
  std::unordered_map<std::uint16_t, std::uint16_t> mapping;
  std::vector<VpqTally> out;
  out.reserve(gt.frame_count());
  for (int t = 0; t < gt.frame_count(); ++t) {
    out.push_back(vpq_frame(pred.frame(t), gt.frame(t), threshold, mapping));
  }
  return out;
}

std::optional<double> vpq_from_tallies(std::span<const VpqTally> tallies) {
  double sum = 0.0;
  int frames = 0;
  for (const auto& t : tallies) {
    const double d = t.denominator();
    if (d <= 0.0) continue;
    sum += t.sum_iou / d;
    ++frames;
  }
  if (frames == 0) return std::nullopt;
  return sum / frames;
}

std::optional<double> vpq(const OccupancySequence& pred,
                          const OccupancySequence& gt, double threshold) {
  const auto tallies = vpq_tallies(pred, gt, threshold);
  return vpq_from_tallies(tallies);
}

std::vector<SemanticLabel> task_classes(TaskMode mode) {
  if (uses_gso(mode)) return {SemanticLabel::GMO, SemanticLabel::GSO};
  return {SemanticLabel::GMO};
}

const ClassReport* EvalReport::find(SemanticLabel label) const {
  for (const auto& c : classes) {
    if (c.label == label) return &c;
  }
  return nullptr;
}

EvalAccumulator::EvalAccumulator(TaskMode mode, int n_future)
    : mode_(mode),
      n_future_(n_future),
      classes_(task_classes(mode)),
      counts_(classes_.size(),
              std::vector<ClassCounts>(static_cast<std::size_t>(n_future) + 1)),
      vpq_(static_cast<std::size_t>(n_future) + 1) {
  if (n_future < 0) throw ConfigError("negative forecast horizon");
}

void EvalAccumulator::add(const Forecast& pred, const Sample& gt,
                          const EvalOptions& options) {
  if (gt.mode != mode_) {
    throw ConfigError(std::string("sample was built for task ") +
                      task_mode_name(gt.mode) + ", evaluating " +
                      task_mode_name(mode_));
  }
  if (gt.occupancy.frame_count() != n_future_ + 1) {
    throw SpecError("sample has " + std::to_string(gt.occupancy.frame_count()) +
                    " frames, expected " + std::to_string(n_future_ + 1));
  }
  check_forecast(pred, gt.spec);

  for (int t = 0; t <= n_future_; ++t) {
    const Confusion c = confusion(pred.occupancy.frame(t), gt.occupancy.frame(t));
    for (std::size_t k = 0; k < classes_.size(); ++k) {
      counts_[k][t] += counts_from(c, classes_[k]);
    }
  }

  if (options.compute_vpq && gt.occupancy.has_instance_ids()) {
    std::optional<std::vector<VpqTally>> tallies;
    if (pred.has_instance_ids()) {
      tallies = vpq_tallies(pred.occupancy, gt.occupancy, options.vpq_threshold);
    } else if (pred.flows) {
      const AssociationResult assoc =
          assign_instance_ids(pred.occupancy, *pred.flows, options.assoc);
      tallies = vpq_tallies(assoc.ids, gt.occupancy, options.vpq_threshold);
    }
    if (tallies) {
      for (int t = 0; t <= n_future_; ++t) vpq_[t] += (*tallies)[t];
      ++vpq_samples_;
    }
  }
  ++samples_;
}

void EvalAccumulator::merge(const EvalAccumulator& other) {
  if (other.mode_ != mode_ || other.n_future_ != n_future_) {
    throw ConfigError("cannot merge accumulators of different tasks");
  }
  for (std::size_t k = 0; k < counts_.size(); ++k) {
    for (std::size_t t = 0; t < counts_[k].size(); ++t) {
      counts_[k][t] += other.counts_[k][t];
    }
  }
  for (std::size_t t = 0; t < vpq_.size(); ++t) vpq_[t] += other.vpq_[t];
  vpq_samples_ += other.vpq_samples_;
  samples_ += other.samples_;
}

EvalReport EvalAccumulator::report(double vpq_threshold) const {
  EvalReport r;
  r.mode = mode_;
  r.n_future = n_future_;
  r.sample_count = samples_;
  r.vpq_threshold = vpq_threshold;
  for (std::size_t k = 0; k < classes_.size(); ++k) {
    ClassReport c;
    c.label = classes_[k];
    c.counts = counts_[k];
    c.iou_current = counts_[k][0].iou();
    bool all_defined = true;
    std::vector<double> steps;
    for (int t = 1; t <= n_future_; ++t) {
      const auto v = counts_[k][t].iou();
      c.iou_per_step.push_back(v);
      if (v) {
        steps.push_back(*v);
      } else {
        all_defined = false;
      }
    }
    c.iou_future = mean_of_defined(c.iou_per_step);
    if (all_defined && !steps.empty()) c.iou_discounted = iou_discounted(steps);
    r.classes.push_back(std::move(c));
  }
  if (r.classes.size() > 1) {
    auto class_mean = [&](auto field) -> std::optional<double> {
      double sum = 0.0;
      for (const auto& c : r.classes) {
        const std::optional<double>& v = c.*field;
        if (!v) return std::nullopt;
        sum += *v;
      }
      return sum / static_cast<double>(r.classes.size());
    };
    r.mean_iou_current = class_mean(&ClassReport::iou_current);
    r.mean_iou_future = class_mean(&ClassReport::iou_future);
  }
  if (samples_ > 0 && vpq_samples_ == samples_) {
    r.vpq_counts = vpq_;
    r.vpq = vpq_from_tallies(vpq_);
  }
  return r;
}

EvalReport evaluate_dataset(std::size_t count, const PairLoader& load,
                            const EvalOptions& options, int workers) {
  if (count == 0) throw ConfigError("no samples to evaluate");
  const EvalPair first = load(0);
  if (!first.gt || !first.pred) throw ConfigError("pair 0 is empty");
  const int n_future = first.gt->occupancy.n_future();

  const std::size_t w =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(workers, 1)), 1,
                              count);
  std::vector<EvalAccumulator> parts(w, EvalAccumulator(options.mode, n_future));
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto run = [&](std::size_t part) {
    const std::size_t begin = part * count / w;
    const std::size_t end = (part + 1) * count / w;
    try {
      for (std::size_t i = begin; i < end; ++i) {
        const EvalPair pair = i == 0 ? first : load(i);
        if (!pair.gt || !pair.pred) {
          throw ConfigError("pair " + std::to_string(i) + " is empty");
        }
        parts[part].add(*pair.pred, *pair.gt, options);
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };

  if (w == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(w);
    for (std::size_t part = 0; part < w; ++part) threads.emplace_back(run, part);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  EvalAccumulator total = parts.front();
  for (std::size_t part = 1; part < w; ++part) total.merge(parts[part]);
  return total.report(options.vpq_threshold);
}

}  // namespace occ4d
