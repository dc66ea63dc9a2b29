#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "exgrpo/config.hpp"
#include "exgrpo/grpo.hpp"
#include "exgrpo/policy.hpp"
#include "exgrpo/rng.hpp"
#include "exgrpo/types.hpp"

namespace exgrpo {

/// Stored successes for one question plus its latest correctness k/K.
struct BufferEntry {
  std::size_t success_count = 0;  // k
  std::size_t group_size = 0;     // K
  std::vector<Trajectory> stored;

  double latest_acc() const {
    return static_cast<double>(success_count) / static_cast<double>(group_size);
  }
  bool operator==(const BufferEntry& other) const;
};

/// Question -> reward-1 trajectories. Only partially solved questions
/// (0 < acc < 1) live here.
struct ReplayBuffer {
  std::map<QuestionId, BufferEntry> entries;
  std::size_t capacity_per_question = 8;  // 0 = unbounded

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  bool operator==(const ReplayBuffer& other) const = default;
};

/// Questions solved by every member of their latest group.
struct RetiredSet {
  std::set<QuestionId> ids;

  std::size_t size() const { return ids.size(); }
  bool contains(QuestionId id) const { return ids.contains(id); }
  bool operator==(const RetiredSet& other) const = default;
};

/// Success count k in {1..K-1} -> question ids, ascending by k.
struct BucketPartition {
  std::map<std::size_t, std::vector<QuestionId>> buckets;

  std::size_t total() const;
  std::vector<std::size_t> keys() const;
};

/// Files a verified group: all-correct retires the question, partial
/// success stores the correct members (deduplicated by tokens, newest kept
/// within capacity) and sets latest_acc = s/K, zero successes leaves the
/// buffer untouched. Groups for already retired questions are ignored.
void record_group(ReplayBuffer& buffer, RetiredSet& retired,
                  const GroupRollout& group);

/// Gaussian weights exp(-(k/K - mu)^2 / (2 sigma^2)) renormalised over the
/// given nonempty bucket keys.
std::vector<double> bucket_weights(std::span<const std::size_t> nonempty,
                                   std::size_t group_size, double mu,
                                   double sigma);

/// Multinomial(n, p) drawn as a chain of conditional binomials.
std::vector<std::int64_t> multinomial_counts(std::int64_t n,
                                             std::span<const double> p,
                                             Rng& rng);

/// Draws n distinct question ids: bucket counts from `weights` (aligned with
/// partition.keys()), uniform without replacement inside each bucket.
/// Counts that overflow a bucket are clipped and the deficit redrawn over
/// the buckets that still have room.
std::vector<QuestionId> bucket_sample(const BucketPartition& partition,
                                      std::span<const double> weights,
                                      std::size_t n, Rng& rng);

/// Metric of one stored trajectory under the given policy.
double selection_score(const PolicyParams& params, const Question& question,
                       const Trajectory& traj, SelectionMetric metric);

/// Lowest-metric stored trajectory under current params (ties -> lowest
/// index). Refreshes every candidate's cached_metric.
Trajectory select_trajectory(BufferEntry& entry, const PolicyParams& params,
                             const Question& question, SelectionMetric metric);

BucketPartition partition(const ReplayBuffer& buffer, std::size_t group_size);

/// Human-readable invariant violations; empty when the pair is consistent.
std::vector<std::string> validate_buffer(const ReplayBuffer& buffer,
                                         const RetiredSet& retired);

}  // namespace exgrpo
