#include "exgrpo/experience.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "exgrpo/error.hpp"

namespace exgrpo {

namespace {

bool same_bits(double a, double b) {
  return std::memcmp(&a, &b, sizeof(double)) == 0;
}

bool same_trajectory(const Trajectory& a, const Trajectory& b) {
  if (a.question_id != b.question_id || a.tokens != b.tokens ||
      a.reward != b.reward || a.producer_version != b.producer_version ||
      a.behavior_logprobs.size() != b.behavior_logprobs.size() ||
      a.cached_metric.has_value() != b.cached_metric.has_value()) {
    return false;
  }
  for (std::size_t i = 0; i < a.behavior_logprobs.size(); ++i) {
    if (!same_bits(a.behavior_logprobs[i], b.behavior_logprobs[i])) return false;
  }
  return !a.cached_metric || same_bits(*a.cached_metric, *b.cached_metric);
}

}  // namespace

bool BufferEntry::operator==(const BufferEntry& other) const {
  if (success_count != other.success_count || group_size != other.group_size ||
      stored.size() != other.stored.size()) {
    return false;
  }
  for (std::size_t i = 0; i < stored.size(); ++i) {
    if (!same_trajectory(stored[i], other.stored[i])) return false;
  }
  return true;
}

std::size_t BucketPartition::total() const {
  std::size_t n = 0;
  for (const auto& [k, ids] : buckets) n += ids.size();
  return n;
}

std::vector<std::size_t> BucketPartition::keys() const {
  std::vector<std::size_t> out;
  out.reserve(buckets.size());
  for (const auto& [k, ids] : buckets) out.push_back(k);
  return out;
}

void record_group(ReplayBuffer& buffer, RetiredSet& retired,
                  const GroupRollout& group) {
  if (group.rewards.size() != group.trajectories.size()) {
    throw Error("group sequences differ in length");
  }
  if (group.replay_slot && group.rewards.at(*group.replay_slot) != 1) {
    throw Error("replayed member reward must be 1");
  }
  if (retired.contains(group.question_id)) return;
  const std::size_t k = group.rewards.size();
  const auto s = static_cast<std::size_t>(
      std::count(group.rewards.begin(), group.rewards.end(), 1));
  if (s == 0) return;
  if (s == k) {
    retired.ids.insert(group.question_id);
    buffer.entries.erase(group.question_id);
    return;
  }
  BufferEntry& entry = buffer.entries[group.question_id];
  entry.success_count = s;
  entry.group_size = k;
  for (std::size_t i = 0; i < k; ++i) {
    if (group.rewards[i] != 1) continue;
    const Trajectory& traj = group.trajectories[i];
    const bool seen = std::any_of(
        entry.stored.begin(), entry.stored.end(),
        [&traj](const Trajectory& t) { return t.tokens == traj.tokens; });
    if (seen) continue;
    entry.stored.push_back(traj);
    entry.stored.back().reward = 1;
  }
  if (buffer.capacity_per_question > 0 &&
      entry.stored.size() > buffer.capacity_per_question) {
    const auto excess = static_cast<std::ptrdiff_t>(
        entry.stored.size() - buffer.capacity_per_question);
    entry.stored.erase(entry.stored.begin(), entry.stored.begin() + excess);
  }
}

std::vector<double> bucket_weights(std::span<const std::size_t> nonempty,
                                   std::size_t group_size, double mu,
                                   double sigma) {
  if (nonempty.empty()) throw Error("empty buffer");
  if (group_size == 0) throw Error("group size must be positive");
  if (!(sigma > 0.0)) throw Error("sigma must be positive");
  std::vector<double> w(nonempty.size());
  double total = 0.0;
  for (std::size_t i = 0; i < nonempty.size(); ++i) {
    const double acc =
        static_cast<double>(nonempty[i]) / static_cast<double>(group_size);
    const double z = (acc - mu) / sigma;
    w[i] = std::exp(-0.5 * z * z);
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

std::vector<std::int64_t> multinomial_counts(std::int64_t n,
                                             std::span<const double> p,
                                             Rng& rng) {
  if (n < 0) throw Error("negative sample count");
  if (p.empty()) throw Error("empty probability vector");
  double total = 0.0;
  for (double x : p) {
    if (x < 0.0) throw Error("negative probability");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error("probabilities must sum to 1");
  std::vector<std::int64_t> counts(p.size(), 0);
  std::int64_t remaining = n;
  double consumed = 0.0;
  for (std::size_t i = 0; i + 1 < p.size() && remaining > 0; ++i) {
    const double rest = 1.0 - consumed;
    const double ratio = rest > 0.0 ? std::clamp(p[i] / rest, 0.0, 1.0) : 1.0;
    counts[i] = rng.binomial(remaining, ratio);
    remaining -= counts[i];
    consumed += p[i];
  }
  counts.back() += remaining;
  return counts;
}

std::vector<QuestionId> bucket_sample(const BucketPartition& partition,
                                      std::span<const double> weights,
                                      std::size_t n, Rng& rng) {
  if (weights.size() != partition.buckets.size()) {
    throw Error("weights do not match buckets");
  }
  if (n > partition.total()) throw Error("buffer underflow");
  std::vector<const std::vector<QuestionId>*> members;
  for (const auto& [k, ids] : partition.buckets) members.push_back(&ids);

  std::vector<std::size_t> counts(members.size(), 0);
  std::size_t deficit = n;
  while (deficit > 0) {
    std::vector<std::size_t> open;
    double mass = 0.0;
    for (std::size_t b = 0; b < members.size(); ++b) {
      if (counts[b] < members[b]->size()) {
        open.push_back(b);
        mass += weights[b];
      }
    }
    std::vector<double> p(open.size());
    for (std::size_t i = 0; i < open.size(); ++i) {
      // Zero-weight leftovers: fall back to room-proportional weights.
      p[i] = mass > 0.0 ? weights[open[i]] / mass
                        : static_cast<double>(members[open[i]]->size() -
                                              counts[open[i]]);
    }
    if (mass <= 0.0) {
      const double room = std::accumulate(p.begin(), p.end(), 0.0);
      for (double& x : p) x /= room;
    }
    // Renormalise exactly so the multinomial precondition holds.
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& x : p) x /= sum;
    const std::vector<std::int64_t> draw =
        multinomial_counts(static_cast<std::int64_t>(deficit), p, rng);
    deficit = 0;
    for (std::size_t i = 0; i < open.size(); ++i) {
      const std::size_t b = open[i];
      const std::size_t room = members[b]->size() - counts[b];
      const auto want = static_cast<std::size_t>(draw[i]);
      const std::size_t take = std::min(want, room);
      counts[b] += take;
      deficit += want - take;
    }
  }

  std::vector<QuestionId> out;
  out.reserve(n);
  for (std::size_t b = 0; b < members.size(); ++b) {
    for (std::size_t idx : rng.sample_without_replacement(members[b]->size(), counts[b])) {
      out.push_back((*members[b])[idx]);
    }
  }
  return out;
}

double selection_score(const PolicyParams& params, const Question& question,
                       const Trajectory& traj, SelectionMetric metric) {
  switch (metric) {
    case SelectionMetric::kMeanNll:
      return trajectory_entropy(params, question, traj.tokens, EntropyMode::kMeanNll);
    case SelectionMetric::kMeanDistEntropy:
      return trajectory_entropy(params, question, traj.tokens,
                                EntropyMode::kMeanDistEntropy);
    case SelectionMetric::kPerplexity:
      return trajectory_perplexity(params, question, traj.tokens);
  }
  throw Error("unknown selection metric");
}

Trajectory select_trajectory(BufferEntry& entry, const PolicyParams& params,
                             const Question& question, SelectionMetric metric) {
  if (entry.stored.empty()) throw Error("buffer entry has no trajectories");
  std::size_t best = 0;
  for (std::size_t i = 0; i < entry.stored.size(); ++i) {
    Trajectory& traj = entry.stored[i];
    traj.cached_metric = selection_score(params, question, traj, metric);
    if (*traj.cached_metric < *entry.stored[best].cached_metric) best = i;
  }
  return entry.stored[best];
}

BucketPartition partition(const ReplayBuffer& buffer, std::size_t group_size) {
  BucketPartition out;
  for (const auto& [id, entry] : buffer.entries) {
    const double scaled = entry.latest_acc() * static_cast<double>(group_size);
    const double k = std::round(scaled);
    if (std::abs(scaled - k) > 1e-9 || k < 1.0 ||
        k > static_cast<double>(group_size) - 1.0) {
      throw Error("corrupt accuracy");
    }
    out.buckets[static_cast<std::size_t>(k)].push_back(id);
  }
  return out;
}

std::vector<std::string> validate_buffer(const ReplayBuffer& buffer,
                                         const RetiredSet& retired) {
  std::vector<std::string> issues;
  for (const auto& [id, entry] : buffer.entries) {
    const std::string who = "question " + std::to_string(id);
    if (retired.contains(id)) issues.push_back(who + ": also in retired set");
    if (entry.group_size == 0 || entry.success_count == 0 ||
        entry.success_count >= entry.group_size) {
      issues.push_back(who + ": latest_acc " + std::to_string(entry.success_count) +
                       "/" + std::to_string(entry.group_size) +
                       " outside (0, 1)");
    }
    if (entry.stored.empty()) issues.push_back(who + ": no stored trajectories");
    if (buffer.capacity_per_question > 0 &&
        entry.stored.size() > buffer.capacity_per_question) {
      issues.push_back(who + ": exceeds capacity");
    }
    for (std::size_t i = 0; i < entry.stored.size(); ++i) {
      const Trajectory& t = entry.stored[i];
      const std::string which = who + " trajectory " + std::to_string(i);
      if (t.reward != 1) issues.push_back(which + ": reward is not 1");
      if (t.question_id != id) issues.push_back(which + ": question id mismatch");
      if (t.tokens.size() != t.behavior_logprobs.size()) {
        issues.push_back(which + ": log-prob count differs from token count");
      }
      for (double lp : t.behavior_logprobs) {
        if (!(lp <= 0.0)) {
          issues.push_back(which + ": positive or NaN behavior log-prob");
          break;
        }
      }
    }
  }
  return issues;
}

}  // namespace exgrpo
