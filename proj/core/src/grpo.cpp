#include "exgrpo/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "exgrpo/error.hpp"

namespace exgrpo {

double GroupRollout::accuracy() const {
  if (rewards.empty()) return 0.0;
  return static_cast<double>(std::accumulate(rewards.begin(), rewards.end(), 0)) /
         static_cast<double>(rewards.size());
}

void GroupRollout::validate() const {
  const std::size_t k = trajectories.size();
  if (k < 2) throw Error("group too small");
  if (rewards.size() != k || advantages.size() != k) {
    throw Error("group sequences differ in length");
  }
  for (int r : rewards) {
    if (r != 0 && r != 1) throw Error("reward must be 0 or 1");
  }
  if (replay_slot) {
    if (*replay_slot >= k) throw Error("replay slot out of range");
    if (rewards[*replay_slot] != 1) throw Error("replayed member reward must be 1");
  }
}

std::vector<double> group_advantages(std::span<const int> rewards,
                                     AdvantageMode mode) {
  if (rewards.size() < 2) throw Error("group too small");
  const auto k = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (int r : rewards) mean += r;
  mean /= k;
  std::vector<double> adv(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) adv[i] = rewards[i] - mean;
  if (mode.scale_by_std) {
    double var = 0.0;
    for (double a : adv) var += a * a;
    const double sd = std::sqrt(var / k);
    if (sd > 0.0) {
      for (double& a : adv) a /= sd;
    } else {
      std::fill(adv.begin(), adv.end(), 0.0);
    }
  }
  return adv;
}

double importance_ratio(double current_logprob, double behavior_logprob) {
  return std::exp(current_logprob - behavior_logprob);
}

double clip_term(double w, double advantage, double epsilon) {
  const double clipped = std::clamp(w, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(w * advantage, clipped * advantage);
}

bool clip_active(double w, double advantage, double epsilon) {
  if (advantage > 0.0) return w <= 1.0 + epsilon;
  if (advantage < 0.0) return w >= 1.0 - epsilon;
  return true;
}

bool masked_indicator(double acc, double alpha_low, double alpha_high) {
  return alpha_low <= acc && acc <= alpha_high;
}

namespace detail {

double add_surrogate(const PolicyParams& params, const Question& question,
                     const Trajectory& traj, double advantage, double weight,
                     const TrainConfig& cfg, GradientTable& grad) {
  if (advantage == 0.0 || weight == 0.0) return 0.0;
  const std::vector<double> current =
      sequence_logprobs(params, question, traj.tokens);
  if (traj.behavior_logprobs.size() != current.size()) {
    throw Error("behavior log-probs length mismatch");
  }
  std::vector<double> scale(current.size(), 0.0);
  double value = 0.0;
  for (std::size_t t = 0; t < current.size(); ++t) {
    const double w = importance_ratio(current[t], traj.behavior_logprobs[t]);
    if (cfg.use_clip) {
      value += clip_term(w, advantage, cfg.epsilon);
      if (clip_active(w, advantage, cfg.epsilon)) scale[t] = weight * w * advantage;
    } else {
      value += w * advantage;
      scale[t] = weight * w * advantage;
    }
  }
  add_logprob_gradient(params, question, traj.tokens, scale, grad);
  return weight * value;
}

double add_entropy_bonus(const PolicyParams& params, const TaskSuite& suite,
                         std::span<const Trajectory* const> trajs,
                         double coeff, double& value, GradientTable& grad) {
  if (trajs.empty()) return 0.0;
  const auto n = static_cast<double>(trajs.size());
  double total = 0.0;
  for (const Trajectory* traj : trajs) {
    const Question& q = suite.at(traj->question_id);
    total += trajectory_entropy(params, q, traj->tokens,
                                EntropyMode::kMeanDistEntropy);
    if (coeff != 0.0) add_entropy_gradient(params, q, traj->tokens, coeff / n, grad);
  }
  const double mean = total / n;
  value += coeff * mean;
  return mean;
}

}  // namespace detail

ObjectiveResult on_policy_objective(std::span<const GroupRollout> groups,
                                    const PolicyParams& params,
                                    const TaskSuite& suite,
                                    const TrainConfig& cfg) {
  ObjectiveResult result;
  result.gradient = GradientTable(params.shape());
  if (groups.empty()) return result;
  const double group_weight = 1.0 / static_cast<double>(groups.size());
  std::vector<const Trajectory*> all;
  for (const GroupRollout& group : groups) {
    group.validate();
    if (group.replay_slot) throw Error("replayed member in on-policy group");
    for (const Trajectory& traj : group.trajectories) {
      if (traj.producer_version != params.version) throw Error("stale rollout");
      all.push_back(&traj);
    }
    if (cfg.mask_band &&
        !masked_indicator(group.accuracy(), cfg.mask_band->low, cfg.mask_band->high)) {
      continue;
    }
    const Question& q = suite.at(group.question_id);
    const double member_weight = group_weight / static_cast<double>(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      result.value += detail::add_surrogate(params, q, group.trajectories[i],
                                            group.advantages[i], member_weight,
                                            cfg, result.gradient);
    }
  }
  result.mean_entropy = detail::add_entropy_bonus(
      params, suite, all, cfg.entropy_coeff, result.value, result.gradient);
  return result;
}

}  // namespace exgrpo
