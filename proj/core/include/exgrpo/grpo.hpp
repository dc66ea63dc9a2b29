#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "exgrpo/config.hpp"
#include "exgrpo/policy.hpp"
#include "exgrpo/task.hpp"
#include "exgrpo/types.hpp"

namespace exgrpo {

/// K trajectories for one question. For a mixed group `replay_slot` marks
/// the member replayed from the buffer.
struct GroupRollout {
  QuestionId question_id = 0;
  std::vector<Trajectory> trajectories;
  std::vector<int> rewards;
  std::vector<double> advantages;
  std::optional<std::size_t> replay_slot;

  std::size_t size() const { return trajectories.size(); }
  double accuracy() const;
  void validate() const;
};

/// r_i - mean(r), optionally divided by the population std. Identical
/// rewards give all zeros in both modes.
std::vector<double> group_advantages(std::span<const int> rewards,
                                     AdvantageMode mode);

/// exp(current - behavior)
double importance_ratio(double current_logprob, double behavior_logprob);

/// min(w*A, clip(w, 1-eps, 1+eps)*A)
double clip_term(double w, double advantage, double epsilon);

/// True iff the clipped surrogate passes gradient through w at this point.
bool clip_active(double w, double advantage, double epsilon);

/// alpha_low <= acc <= alpha_high
bool masked_indicator(double acc, double alpha_low, double alpha_high);

struct ObjectiveResult {
  double value = 0.0;
  GradientTable gradient;
  /// Mean per-trajectory distribution entropy (the entropy-bonus term
  /// before the coefficient).
  double mean_entropy = 0.0;
};

/// Token-summed, 1/K group-averaged surrogate, averaged over groups, plus
/// entropy_coeff times the mean policy entropy. Groups outside
/// cfg.mask_band (when set) contribute no surrogate.
ObjectiveResult on_policy_objective(std::span<const GroupRollout> groups,
                                    const PolicyParams& params,
                                    const TaskSuite& suite,
                                    const TrainConfig& cfg);

namespace detail {

/// Adds weight * sum_t CLIP(w_t, A) for a trajectory scored against its own
/// behavior log-probs; returns the value added.
double add_surrogate(const PolicyParams& params, const Question& question,
                     const Trajectory& traj, double advantage, double weight,
                     const TrainConfig& cfg, GradientTable& grad);

/// Adds coeff * mean_dist_entropy(traj) / count over `trajs`; returns the
/// mean entropy before scaling.
double add_entropy_bonus(const PolicyParams& params, const TaskSuite& suite,
                         std::span<const Trajectory* const> trajs,
                         double coeff, double& value, GradientTable& grad);

}  // namespace detail

}  // namespace exgrpo
