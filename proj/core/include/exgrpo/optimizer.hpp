#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "exgrpo/config.hpp"
#include "exgrpo/experience.hpp"
#include "exgrpo/grpo.hpp"
#include "exgrpo/policy.hpp"
#include "exgrpo/rng.hpp"
#include "exgrpo/task.hpp"

namespace exgrpo {

/// Policy shaping f(w) = w / (w + beta). Throws on negative w.
double shaping(double w, double beta);
/// f'(w) = beta / (w + beta)^2
double shaping_derivative(double w, double beta);

/// W = prod_t pi(o_t)/pi_behavior(o_t), evaluated in log space.
double trajectory_importance_weight(std::span<const double> current_logprobs,
                                    std::span<const double> behavior_logprobs);

/// Mixed groups (one replayed member + K-1 fresh rollouts). Fresh members
/// use the standard surrogate; the replayed member contributes
/// f(W*) * A (or W* * A without shaping), with W* taken against its stored
/// behavior log-probs. Averaged 1/K within a group and over groups, plus
/// the entropy bonus.
ObjectiveResult experiential_objective(std::span<const GroupRollout> groups,
                                       const PolicyParams& params,
                                       const TaskSuite& suite,
                                       const TrainConfig& cfg);

/// (1 - rho) * on-policy + rho * experiential. An empty experiential part
/// contributes nothing; the on-policy part keeps its (1 - rho) factor.
ObjectiveResult exgrpo_objective(std::span<const GroupRollout> on_groups,
                                 std::span<const GroupRollout> exp_groups,
                                 const PolicyParams& params,
                                 const TaskSuite& suite, const TrainConfig& cfg);

/// True once any observed batch Pass@1 exceeded the threshold.
bool delayed_start_gate(std::span<const double> history, double threshold);

/// Latching form of delayed_start_gate used by the training loop.
class DelayedStartGate {
 public:
  explicit DelayedStartGate(double threshold) : threshold_(threshold) {}

  void observe(double pass_at_1) {
    if (pass_at_1 > threshold_) open_ = true;
  }
  bool active() const { return open_; }

 private:
  double threshold_;
  bool open_ = false;
};

struct ExperientialPick {
  QuestionId question_id = 0;
  Trajectory trajectory;
};

struct Minibatch {
  std::vector<QuestionId> on_policy;
  std::vector<ExperientialPick> experiential;
  /// Set when too few unretired questions were left to fill the on-policy
  /// slots without replacement.
  bool on_policy_with_replacement = false;
};

/// |exp| = min(floor(rho*B), |buffer|) when the gate is active, else 0; the
/// remaining B - |exp| slots are drawn uniformly from unretired questions.
Minibatch build_minibatch(const TaskSuite& suite, ReplayBuffer& buffer,
                          const RetiredSet& retired, const PolicyParams& params,
                          const TrainConfig& cfg, bool gate_active, Rng& rng);

struct StepReport {
  std::uint64_t step = 0;
  double pass_at_1 = 0.0;  // fresh rollouts of this batch
  std::size_t buffer_size = 0;
  std::size_t retired_size = 0;
  double mean_entropy = 0.0;
  double objective_value = 0.0;
  std::size_t n_experiential = 0;
  bool gate_active = false;
  /// Exact probability of solving a uniformly drawn suite question in one
  /// attempt, under the parameters after this step's update.
  double suite_pass_at_1 = 0.0;
  bool on_policy_with_replacement = false;

  bool operator==(const StepReport& other) const = default;
};

struct TrainState {
  TaskSuite suite;
  PolicyParams params;
  ReplayBuffer buffer;
  RetiredSet retired;
  DelayedStartGate gate;
  std::uint64_t step = 0;
  /// Question ids drawn by the most recent step.
  std::vector<QuestionId> last_on_policy;
  std::vector<QuestionId> last_experiential;

  /// Zero logits (uniform policy) sized for the suite.
  TrainState(TaskSuite suite, const TrainConfig& cfg);
};

/// One iteration of the experience-managed loop: gate check, mini-batch,
/// rollouts and rewards, buffer/retired updates, objective, ascent step.
StepReport train_step(TrainState& state, const TrainConfig& cfg, Rng& rng);

}  // namespace exgrpo
