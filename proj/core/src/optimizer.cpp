#include "exgrpo/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "exgrpo/error.hpp"

namespace exgrpo {

double shaping(double w, double beta) {
  if (w < 0.0) throw Error("shaping of negative weight");
  if (!(beta > 0.0)) throw Error("shaping constant must be positive");
  return w / (w + beta);
}

double shaping_derivative(double w, double beta) {
  const double d = w + beta;
  return beta / (d * d);
}

double trajectory_importance_weight(std::span<const double> current_logprobs,
                                    std::span<const double> behavior_logprobs) {
  if (current_logprobs.size() != behavior_logprobs.size()) {
    throw Error("log-prob length mismatch");
  }
#if defined(EXGRPO_DISABLE_IS_CORRECTION)
  return 1.0;
#else
  double log_w = 0.0;
  for (std::size_t t = 0; t < current_logprobs.size(); ++t) {
    log_w += current_logprobs[t] - behavior_logprobs[t];
  }
  return std::exp(log_w);
#endif
}

namespace {

// Replayed member: value weight * c(W) * A with c = f or identity.
double add_replayed(const PolicyParams& params, const Question& question,
                    const Trajectory& traj, double advantage, double weight,
                    const TrainConfig& cfg, GradientTable& grad) {
  if (advantage == 0.0) return 0.0;
  const std::vector<double> current =
      sequence_logprobs(params, question, traj.tokens);
  if (traj.behavior_logprobs.size() != current.size()) {
    throw Error("behavior log-probs length mismatch");
  }
  std::vector<double> scale(current.size(), 0.0);
  double value = 0.0;
  if (cfg.shaping_granularity == ShapingGranularity::kTrajectory) {
    const double w = trajectory_importance_weight(current, traj.behavior_logprobs);
    const double coeff = cfg.use_shaping ? shaping(w, cfg.beta) : w;
    const double dcoeff = cfg.use_shaping ? shaping_derivative(w, cfg.beta) : 1.0;
    value = coeff * advantage;
    std::fill(scale.begin(), scale.end(), weight * advantage * dcoeff * w);
  } else {
    for (std::size_t t = 0; t < current.size(); ++t) {
      const double w = importance_ratio(current[t], traj.behavior_logprobs[t]);
      const double coeff = cfg.use_shaping ? shaping(w, cfg.beta) : w;
      const double dcoeff = cfg.use_shaping ? shaping_derivative(w, cfg.beta) : 1.0;
      value += coeff * advantage;
      scale[t] = weight * advantage * dcoeff * w;
    }
  }
  add_logprob_gradient(params, question, traj.tokens, scale, grad);
  return weight * value;
}

std::size_t trajectory_count(std::span<const GroupRollout> groups) {
  std::size_t n = 0;
  for (const GroupRollout& g : groups) n += g.size();
  return n;
}

}  // namespace

ObjectiveResult experiential_objective(std::span<const GroupRollout> groups,
                                       const PolicyParams& params,
                                       const TaskSuite& suite,
                                       const TrainConfig& cfg) {
  ObjectiveResult result;
  result.gradient = GradientTable(params.shape());
  if (groups.empty()) return result;
  const double group_weight = 1.0 / static_cast<double>(groups.size());
  std::vector<const Trajectory*> all;
  for (const GroupRollout& group : groups) {
    if (!group.replay_slot) throw Error("missing replay slot");
    group.validate();
    const std::size_t slot = *group.replay_slot;
    const Question& q = suite.at(group.question_id);
    const double member_weight = group_weight / static_cast<double>(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      const Trajectory& traj = group.trajectories[i];
      all.push_back(&traj);
      if (i == slot) {
        result.value += add_replayed(params, q, traj, group.advantages[i],
                                     member_weight, cfg, result.gradient);
      } else {
        if (traj.producer_version != params.version) throw Error("stale rollout");
        result.value += detail::add_surrogate(params, q, traj, group.advantages[i],
                                              member_weight, cfg, result.gradient);
      }
    }
  }
  result.mean_entropy = detail::add_entropy_bonus(
      params, suite, all, cfg.entropy_coeff, result.value, result.gradient);
  return result;
}

ObjectiveResult exgrpo_objective(std::span<const GroupRollout> on_groups,
                                 std::span<const GroupRollout> exp_groups,
                                 const PolicyParams& params,
                                 const TaskSuite& suite, const TrainConfig& cfg) {
  ObjectiveResult on = on_policy_objective(on_groups, params, suite, cfg);
  const double on_weight = 1.0 - cfg.rho;
  if (exp_groups.empty() || cfg.rho == 0.0) {
    on.value *= on_weight;
    if (on_weight != 1.0) {
      for (double& g : on.gradient.values()) g *= on_weight;
    }
    return on;
  }
  const ObjectiveResult ex = experiential_objective(exp_groups, params, suite, cfg);
  ObjectiveResult out;
  out.value = on_weight * on.value + cfg.rho * ex.value;
  out.gradient = GradientTable(params.shape());
  out.gradient.add_scaled(on.gradient, on_weight);
  out.gradient.add_scaled(ex.gradient, cfg.rho);
  const auto n_on = static_cast<double>(trajectory_count(on_groups));
  const auto n_ex = static_cast<double>(trajectory_count(exp_groups));
  out.mean_entropy = (n_on * on.mean_entropy + n_ex * ex.mean_entropy) / (n_on + n_ex);
  return out;
}

bool delayed_start_gate(std::span<const double> history, double threshold) {
  return std::any_of(history.begin(), history.end(),
                     [threshold](double p) { return p > threshold; });
}

Minibatch build_minibatch(const TaskSuite& suite, ReplayBuffer& buffer,
                          const RetiredSet& retired, const PolicyParams& params,
                          const TrainConfig& cfg, bool gate_active, Rng& rng) {
  if (suite.questions.empty()) throw Error("empty task suite");
  Minibatch batch;
  std::size_t n_exp = 0;
  if (gate_active && cfg.rho > 0.0 && !buffer.empty()) {
    const auto cap = static_cast<std::size_t>(
        std::floor(cfg.rho * static_cast<double>(cfg.batch_size)));
    n_exp = std::min(cap, buffer.size());
  }
  if (n_exp > 0) {
    const BucketPartition parts = partition(buffer, cfg.group_size);
    const std::vector<std::size_t> keys = parts.keys();
    const std::vector<double> weights =
        bucket_weights(keys, cfg.group_size, cfg.mu, cfg.sigma);
    for (QuestionId id : bucket_sample(parts, weights, n_exp, rng)) {
      const Question& q = suite.at(id);
      batch.experiential.push_back(
          {id, select_trajectory(buffer.entries.at(id), params, q, cfg.selection_metric)});
    }
  }

  std::vector<QuestionId> eligible;
  eligible.reserve(suite.questions.size());
  for (const Question& q : suite.questions) {
    if (!retired.contains(q.id)) eligible.push_back(q.id);
  }
  const std::size_t n_on = cfg.batch_size - n_exp;
  if (eligible.size() >= n_on) {
    for (std::size_t idx : rng.sample_without_replacement(eligible.size(), n_on)) {
      batch.on_policy.push_back(eligible[idx]);
    }
  } else {
    batch.on_policy_with_replacement = true;
    if (eligible.empty()) {
      for (const Question& q : suite.questions) eligible.push_back(q.id);
    }
    for (std::size_t i = 0; i < n_on; ++i) {
      batch.on_policy.push_back(eligible[rng.uniform_index(eligible.size())]);
    }
  }
  return batch;
}

TrainState::TrainState(TaskSuite s, const TrainConfig& cfg)
    : suite(std::move(s)),
      params(policy_shape_for(suite, cfg.max_len)),
      gate(cfg.delayed_start_threshold) {
  cfg.validate();
  suite.validate();
  buffer.capacity_per_question = cfg.capacity_per_question;
  if (cfg.warm_start_logit != 0.0) {
    for (const Question& q : suite.questions) {
      TokenSeq path = q.golden_answer;
      path.push_back(suite.vocab.end_token);
      for (std::size_t t = 0; t < path.size() && t < cfg.max_len; ++t) {
        const Token* prev = t == 0 ? nullptr : &path[t - 1];
        const std::size_t ctx = params.logits.context(q.class_id, t, prev);
        params.logits.row(ctx)[path[t]] = cfg.warm_start_logit;
      }
    }
  }
}

namespace {

void finish_group(GroupRollout& group, const TrainConfig& cfg) {
  group.advantages = group_advantages(group.rewards, cfg.advantage_mode);
}

}  // namespace

StepReport train_step(TrainState& state, const TrainConfig& cfg, Rng& rng) {
  const bool gate_active = !cfg.use_delayed_start || state.gate.active();
  const PolicyParams& params = state.params;
  Minibatch batch = build_minibatch(state.suite, state.buffer, state.retired,
                                    params, cfg, gate_active, rng);
  state.last_on_policy = batch.on_policy;
  state.last_experiential.clear();
  for (const ExperientialPick& pick : batch.experiential) {
    state.last_experiential.push_back(pick.question_id);
  }

  std::vector<int> fresh_rewards;
  fresh_rewards.reserve(cfg.batch_size * cfg.group_size);
  auto rollout = [&](const Question& q, GroupRollout& group) {
    Trajectory traj = sample_trajectory(params, q, cfg.max_len, rng);
    const int r = verify(state.suite, q, traj.tokens);
    traj.reward = r;
    fresh_rewards.push_back(r);
    group.rewards.push_back(r);
    group.trajectories.push_back(std::move(traj));
  };

  std::vector<GroupRollout> on_groups;
  on_groups.reserve(batch.on_policy.size());
  for (QuestionId id : batch.on_policy) {
    const Question& q = state.suite.at(id);
    GroupRollout& group = on_groups.emplace_back();
    group.question_id = id;
    for (std::size_t i = 0; i < cfg.group_size; ++i) rollout(q, group);
    finish_group(group, cfg);
  }

  std::vector<GroupRollout> exp_groups;
  exp_groups.reserve(batch.experiential.size());
  for (ExperientialPick& pick : batch.experiential) {
    const Question& q = state.suite.at(pick.question_id);
    GroupRollout& group = exp_groups.emplace_back();
    group.question_id = pick.question_id;
    Trajectory replayed = std::move(pick.trajectory);
    if (!cfg.use_is_correction) {
      // Ablation: treat the replayed trajectory as if the current rollout
      // policy had produced it, so W* = 1 at the update point.
      replayed.behavior_logprobs = sequence_logprobs(params, q, replayed.tokens);
    }
    replayed.reward = 1;
    group.trajectories.push_back(std::move(replayed));
    group.rewards.push_back(1);
    group.replay_slot = 0;
    for (std::size_t i = 1; i < cfg.group_size; ++i) rollout(q, group);
    finish_group(group, cfg);
  }

  for (const GroupRollout& g : on_groups) record_group(state.buffer, state.retired, g);
  for (const GroupRollout& g : exp_groups) record_group(state.buffer, state.retired, g);

  // With no experiential groups this is the plain on-policy step.
  const ObjectiveResult objective =
      exp_groups.empty()
          ? on_policy_objective(on_groups, params, state.suite, cfg)
          : exgrpo_objective(on_groups, exp_groups, params, state.suite, cfg);

  state.params.logits.add_scaled(objective.gradient, cfg.learning_rate);
  ++state.params.version;

  StepReport report;
  report.step = state.step;
  report.pass_at_1 = pass_at_1(fresh_rewards);
  report.buffer_size = state.buffer.size();
  report.retired_size = state.retired.size();
  report.mean_entropy = objective.mean_entropy;
  report.objective_value = objective.value;
  report.n_experiential = exp_groups.size();
  report.gate_active = gate_active;
  report.suite_pass_at_1 = suite_pass_at_1(state.params, state.suite, cfg.max_len);
  report.on_policy_with_replacement = batch.on_policy_with_replacement;

  state.gate.observe(report.pass_at_1);
  ++state.step;
  return report;
}

}  // namespace exgrpo
