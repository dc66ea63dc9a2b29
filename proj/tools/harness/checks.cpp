#include "checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <fmt/format.h>

#include "exgrpo/error.hpp"
#include "exgrpo/experience.hpp"
#include "exgrpo/grpo.hpp"
#include "exgrpo/optimizer.hpp"
#include "exgrpo/oracle.hpp"
#include "exgrpo/rng.hpp"

namespace exgrpo::harness {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Small enumerable instance: one question, fixed-length sequences.
struct Instance {
  oracle::EnumerationSpace space;
  PolicyParams past;
  PolicyParams current;
  std::vector<double> g_table;  // indexed by lexicographic sequence rank
};

std::size_t sequence_rank(const TokenSeq& tokens, std::size_t vocab) {
  std::size_t rank = 0;
  for (Token t : tokens) rank = rank * vocab + t;
  return rank;
}

Instance random_instance(Rng& rng, std::size_t max_vocab, std::size_t max_length,
                         double shift) {
  Instance inst;
  inst.space.vocab_size = 2 + rng.uniform_index(max_vocab - 1);
  inst.space.length = 1 + rng.uniform_index(max_length);
  inst.space.question.id = 0;
  inst.space.question.class_id = 0;
  const PolicyShape shape{Vocabulary{inst.space.vocab_size, 0}, 1, inst.space.length};
  inst.past = PolicyParams(shape);
  oracle::randomize_logits(inst.past, 1.0, rng);
  inst.current = inst.past;
  PolicyParams delta(shape);
  oracle::randomize_logits(delta, shift, rng);
  inst.current.logits.add_scaled(delta.logits, 1.0);
  inst.current.version = inst.past.version + 1;
  std::size_t n = 1;
  for (std::size_t i = 0; i < inst.space.length; ++i) n *= inst.space.vocab_size;
  std::normal_distribution<double> normal(0.0, 1.0);
  inst.g_table.resize(n);
  for (double& g : inst.g_table) g = normal(rng.engine());
  return inst;
}

oracle::TrajectoryFunction table_function(const Instance& inst) {
  return [&inst](const TokenSeq& tokens) {
    return inst.g_table[sequence_rank(tokens, inst.space.vocab_size)];
  };
}

double chi_square_p_value(const std::vector<double>& observed,
                          const std::vector<double>& expected) {
  // Pool cells with expected count < 5 so the asymptotic law applies.
  std::vector<double> obs;
  std::vector<double> exp;
  double pooled_obs = 0.0;
  double pooled_exp = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (expected[i] < 5.0) {
      pooled_obs += observed[i];
      pooled_exp += expected[i];
    } else {
      obs.push_back(observed[i]);
      exp.push_back(expected[i]);
    }
  }
  if (pooled_exp > 0.0) {
    obs.push_back(pooled_obs);
    exp.push_back(pooled_exp);
  }
  double stat = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    stat += (obs[i] - exp[i]) * (obs[i] - exp[i]) / exp[i];
  }
  const boost::math::chi_squared dist(static_cast<double>(obs.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, stat));
}

// ---- gradient-check fixtures ----

struct GradientFixture {
  TaskSuite suite;
  TrainConfig cfg;
  PolicyParams params;
  std::vector<GroupRollout> on_groups;
  std::vector<GroupRollout> exp_groups;
};

void finish(GroupRollout& group, const TrainConfig& cfg) {
  group.advantages = group_advantages(group.rewards, cfg.advantage_mode);
}

GradientFixture random_gradient_fixture(Rng& rng, std::size_t index) {
  GradientFixture fx;
  const Vocabulary vocab{3, 0};
  StrataSpec strata{{{1, 1}, {2, 1}}, 0};
  fx.suite = generate_suite(strata, vocab, rng);

  fx.cfg.group_size = 2 + rng.uniform_index(3);
  fx.cfg.max_len = 3;
  fx.cfg.use_clip = (index % 2) == 1;
  fx.cfg.use_shaping = ((index / 2) % 2) == 1;
  fx.cfg.shaping_granularity =
      ((index / 4) % 2) == 1 ? ShapingGranularity::kToken : ShapingGranularity::kTrajectory;
  fx.cfg.advantage_mode.scale_by_std = rng.uniform01() < 0.5;
  const double coeffs[] = {0.0, 0.001, 0.05};
  fx.cfg.entropy_coeff = coeffs[rng.uniform_index(3)];
  fx.cfg.rho = 0.1 + 0.8 * rng.uniform01();
  fx.cfg.epsilon = 0.2;

  const PolicyShape shape = policy_shape_for(fx.suite, fx.cfg.max_len);
  PolicyParams rollout(shape);
  oracle::randomize_logits(rollout, 1.0, rng);
  rollout.version = 7;
  PolicyParams past(shape);
  oracle::randomize_logits(past, 1.0, rng);
  past.version = 3;

  // Evaluate away from the rollout point so ratios differ from 1 and
  // clipping actually engages.
  fx.params = rollout;
  PolicyParams delta(shape);
  oracle::randomize_logits(delta, 0.3, rng);
  fx.params.logits.add_scaled(delta.logits, 1.0);

  auto fresh = [&](const Question& q, GroupRollout& group) {
    Trajectory t = sample_trajectory(rollout, q, fx.cfg.max_len, rng);
    const int r = rng.uniform01() < 0.5 ? 1 : 0;
    t.reward = r;
    group.rewards.push_back(r);
    group.trajectories.push_back(std::move(t));
  };

  const std::size_t n_on = 1 + rng.uniform_index(3);
  for (std::size_t g = 0; g < n_on; ++g) {
    const Question& q = fx.suite.questions[rng.uniform_index(fx.suite.questions.size())];
    GroupRollout& group = fx.on_groups.emplace_back();
    group.question_id = q.id;
    for (std::size_t i = 0; i < fx.cfg.group_size; ++i) fresh(q, group);
    finish(group, fx.cfg);
  }
  const std::size_t n_exp = 1 + rng.uniform_index(3);
  for (std::size_t g = 0; g < n_exp; ++g) {
    const Question& q = fx.suite.questions[rng.uniform_index(fx.suite.questions.size())];
    GroupRollout& group = fx.exp_groups.emplace_back();
    group.question_id = q.id;
    Trajectory replayed = sample_trajectory(past, q, fx.cfg.max_len, rng);
    replayed.reward = 1;
    group.trajectories.push_back(std::move(replayed));
    group.rewards.push_back(1);
    group.replay_slot = 0;
    for (std::size_t i = 1; i < fx.cfg.group_size; ++i) fresh(q, group);
    finish(group, fx.cfg);
  }
  return fx;
}

std::string mean_std(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = xs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return fmt::format("{:.4f} +- {:.4f}", mean, sd);
}

}  // namespace

CheckResult check_unbiasedness(std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult res{"unbiasedness", false, "", 0.0};
  Rng rng = Rng::derive(seed, 101);
  constexpr std::size_t kInstances = 120;
  constexpr std::size_t kMonteCarlo = 10;
  std::size_t exact_ok = 0;
  double worst = 0.0;
  std::size_t mc_ok = 0;
  double worst_z = 0.0;
  for (std::size_t i = 0; i < kInstances; ++i) {
    const Instance inst = random_instance(rng, 3, 3, 0.7);
    const auto g = table_function(inst);
    const auto rep = oracle::check_unbiasedness(inst.past, inst.current, inst.space, g);
    exact_ok += rep.pass ? 1 : 0;
    worst = std::max(worst, rep.abs_diff);
    if (i < kMonteCarlo) {
      const auto mc =
          oracle::check_unbiasedness_mc(inst.past, inst.current, inst.space, g, 100000, rng);
      mc_ok += mc.pass ? 1 : 0;
      worst_z = std::max(worst_z, std::abs(mc.z_score));
    }
  }
  res.seconds = seconds_since(start);
  res.pass = exact_ok == kInstances && mc_ok == kMonteCarlo && res.seconds < 60.0;
  res.detail = fmt::format(
      "exact {}/{} (max |diff| {:.2e} <= 1e-10), monte carlo {}/{} within 3 se "
      "(max |z| {:.2f}, 1e5 samples), {:.1f}s",
      exact_ok, kInstances, worst, mc_ok, kMonteCarlo, worst_z, res.seconds);
  return res;
}

CheckResult check_correction_necessity(std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult res{"correction_necessity", false, "", 0.0};
  Rng rng = Rng::derive(seed, 102);
  constexpr std::size_t kInstances = 200;
  std::size_t broken = 0;
  for (std::size_t i = 0; i < kInstances; ++i) {
    const Instance inst = random_instance(rng, 3, 3, 1.0);
    const auto rep = oracle::check_unbiasedness(inst.past, inst.current, inst.space,
                                                table_function(inst), 1e-10,
                                                oracle::WeightTransform::kNone);
    if (rep.abs_diff > 1e-3) ++broken;
  }
  const double frac = static_cast<double>(broken) / kInstances;
  res.pass = frac >= 0.95;
  res.seconds = seconds_since(start);
  res.detail = fmt::format("W=1 breaks {}/{} instances ({:.1f}% >= 95%)", broken,
                           kInstances, 100.0 * frac);
  return res;
}

CheckResult check_variance_bound(std::uint64_t seed, std::size_t n_samples) {
  const auto start = Clock::now();
  CheckResult res{"variance_bound", false, "", 0.0};
  Rng rng = Rng::derive(seed, 103);
  std::size_t total = 0;
  std::size_t ok_a = 0;
  std::size_t indep = 0;
  std::size_t ok_b = 0;
  double tightest = 0.0;
  for (std::size_t k : {2, 4, 8}) {
    for (std::size_t rep = 0; rep < 4; ++rep) {
      const Instance inst = random_instance(rng, 3, 2, 0.5);
      const std::size_t n_seq = inst.g_table.size();
      std::vector<int> reward(n_seq, 0);
      // At least one success and one failure so advantages are not trivial.
      for (int& r : reward) r = rng.uniform01() < 0.5 ? 1 : 0;
      reward[rng.uniform_index(n_seq)] = 1;
      std::size_t zero = rng.uniform_index(n_seq);
      while (reward[zero] == 1 &&
             std::count(reward.begin(), reward.end(), 1) == static_cast<long>(n_seq)) {
        reward[zero] = 0;
        zero = rng.uniform_index(n_seq);
      }
      oracle::VarianceInstance vi;
      const std::size_t vocab = inst.space.vocab_size;
      vi.reward = [reward, vocab](const TokenSeq& t) { return reward[sequence_rank(t, vocab)]; };
      vi.direction.resize(inst.current.logits.size());
      std::normal_distribution<double> normal(0.0, 1.0);
      for (double& d : vi.direction) d = normal(rng.engine());
      vi.regime = rep % 2 == 0 ? oracle::VarianceRegime::kGroupMean
                               : oracle::VarianceRegime::kIndependent;
      const auto vr = oracle::check_variance_bounds(inst.past, inst.current, inst.space,
                                                    k, vi, n_samples, rng);
      ++total;
      ok_a += vr.pass_A ? 1 : 0;
      if (vr.pass_B.has_value()) {
        ++indep;
        ok_b += *vr.pass_B ? 1 : 0;
      }
      if (vr.bound_A_prime > 0.0) {
        tightest = std::max(tightest, vr.empirical_var / vr.bound_A_prime);
      }
    }
  }
  res.seconds = seconds_since(start);
  res.pass = ok_a == total;
  res.detail = fmt::format(
      "A' holds on {}/{} instances (K in 2,4,8; max var/A' {:.3f}); B' holds on "
      "{}/{} independent-baseline instances",
      ok_a, total, tightest, ok_b, indep);
  return res;
}

CheckResult check_shaping_function() {
  const auto start = Clock::now();
  CheckResult res{"shaping_function", false, "", 0.0};
  const double beta = 0.1;
  const bool f0 = shaping(0.0, beta) == 0.0;
  const bool fb = shaping(beta, beta) == 0.5;
  const double f1 = shaping(1.0, beta);
  const bool f1_ok = std::abs(f1 - 10.0 / 11.0) <= 1e-15;
  bool monotone = true;
  double prev = -1.0;
  for (int i = 0; i < 10000; ++i) {
    const double w = 10.0 * static_cast<double>(i) / 9999.0;
    const double f = shaping(w, beta);
    if (!(f > prev) || f < 0.0 || f >= 1.0) monotone = false;
    prev = f;
  }
  res.pass = f0 && fb && f1_ok && monotone;
  res.seconds = seconds_since(start);
  res.detail = fmt::format("f(0)=0 {}, f(beta)=0.5 {}, f(1)-10/11={:.1e}, "
                           "strictly increasing in [0,1) on 1e4 grid {}",
                           f0, fb, f1 - 10.0 / 11.0, monotone);
  return res;
}

CheckResult check_objective_gradients(std::uint64_t seed, std::size_t configs) {
  const auto start = Clock::now();
  CheckResult res{"objective_gradients", false, "", 0.0};
  Rng rng = Rng::derive(seed, 104);
  std::size_t ok[3] = {0, 0, 0};
  double worst[3] = {0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < configs; ++i) {
    const GradientFixture fx = random_gradient_fixture(rng, i);
    const std::function<ObjectiveResult(const PolicyParams&)> objectives[3] = {
        [&](const PolicyParams& p) {
          return on_policy_objective(fx.on_groups, p, fx.suite, fx.cfg);
        },
        [&](const PolicyParams& p) {
          return experiential_objective(fx.exp_groups, p, fx.suite, fx.cfg);
        },
        [&](const PolicyParams& p) {
          return exgrpo_objective(fx.on_groups, fx.exp_groups, p, fx.suite, fx.cfg);
        },
    };
    for (int o = 0; o < 3; ++o) {
      const ObjectiveResult analytic = objectives[o](fx.params);
      const GradientTable numeric = oracle::finite_difference_gradient(
          [&](const PolicyParams& p) { return objectives[o](p).value; }, fx.params);
      const double err =
          oracle::relative_error(analytic.gradient.values(), numeric.values());
      worst[o] = std::max(worst[o], err);
      if (err < 1e-4) ++ok[o];
    }
  }
  res.seconds = seconds_since(start);
  res.pass = ok[0] == configs && ok[1] == configs && ok[2] == configs;
  res.detail = fmt::format(
      "on_policy {}/{} (max {:.1e}), experiential {}/{} (max {:.1e}), exgrpo {}/{} "
      "(max {:.1e}); relative error < 1e-4",
      ok[0], configs, worst[0], ok[1], configs, worst[1], ok[2], configs, worst[2]);
  return res;
}

CheckResult check_samplers(std::uint64_t seed) {
  const auto start = Clock::now();
  CheckResult res{"samplers", false, "", 0.0};
  Rng rng = Rng::derive(seed, 105);
  constexpr int kDraws = 10000;

  // Multinomial(10; 0.2, 0.3, 0.5) over its 66 outcomes.
  const std::vector<double> p = {0.2, 0.3, 0.5};
  std::map<std::pair<int, int>, std::size_t> cell;
  std::vector<double> expected;
  for (int a = 0; a <= 10; ++a) {
    for (int b = 0; a + b <= 10; ++b) {
      const int c = 10 - a - b;
      const double log_pmf = std::lgamma(11.0) - std::lgamma(a + 1.0) -
                             std::lgamma(b + 1.0) - std::lgamma(c + 1.0) +
                             a * std::log(p[0]) + b * std::log(p[1]) + c * std::log(p[2]);
      cell[{a, b}] = expected.size();
      expected.push_back(kDraws * std::exp(log_pmf));
    }
  }
  std::vector<double> observed(expected.size(), 0.0);
  for (int i = 0; i < kDraws; ++i) {
    const auto counts = multinomial_counts(10, p, rng);
    observed[cell.at({static_cast<int>(counts[0]), static_cast<int>(counts[1])})] += 1.0;
  }
  const double p_multi = chi_square_p_value(observed, expected);

  // Uniform 2-subsets of a 5-question bucket.
  BucketPartition single;
  single.buckets[1] = {0, 1, 2, 3, 4};
  const std::vector<double> one = {1.0};
  std::vector<double> pair_obs(25, 0.0);
  for (int i = 0; i < kDraws; ++i) {
    auto ids = bucket_sample(single, one, 2, rng);
    std::sort(ids.begin(), ids.end());
    pair_obs[ids[0] * 5 + ids[1]] += 1.0;
  }
  std::vector<double> subset_obs;
  std::vector<double> subset_exp;
  for (int a = 0; a < 5; ++a) {
    for (int b = a + 1; b < 5; ++b) {
      subset_obs.push_back(pair_obs[a * 5 + b]);
      subset_exp.push_back(kDraws / 10.0);
    }
  }
  const double p_uniform = chi_square_p_value(subset_obs, subset_exp);

  // Duplicate-free draws over random partitions.
  std::size_t duplicates = 0;
  std::size_t foreign = 0;
  for (int i = 0; i < kDraws; ++i) {
    BucketPartition parts;
    QuestionId next = 0;
    for (std::size_t k = 1; k < 8; ++k) {
      const std::size_t size = rng.uniform_index(5);
      for (std::size_t j = 0; j < size; ++j) parts.buckets[k].push_back(next++);
      if (size == 0) parts.buckets.erase(k);
    }
    if (parts.buckets.empty()) parts.buckets[1].push_back(next++);
    const auto keys = parts.keys();
    const auto weights = bucket_weights(keys, 8, 0.5, 1.0);
    const std::size_t n = 1 + rng.uniform_index(parts.total());
    const auto ids = bucket_sample(parts, weights, n, rng);
    const std::set<QuestionId> unique(ids.begin(), ids.end());
    if (unique.size() != ids.size() || ids.size() != n) ++duplicates;
    for (QuestionId id : ids) {
      if (id >= next) ++foreign;
    }
  }
  res.seconds = seconds_since(start);
  res.pass = p_multi > 0.001 && p_uniform > 0.001 && duplicates == 0 && foreign == 0;
  res.detail = fmt::format(
      "multinomial chi2 p={:.4f}, subset uniformity chi2 p={:.4f} (both > 0.001), "
      "{} calls with duplicates or short draws, {} foreign ids",
      p_multi, p_uniform, duplicates, foreign);
  return res;
}

CheckResult check_buffer_invariants(const ExperimentSpec& spec, std::uint64_t seed,
                                    std::size_t steps) {
  const auto start = Clock::now();
  CheckResult res{"buffer_invariants", false, "", 0.0};
  ExperimentSpec local = spec;
  local.steps = steps;
  const ArmSpec arm = parse_arm("exgrpo");
  const std::size_t k = local.config.group_size;
  std::size_t violations = 0;
  std::size_t resampled = 0;
  std::string first;
  RetiredSet before;
  std::size_t max_buffer = 0;
  run_arm(local, arm, seed, [&](const TrainState& state, const StepReport& report) {
    auto issues = validate_buffer(state.buffer, state.retired);
    for (const auto& [id, entry] : state.buffer.entries) {
      if (entry.group_size != k || entry.success_count == 0 ||
          entry.success_count >= k) {
        issues.push_back(fmt::format("question {} has accuracy {}/{}", id,
                                     entry.success_count, entry.group_size));
      }
      for (const Trajectory& t : entry.stored) {
        if (t.reward != 1) issues.push_back(fmt::format("question {} stores a failure", id));
      }
      if (state.retired.contains(id)) {
        issues.push_back(fmt::format("question {} is retired and buffered", id));
      }
    }
    const bool all_retired = before.size() == state.suite.questions.size();
    for (QuestionId id : state.last_on_policy) {
      if (before.contains(id) && !all_retired) ++resampled;
    }
    for (QuestionId id : state.last_experiential) {
      if (before.contains(id)) ++resampled;
    }
    if (!issues.empty() && first.empty()) {
      first = fmt::format("step {}: {}", report.step, issues.front());
    }
    violations += issues.size();
    max_buffer = std::max(max_buffer, state.buffer.size());
    before = state.retired;
  });
  res.seconds = seconds_since(start);
  res.pass = violations == 0 && resampled == 0 && res.seconds < 120.0;
  res.detail = fmt::format(
      "{} steps: {} violations, {} retired questions resampled, final retired {}, "
      "peak buffer {}, {:.1f}s{}",
      steps, violations, resampled, before.size(), max_buffer, res.seconds,
      first.empty() ? "" : " first: " + first);
  return res;
}

CheckResult check_reductions(const ExperimentSpec& spec, std::uint64_t seed,
                             std::size_t steps) {
  const auto start = Clock::now();
  CheckResult res{"reductions", false, "", 0.0};
  ExperimentSpec local = spec;
  local.steps = steps;

  const RunResult baseline = run_arm(local, parse_arm("on_policy"), seed);

  ExperimentSpec rho_zero = local;
  rho_zero.config.rho = 0.0;
  const RunResult zero = run_arm(rho_zero, parse_arm("exgrpo"), seed);
  const bool rho_ok = zero.reports == baseline.reports &&
                      zero.final_state.params.logits == baseline.final_state.params.logits;

  // Pre-gate steps: compare step reports and parameters until the gate opens.
  std::vector<LogitTable> base_params;
  run_arm(local, parse_arm("on_policy"), seed,
          [&](const TrainState& s, const StepReport&) { base_params.push_back(s.params.logits); });
  std::size_t pre_gate = 0;
  bool pre_ok = true;
  bool gate_opened = false;
  run_arm(local, parse_arm("exgrpo"), seed, [&](const TrainState& s, const StepReport& r) {
    if (gate_opened || r.gate_active) {
      gate_opened = true;
      return;
    }
    const std::size_t i = static_cast<std::size_t>(r.step);
    if (!(r == baseline.reports[i]) || !(s.params.logits == base_params[i])) pre_ok = false;
    ++pre_gate;
  });

  const RunResult masked = run_arm(local, parse_arm("masked_grpo(0:1)"), seed);
  const bool mask_ok = masked.reports == baseline.reports &&
                       masked.final_state.params.logits == baseline.final_state.params.logits;

  res.seconds = seconds_since(start);
  res.pass = rho_ok && pre_ok && gate_opened && pre_gate > 0 && mask_ok;
  res.detail = fmt::format(
      "rho=0 identical {}; {} pre-gate steps identical {} (gate opened {}); "
      "masked [0,1] identical {}; {} steps",
      rho_ok, pre_gate, pre_ok, gate_opened, mask_ok, steps);
  return res;
}

CheckResult check_comparative_run(const ExperimentSpec& spec,
                                  const std::optional<std::filesystem::path>& out_dir) {
  const auto start = Clock::now();
  CheckResult res{"comparative_run", false, "", 0.0};
  const ArmSpec arms[2] = {parse_arm("exgrpo"), parse_arm("on_policy")};
  const std::size_t n_steps = spec.steps;
  struct Curves {
    std::vector<double> pass, buffer, retired;
    std::vector<double> finals;
  };
  Curves curves[2];
  bool retired_monotone = true;
  bool buffer_shape = true;
  std::string shape_note;
  for (int a = 0; a < 2; ++a) {
    curves[a].pass.assign(n_steps, 0.0);
    curves[a].buffer.assign(n_steps, 0.0);
    curves[a].retired.assign(n_steps, 0.0);
    for (std::uint64_t seed : spec.seeds) {
      const RunResult run = run_arm(spec, arms[a], seed);
      for (std::size_t i = 0; i < n_steps; ++i) {
        const StepReport& r = run.reports[i];
        curves[a].pass[i] += r.suite_pass_at_1 / spec.seeds.size();
        curves[a].buffer[i] += static_cast<double>(r.buffer_size) / spec.seeds.size();
        curves[a].retired[i] += static_cast<double>(r.retired_size) / spec.seeds.size();
        if (i > 0 && r.retired_size < run.reports[i - 1].retired_size) {
          retired_monotone = false;
        }
      }
      curves[a].finals.push_back(run.reports.back().suite_pass_at_1);
    }
  }
  // Buffer dynamic on the ExGRPO arm: it must climb above its first-step
  // size, then settle over the last quarter of the run at a level that is
  // flat (span <= 20% of the level) and not drained (>= 25% of the peak).
  const auto& buf = curves[0].buffer;
  const double peak = *std::max_element(buf.begin(), buf.end());
  const std::size_t tail = n_steps - n_steps / 4;
  const auto [lo, hi] = std::minmax_element(buf.begin() + tail, buf.end());
  const double level =
      std::accumulate(buf.begin() + tail, buf.end(), 0.0) / static_cast<double>(n_steps - tail);
  const double tail_span = *hi - *lo;
  const bool rises = peak > buf.front() + 1.0;
  const bool plateaus = level >= 0.25 * peak && tail_span <= 0.2 * level;
  buffer_shape = rises && plateaus;
  shape_note = fmt::format(
      "buffer first {:.1f} peak {:.1f}, last-quarter level {:.1f} span {:.1f} "
      "(rises {}, plateaus {})",
      buf.front(), peak, level, tail_span, rises, plateaus);
  const double final_ex = std::accumulate(curves[0].finals.begin(), curves[0].finals.end(), 0.0);
  const double final_on = std::accumulate(curves[1].finals.begin(), curves[1].finals.end(), 0.0);
  const bool retired_grows = curves[0].retired.back() > curves[0].retired.front();

  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    std::ofstream csv(*out_dir / "comparative_curves.csv");
    csv << "step,exgrpo_pass_at_1,on_policy_pass_at_1,exgrpo_buffer,on_policy_buffer,"
           "exgrpo_retired,on_policy_retired\n";
    for (std::size_t i = 0; i < n_steps; ++i) {
      csv << fmt::format("{},{:.6f},{:.6f},{:.2f},{:.2f},{:.2f},{:.2f}\n", i,
                         curves[0].pass[i], curves[1].pass[i], curves[0].buffer[i],
                         curves[1].buffer[i], curves[0].retired[i], curves[1].retired[i]);
    }
  }
  res.seconds = seconds_since(start);
  res.pass = final_ex >= final_on && retired_monotone && retired_grows && buffer_shape &&
             res.seconds < 300.0;
  res.detail = fmt::format(
      "final Pass@1 exgrpo {} vs on_policy {} over {} seeds; retired monotone {} "
      "(final {:.1f}); {}; {:.1f}s",
      mean_std(curves[0].finals), mean_std(curves[1].finals), spec.seeds.size(),
      retired_monotone, curves[0].retired.back(), shape_note, res.seconds);
  return res;
}

CheckResult check_selection_sanity(const ExperimentSpec& spec, std::uint64_t seed,
                                   std::size_t steps, std::size_t every) {
  const auto start = Clock::now();
  CheckResult res{"selection_sanity", false, "", 0.0};
  ExperimentSpec local = spec;
  local.steps = steps;
  local.answer_match = AnswerMatch::kSuffix;
  local.config.selection_metric = SelectionMetric::kMeanNll;
  std::size_t measured = 0;
  std::size_t multi = 0;
  std::size_t bad = 0;
  double margin = 0.0;
  run_arm(local, parse_arm("exgrpo"), seed, [&](const TrainState& s, const StepReport& r) {
    if ((r.step + 1) % every != 0) return;
    for (const auto& [id, entry] : s.buffer.entries) {
      const double acc = entry.latest_acc();
      if (!(acc > 0.25 && acc <= 0.75) || entry.stored.empty()) continue;
      const Question& q = s.suite.at(id);
      BufferEntry copy = entry;
      const Trajectory chosen = select_trajectory(copy, s.params, q, SelectionMetric::kMeanNll);
      double mean = 0.0;
      for (const Trajectory& t : entry.stored) {
        mean += selection_score(s.params, q, t, SelectionMetric::kMeanNll);
      }
      mean /= static_cast<double>(entry.stored.size());
      const double picked = selection_score(s.params, q, chosen, SelectionMetric::kMeanNll);
      ++measured;
      if (entry.stored.size() > 1) {
        ++multi;
        margin += mean - picked;
      }
      if (picked > mean + 1e-12) ++bad;
    }
  });
  res.seconds = seconds_since(start);
  res.pass = bad == 0 && multi > 0;
  res.detail = fmt::format(
      "{} medium entries measured every {} steps, {} with several candidates "
      "(mean NLL gap {:.4f}), {} selections above the mean",
      measured, every, multi, multi ? margin / multi : 0.0, bad);
  return res;
}

ExperimentSpec desk_experiment() {
  ExperimentSpec spec;
  spec.name = "desk";
  spec.vocab = Vocabulary{4, 0};
  spec.suite_spec.strata = {{1, 50}, {2, 50}, {3, 50}, {4, 50}};
  spec.config.max_len = 5;
  spec.config.learning_rate = 2.0;
  spec.config.warm_start_logit = 2.0;
  spec.steps = 600;
  spec.seeds = {0, 1, 2, 3, 4};
  spec.arms = {parse_arm("exgrpo"), parse_arm("on_policy")};
  spec.validate();
  return spec;
}

std::vector<CheckResult> run_verify(VerifyTier tier, std::uint64_t seed) {
  std::vector<CheckResult> out;
  out.push_back(check_unbiasedness(seed));
  out.push_back(check_correction_necessity(seed));
  out.push_back(check_shaping_function());
  out.push_back(check_objective_gradients(seed));
  if (tier == VerifyTier::kFull) {
    out.push_back(check_variance_bound(seed));
    out.push_back(check_samplers(seed));
  }
  return out;
}

}  // namespace exgrpo::harness
