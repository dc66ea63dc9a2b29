#include <benchmark/benchmark.h>

#include "exgrpo/experience.hpp"
#include "exgrpo/optimizer.hpp"
#include "exgrpo/oracle.hpp"
#include "exgrpo/task.hpp"

namespace exgrpo {
namespace {

TaskSuite bench_suite(std::size_t per_stratum) {
  StrataSpec spec;
  for (std::uint32_t d = 1; d <= 4; ++d) spec.strata.push_back({d, per_stratum});
  Rng rng(1);
  return generate_suite(spec, Vocabulary{4, 0}, rng);
}

void BM_SampleTrajectory(benchmark::State& state) {
  const TaskSuite suite = bench_suite(10);
  PolicyParams params(policy_shape_for(suite, 5));
  Rng rng(2);
  oracle::randomize_logits(params, 1.0, rng);
  std::size_t i = 0;
  for (auto _ : state) {
    const Question& q = suite.questions[i++ % suite.questions.size()];
    benchmark::DoNotOptimize(sample_trajectory(params, q, 5, rng));
  }
}
BENCHMARK(BM_SampleTrajectory);

void BM_BucketSample(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  BucketPartition parts;
  for (QuestionId id = 0; id < n; ++id) parts.buckets[1 + id % 7].push_back(id);
  const std::vector<std::size_t> keys = parts.keys();
  const std::vector<double> weights = bucket_weights(keys, 8, 0.5, 1.0);
  Rng rng(3);
  for (auto _ : state) benchmark::DoNotOptimize(bucket_sample(parts, weights, n / 2, rng));
}
BENCHMARK(BM_BucketSample)->Arg(128)->Arg(1024)->Arg(8192);

void BM_ExgrpoObjective(benchmark::State& state) {
  const TaskSuite suite = bench_suite(16);
  TrainConfig cfg;
  cfg.batch_size = 32;
  PolicyParams params(policy_shape_for(suite, cfg.max_len));
  Rng rng(4);
  oracle::randomize_logits(params, 1.0, rng);
  auto make_group = [&](const Question& q, bool replay) {
    GroupRollout g;
    g.question_id = q.id;
    for (std::size_t i = 0; i < cfg.group_size; ++i) {
      Trajectory t = sample_trajectory(params, q, cfg.max_len, rng);
      const int r = replay && i == 0 ? 1 : verify(suite, q, t.tokens);
      t.reward = r;
      g.rewards.push_back(r);
      g.trajectories.push_back(std::move(t));
    }
    if (replay) g.replay_slot = 0;
    g.advantages = group_advantages(g.rewards, cfg.advantage_mode);
    return g;
  };
  std::vector<GroupRollout> on;
  std::vector<GroupRollout> ex;
  for (std::size_t i = 0; i < 16; ++i) {
    on.push_back(make_group(suite.questions[i], false));
    ex.push_back(make_group(suite.questions[16 + i], true));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(exgrpo_objective(on, ex, params, suite, cfg));
  }
}
BENCHMARK(BM_ExgrpoObjective);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.batch_size = static_cast<std::size_t>(state.range(0));
  cfg.learning_rate = 2.0;
  cfg.warm_start_logit = 2.0;
  cfg.use_delayed_start = false;
  TrainState train(bench_suite(50), cfg);
  Rng rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(train, cfg, rng));
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(128);

}  // namespace
}  // namespace exgrpo

BENCHMARK_MAIN();
