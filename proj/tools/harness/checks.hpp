#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "experiment.hpp"

namespace exgrpo::harness {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

/// IS-weighted expectation under a past policy equals the on-policy
/// expectation: exact on >= 100 enumerable instances, plus Monte Carlo.
CheckResult check_unbiasedness(std::uint64_t seed);

/// Without the weight (W = 1) the same comparison must break.
CheckResult check_correction_necessity(std::uint64_t seed);

/// Empirical variance of the mixed-group estimator against the A' bound
/// for K in {2, 4, 8}.
CheckResult check_variance_bound(std::uint64_t seed, std::size_t n_samples = 100000);

CheckResult check_shaping_function();

/// Analytic vs central-difference gradients for the three objectives.
CheckResult check_objective_gradients(std::uint64_t seed, std::size_t configs = 50);

/// Multinomial counts, within-bucket uniformity and duplicate-free draws.
CheckResult check_samplers(std::uint64_t seed);

/// Buffer/retired invariants across a seeded run.
CheckResult check_buffer_invariants(const ExperimentSpec& spec, std::uint64_t seed,
                                    std::size_t steps = 500);

/// rho = 0, pre-gate and full-band masked runs match plain GRPO bit for bit.
CheckResult check_reductions(const ExperimentSpec& spec, std::uint64_t seed,
                             std::size_t steps);

/// ExGRPO vs on-policy on the stratified suite; optional curve CSVs.
CheckResult check_comparative_run(const ExperimentSpec& spec,
                                  const std::optional<std::filesystem::path>& out_dir);

/// The selected replay trajectory never has a higher re-scored NLL than the
/// mean of its question's stored candidates.
CheckResult check_selection_sanity(const ExperimentSpec& spec, std::uint64_t seed,
                                   std::size_t steps, std::size_t every = 25);

/// Stratified desk suite (200 questions, answer lengths 1..4, vocab 4).
ExperimentSpec desk_experiment();

enum class VerifyTier { kFast, kFull };

std::vector<CheckResult> run_verify(VerifyTier tier, std::uint64_t seed);

}  // namespace exgrpo::harness
