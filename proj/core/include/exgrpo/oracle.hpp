#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "exgrpo/policy.hpp"
#include "exgrpo/rng.hpp"
#include "exgrpo/types.hpp"

// Brute-force reference machinery. Everything here works on fixed-length
// sequences (end_token is an ordinary symbol), so the autoregressive product
// over all vocab^length sequences is a proper distribution.
namespace exgrpo::oracle {

inline constexpr std::size_t kMaxVocab = 4;
inline constexpr std::size_t kMaxLength = 4;
inline constexpr std::size_t kMaxSequences = 256;

struct EnumerationSpace {
  std::size_t vocab_size = 2;
  std::size_t length = 1;
  Question question;
};

using TrajectoryFunction = std::function<double(const TokenSeq&)>;

/// All vocab^length sequences in lexicographic order.
std::vector<TokenSeq> enumerate_trajectories(const EnumerationSpace& space);

/// prod_t pi(o_t | .)
double sequence_probability(const PolicyParams& params, const Question& question,
                            const TokenSeq& tokens);

/// sum_o pi(o) g(o); throws if the masses do not sum to 1 within 1e-12.
double exact_expectation(const PolicyParams& params, const EnumerationSpace& space,
                         const TrajectoryFunction& g);

/// What multiplies g(o) when o is drawn from the past policy.
enum class WeightTransform {
  kExact,   // W = pi_current / pi_past
  kShaped,  // f(W) = W / (W + beta)
  kNone,    // 1 (no correction)
};

double is_weighted_expectation(const PolicyParams& past, const PolicyParams& current,
                               const EnumerationSpace& space,
                               const TrajectoryFunction& g,
                               WeightTransform transform = WeightTransform::kExact,
                               double beta = 0.1);

struct UnbiasednessReport {
  double lhs = 0.0;  // importance-weighted expectation under past
  double rhs = 0.0;  // on-policy expectation under current
  double abs_diff = 0.0;
  bool pass = false;
};

UnbiasednessReport check_unbiasedness(const PolicyParams& past,
                                      const PolicyParams& current,
                                      const EnumerationSpace& space,
                                      const TrajectoryFunction& g, double tol = 1e-10,
                                      WeightTransform transform = WeightTransform::kExact,
                                      double beta = 0.1);

struct MonteCarloReport {
  double estimate = 0.0;
  double exact = 0.0;
  double std_error = 0.0;
  double z_score = 0.0;
  bool pass = false;  // |estimate - exact| <= 3 std errors
};

/// Sample mean of W(o) g(o), o ~ past, against the exact on-policy value.
MonteCarloReport check_unbiasedness_mc(const PolicyParams& past,
                                       const PolicyParams& current,
                                       const EnumerationSpace& space,
                                       const TrajectoryFunction& g,
                                       std::size_t n_samples, Rng& rng);

enum class VarianceRegime {
  /// Dr.GRPO advantages r - mean(group): members are coupled.
  kGroupMean,
  /// Fixed baseline (expected reward under current): members independent,
  /// which is the premise of the tighter bound.
  kIndependent,
};

/// One instance for the variance check: U(o, G) = A(o, G) * <direction,
/// sum_t grad log pi_current(o_t)>, reward(o) in {0, 1}.
struct VarianceInstance {
  std::function<int(const TokenSeq&)> reward;
  std::vector<double> direction;  // same size as the logit table
  VarianceRegime regime = VarianceRegime::kGroupMean;
};

struct VarianceReport {
  double empirical_var = 0.0;
  double var_std_error = 0.0;
  double bound_A_prime = 0.0;
  double bound_B_prime = 0.0;
  double M = 0.0;     // exact max_o W(o)
  double E_U2 = 0.0;  // max over replay/fresh slots of E[U^2], exact
  bool pass_A = false;
  /// Only evaluated in the independent regime.
  std::optional<bool> pass_B;
  VarianceRegime regime = VarianceRegime::kGroupMean;
};

/// Monte Carlo Var(G_exp) with the replayed member drawn from `past` and
/// K-1 fresh members from `current`, against the bounds built from exact
/// M and E[U^2]. Passing allows 3 standard errors of the variance estimate.
VarianceReport check_variance_bounds(const PolicyParams& past,
                                     const PolicyParams& current,
                                     const EnumerationSpace& space,
                                     std::size_t group_size,
                                     const VarianceInstance& instance,
                                     std::size_t n_samples, Rng& rng);

/// Largest per-token ratio pi_current / pi_past over every context reachable
/// in the space (the m of the per-token cap, so M <= m^length).
double max_token_ratio(const PolicyParams& past, const PolicyParams& current,
                       const EnumerationSpace& space);

/// Central differences over every logit.
GradientTable finite_difference_gradient(
    const std::function<double(const PolicyParams&)>& objective,
    const PolicyParams& params, double step = 1e-5);

/// Central differences for a plain vector function.
std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double step = 1e-5);

/// ||a - b|| / max(||a||, ||b||, 1e-6) in the 2-norm; the comparison used by
/// every gradient check in the project.
double relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// i.i.d. N(0, scale^2) logits.
void randomize_logits(PolicyParams& params, double scale, Rng& rng);

std::string to_json(const UnbiasednessReport& report);
std::string to_json(const MonteCarloReport& report);
std::string to_json(const VarianceReport& report);

}  // namespace exgrpo::oracle
