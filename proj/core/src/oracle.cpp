#include "exgrpo/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "exgrpo/error.hpp"
#include "exgrpo/optimizer.hpp"

namespace exgrpo::oracle {

namespace {

void check_space(const EnumerationSpace& space) {
  if (space.vocab_size < 2 || space.length < 1 || space.vocab_size > kMaxVocab ||
      space.length > kMaxLength) {
    throw Error("oracle limit");
  }
  std::size_t total = 1;
  for (std::size_t i = 0; i < space.length; ++i) total *= space.vocab_size;
  if (total > kMaxSequences) throw Error("oracle limit");
}

void check_params(const PolicyParams& params, const EnumerationSpace& space) {
  if (params.shape().vocab.size != space.vocab_size ||
      params.shape().max_len < space.length) {
    throw Error("policy shape does not cover the enumeration space");
  }
}

// Probabilities of every enumerated sequence, with the normalisation check.
std::vector<double> masses(const PolicyParams& params,
                           const EnumerationSpace& space,
                           const std::vector<TokenSeq>& seqs) {
  check_params(params, space);
  std::vector<double> p(seqs.size());
  double total = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    p[i] = sequence_probability(params, space.question, seqs[i]);
    total += p[i];
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw Error("probability mass does not sum to 1");
  }
  return p;
}

std::size_t draw_index(std::span<const double> cdf, Rng& rng) {
  const double u = rng.uniform01() * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()),
                               cdf.size() - 1);
}

std::vector<double> cumulative(std::span<const double> p) {
  std::vector<double> cdf(p.size());
  std::partial_sum(p.begin(), p.end(), cdf.begin());
  return cdf;
}

double binomial_pmf(std::size_t n, std::size_t k, double p) {
  if (k > n) return 0.0;
  const double log_choose = std::lgamma(static_cast<double>(n) + 1.0) -
                            std::lgamma(static_cast<double>(k) + 1.0) -
                            std::lgamma(static_cast<double>(n - k) + 1.0);
  if (p <= 0.0) return k == 0 ? 1.0 : 0.0;
  if (p >= 1.0) return k == n ? 1.0 : 0.0;
  return std::exp(log_choose + static_cast<double>(k) * std::log(p) +
                  static_cast<double>(n - k) * std::log1p(-p));
}

}  // namespace

std::vector<TokenSeq> enumerate_trajectories(const EnumerationSpace& space) {
  check_space(space);
  std::vector<TokenSeq> out;
  TokenSeq current(space.length, 0);
  while (true) {
    out.push_back(current);
    std::size_t pos = space.length;
    while (pos > 0) {
      --pos;
      if (++current[pos] < space.vocab_size) break;
      current[pos] = 0;
      if (pos == 0) return out;
    }
  }
}

double sequence_probability(const PolicyParams& params, const Question& question,
                            const TokenSeq& tokens) {
  const std::vector<double> lp = sequence_logprobs(params, question, tokens);
  return std::exp(std::accumulate(lp.begin(), lp.end(), 0.0));
}

double exact_expectation(const PolicyParams& params, const EnumerationSpace& space,
                         const TrajectoryFunction& g) {
  const std::vector<TokenSeq> seqs = enumerate_trajectories(space);
  const std::vector<double> p = masses(params, space, seqs);
  double total = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) total += p[i] * g(seqs[i]);
  return total;
}

double is_weighted_expectation(const PolicyParams& past, const PolicyParams& current,
                               const EnumerationSpace& space,
                               const TrajectoryFunction& g,
                               WeightTransform transform, double beta) {
  const std::vector<TokenSeq> seqs = enumerate_trajectories(space);
  const std::vector<double> p = masses(past, space, seqs);
  check_params(current, space);
  double total = 0.0;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    double weight = 1.0;
    if (transform != WeightTransform::kNone) {
      weight = trajectory_importance_weight(
          sequence_logprobs(current, space.question, seqs[i]),
          sequence_logprobs(past, space.question, seqs[i]));
      if (transform == WeightTransform::kShaped) weight = shaping(weight, beta);
    }
    total += p[i] * weight * g(seqs[i]);
  }
  return total;
}

UnbiasednessReport check_unbiasedness(const PolicyParams& past,
                                      const PolicyParams& current,
                                      const EnumerationSpace& space,
                                      const TrajectoryFunction& g, double tol,
                                      WeightTransform transform, double beta) {
  UnbiasednessReport report;
  report.lhs = is_weighted_expectation(past, current, space, g, transform, beta);
  report.rhs = exact_expectation(current, space, g);
  report.abs_diff = std::abs(report.lhs - report.rhs);
  report.pass = report.abs_diff <= tol;
  return report;
}

MonteCarloReport check_unbiasedness_mc(const PolicyParams& past,
                                       const PolicyParams& current,
                                       const EnumerationSpace& space,
                                       const TrajectoryFunction& g,
                                       std::size_t n_samples, Rng& rng) {
  if (n_samples < 2) throw Error("need at least two samples");
  const std::vector<TokenSeq> seqs = enumerate_trajectories(space);
  const std::vector<double> p = masses(past, space, seqs);
  const std::vector<double> cdf = cumulative(p);
  std::vector<double> weighted(seqs.size());
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    weighted[i] = trajectory_importance_weight(
                      sequence_logprobs(current, space.question, seqs[i]),
                      sequence_logprobs(past, space.question, seqs[i])) *
                  g(seqs[i]);
  }
  double mean = 0.0;
  double m2 = 0.0;
  for (std::size_t n = 1; n <= n_samples; ++n) {
    const double x = weighted[draw_index(cdf, rng)];
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  MonteCarloReport report;
  report.estimate = mean;
  report.exact = exact_expectation(current, space, g);
  const double var = m2 / static_cast<double>(n_samples - 1);
  report.std_error = std::sqrt(var / static_cast<double>(n_samples));
  const double diff = std::abs(report.estimate - report.exact);
  report.z_score = report.std_error > 0.0 ? diff / report.std_error : 0.0;
  report.pass = report.std_error > 0.0 ? diff <= 3.0 * report.std_error : diff <= 1e-12;
  return report;
}

VarianceReport check_variance_bounds(const PolicyParams& past,
                                     const PolicyParams& current,
                                     const EnumerationSpace& space,
                                     std::size_t group_size,
                                     const VarianceInstance& instance,
                                     std::size_t n_samples, Rng& rng) {
  if (group_size < 2) throw Error("group too small");
  if (n_samples < 2) throw Error("need at least two samples");
  if (instance.direction.size() != current.logits.size()) {
    throw Error("direction does not match the logit table");
  }
  const std::vector<TokenSeq> seqs = enumerate_trajectories(space);
  const std::vector<double> p_past = masses(past, space, seqs);
  const std::vector<double> p_cur = masses(current, space, seqs);
  const std::size_t n_seq = seqs.size();

  std::vector<double> weight(n_seq), score(n_seq);
  std::vector<int> reward(n_seq);
  for (std::size_t i = 0; i < n_seq; ++i) {
    weight[i] = trajectory_importance_weight(
        sequence_logprobs(current, space.question, seqs[i]),
        sequence_logprobs(past, space.question, seqs[i]));
    reward[i] = instance.reward(seqs[i]);
    const GradientTable grad = logprob_gradient(current, space.question, seqs[i]);
    score[i] = std::inner_product(grad.values().begin(), grad.values().end(),
                                  instance.direction.begin(), 0.0);
  }
  double success_cur = 0.0;
  double success_past = 0.0;
  for (std::size_t i = 0; i < n_seq; ++i) {
    success_cur += p_cur[i] * reward[i];
    success_past += p_past[i] * reward[i];
  }

  const std::size_t K = group_size;
  const auto Kd = static_cast<double>(K);
  const bool independent = instance.regime == VarianceRegime::kIndependent;
  // Advantage of a member with reward r when the other members hold
  // `others` successes; the independent regime uses a fixed baseline.
  auto advantage = [&](int r, std::size_t others) {
    if (independent) return r - success_cur;
    return r - (r + static_cast<double>(others)) / Kd;
  };

  double eu2_replay = 0.0;
  double eu2_fresh = 0.0;
  for (std::size_t i = 0; i < n_seq; ++i) {
    const double s2 = score[i] * score[i];
    if (independent) {
      const double a = advantage(reward[i], 0);
      eu2_replay += p_past[i] * a * a * s2;
      eu2_fresh += p_cur[i] * a * a * s2;
      continue;
    }
    for (std::size_t S = 0; S <= K - 1; ++S) {
      const double a = advantage(reward[i], S);
      eu2_replay += p_past[i] * binomial_pmf(K - 1, S, success_cur) * a * a * s2;
    }
    for (std::size_t S = 0; S + 2 <= K; ++S) {
      const double pf = binomial_pmf(K - 2, S, success_cur);
      for (int r_star = 0; r_star <= 1; ++r_star) {
        const double pr = r_star == 1 ? success_past : 1.0 - success_past;
        const double a = advantage(reward[i], S + static_cast<std::size_t>(r_star));
        eu2_fresh += p_cur[i] * pf * pr * a * a * s2;
      }
    }
  }

  VarianceReport report;
  report.regime = instance.regime;
  report.M = *std::max_element(weight.begin(), weight.end());
  report.E_U2 = std::max(eu2_replay, eu2_fresh);
  const double M2 = report.M * report.M;
  report.bound_A_prime = 2.0 * (M2 + (Kd - 1.0) * (Kd - 1.0)) / (Kd * Kd) * report.E_U2;
  report.bound_B_prime = 2.0 * (M2 + (Kd - 1.0)) / (Kd * Kd) * report.E_U2;

  const std::vector<double> cdf_past = cumulative(p_past);
  const std::vector<double> cdf_cur = cumulative(p_cur);
  std::vector<double> samples(n_samples);
  std::vector<std::size_t> members(K);
  for (std::size_t n = 0; n < n_samples; ++n) {
    members[0] = draw_index(cdf_past, rng);
    for (std::size_t j = 1; j < K; ++j) members[j] = draw_index(cdf_cur, rng);
    std::size_t successes = 0;
    for (std::size_t idx : members) successes += static_cast<std::size_t>(reward[idx]);
    double g = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      const std::size_t idx = members[j];
      const double u =
          advantage(reward[idx], successes - static_cast<std::size_t>(reward[idx])) *
          score[idx];
      g += j == 0 ? weight[idx] * u : u;
    }
    samples[n] = g / Kd;
  }
  const double mean =
      std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(n_samples);
  double m2 = 0.0;
  double m4 = 0.0;
  for (double x : samples) {
    const double d2 = (x - mean) * (x - mean);
    m2 += d2;
    m4 += d2 * d2;
  }
  const auto nd = static_cast<double>(n_samples);
  report.empirical_var = m2 / (nd - 1.0);
  const double central2 = m2 / nd;
  report.var_std_error = std::sqrt(std::max(m4 / nd - central2 * central2, 0.0) / nd);
  const double slack = 3.0 * report.var_std_error;
  report.pass_A = report.empirical_var <= report.bound_A_prime + slack;
  if (independent) report.pass_B = report.empirical_var <= report.bound_B_prime + slack;
  return report;
}

double max_token_ratio(const PolicyParams& past, const PolicyParams& current,
                       const EnumerationSpace& space) {
  check_space(space);
  check_params(past, space);
  check_params(current, space);
  double best = 0.0;
  TokenSeq prefix;
  for (std::size_t pos = 0; pos < space.length; ++pos) {
    const std::size_t prev_options = pos == 0 ? 1 : space.vocab_size;
    for (std::size_t prev = 0; prev < prev_options; ++prev) {
      prefix.assign(pos, static_cast<Token>(prev));
      const std::vector<double> pc = token_distribution(current, space.question, prefix);
      const std::vector<double> pp = token_distribution(past, space.question, prefix);
      for (std::size_t t = 0; t < pc.size(); ++t) best = std::max(best, pc[t] / pp[t]);
    }
  }
  return best;
}

GradientTable finite_difference_gradient(
    const std::function<double(const PolicyParams&)>& objective,
    const PolicyParams& params, double step) {
  if (!(step > 0.0)) throw Error("finite-difference step must be positive");
  PolicyParams probe = params;
  GradientTable grad(params.shape());
  for (std::size_t i = 0; i < probe.logits.size(); ++i) {
    const double original = probe.logits[i];
    probe.logits[i] = original + step;
    const double up = objective(probe);
    probe.logits[i] = original - step;
    const double down = objective(probe);
    probe.logits[i] = original;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f,
    std::span<const double> x, double step) {
  if (!(step > 0.0)) throw Error("finite-difference step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double original = probe[i];
    probe[i] = original + step;
    const double up = f(probe);
    probe[i] = original - step;
    const double down = f(probe);
    probe[i] = original;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw Error("gradient size mismatch");
  double diff = 0.0;
  double norm_a = 0.0;
  double norm_n = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    norm_a += analytic[i] * analytic[i];
    norm_n += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(norm_a), std::sqrt(norm_n), 1e-6});
}

void randomize_logits(PolicyParams& params, double scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  for (double& z : params.logits.values()) z = normal(rng.engine());
}

}  // namespace exgrpo::oracle
