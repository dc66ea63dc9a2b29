#include "exgrpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "exgrpo/error.hpp"

namespace exgrpo {

void Vocabulary::validate() const {
  if (size < 2) throw Error("vocabulary needs at least two tokens");
  if (end_token >= size) throw Error("end token outside vocabulary");
}

LogitTable::LogitTable(const PolicyShape& shape, double fill)
    : shape_(shape), values_(shape.num_entries(), fill) {
  shape_.vocab.validate();
  if (shape_.num_classes == 0) throw Error("policy needs at least one class");
  if (shape_.max_len == 0) throw Error("max_len must be positive");
}

std::size_t LogitTable::context(std::uint32_t class_id, std::size_t position,
                                const Token* previous) const {
  const std::size_t prev =
      previous == nullptr ? shape_.vocab.size : static_cast<std::size_t>(*previous);
  return (static_cast<std::size_t>(class_id) * shape_.max_len + position) *
             shape_.prev_slots() +
         prev;
}

std::span<double> LogitTable::row(std::size_t context) {
  return std::span<double>(values_).subspan(context * shape_.vocab.size,
                                            shape_.vocab.size);
}

std::span<const double> LogitTable::row(std::size_t context) const {
  return std::span<const double>(values_).subspan(context * shape_.vocab.size,
                                                  shape_.vocab.size);
}

void LogitTable::add_scaled(const LogitTable& other, double scale) {
  if (!(shape_ == other.shape_)) throw Error("table shape mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    values_[i] += scale * other.values_[i];
  }
}

namespace {

void check_tokens(const PolicyShape& shape, std::span<const Token> tokens) {
  for (Token t : tokens) {
    if (t >= shape.vocab.size) throw Error("token out of range");
  }
}

std::size_t context_at(const PolicyParams& params, const Question& question,
                       std::span<const Token> tokens, std::size_t position) {
  const PolicyShape& shape = params.shape();
  if (question.class_id >= shape.num_classes) throw Error("unknown question");
  if (position >= shape.max_len) throw Error("sequence complete");
  const Token* previous = position == 0 ? nullptr : &tokens[position - 1];
  return params.logits.context(question.class_id, position, previous);
}

// Stable log-softmax of one row.
void log_softmax(std::span<const double> logits, std::vector<double>& out) {
  out.resize(logits.size());
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - top);
  const double log_norm = top + std::log(total);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_norm;
}

void softmax(std::span<const double> logits, std::vector<double>& out) {
  out.resize(logits.size());
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - top);
    total += out[i];
  }
  for (double& p : out) p /= total;
}

double shannon_entropy(std::span<const double> probs,
                       std::span<const double> logprobs) {
  double h = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) h -= probs[i] * logprobs[i];
  return std::max(h, 0.0);
}

}  // namespace

std::vector<double> token_distribution(const PolicyParams& params,
                                       const Question& question,
                                       std::span<const Token> prefix) {
  check_tokens(params.shape(), prefix);
  const std::size_t ctx = context_at(params, question, prefix, prefix.size());
  std::vector<double> probs;
  softmax(params.logits.row(ctx), probs);
  return probs;
}

Trajectory sample_trajectory(const PolicyParams& params,
                             const Question& question, std::size_t max_len,
                             Rng& rng) {
  if (max_len == 0) throw Error("max_len must be positive");
  if (max_len > params.shape().max_len) {
    throw Error("max_len exceeds policy table");
  }
  Trajectory traj;
  traj.question_id = question.id;
  traj.producer_version = params.version;
  traj.tokens.reserve(max_len);
  traj.behavior_logprobs.reserve(max_len);
  std::vector<double> logprobs;
  std::vector<double> probs;
  const Token end = params.shape().vocab.end_token;
  while (traj.tokens.size() < max_len) {
    const std::size_t ctx =
        context_at(params, question, traj.tokens, traj.tokens.size());
    log_softmax(params.logits.row(ctx), logprobs);
    probs.resize(logprobs.size());
    std::transform(logprobs.begin(), logprobs.end(), probs.begin(),
                   [](double lp) { return std::exp(lp); });
    const auto token = static_cast<Token>(rng.categorical(probs));
    traj.tokens.push_back(token);
    traj.behavior_logprobs.push_back(logprobs[token]);
    if (token == end) break;
  }
  return traj;
}

std::vector<double> sequence_logprobs(const PolicyParams& params,
                                      const Question& question,
                                      std::span<const Token> tokens) {
  if (tokens.empty()) throw Error("empty token sequence");
  check_tokens(params.shape(), tokens);
  std::vector<double> out(tokens.size());
  std::vector<double> logprobs;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::size_t ctx = context_at(params, question, tokens, t);
    log_softmax(params.logits.row(ctx), logprobs);
    out[t] = logprobs[tokens[t]];
  }
  return out;
}

double trajectory_entropy(const PolicyParams& params, const Question& question,
                          std::span<const Token> tokens, EntropyMode mode) {
  if (tokens.empty()) throw Error("empty token sequence");
  check_tokens(params.shape(), tokens);
  double total = 0.0;
  std::vector<double> logprobs;
  std::vector<double> probs;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::size_t ctx = context_at(params, question, tokens, t);
    log_softmax(params.logits.row(ctx), logprobs);
    if (mode == EntropyMode::kMeanNll) {
      total -= logprobs[tokens[t]];
    } else {
      probs.resize(logprobs.size());
      std::transform(logprobs.begin(), logprobs.end(), probs.begin(),
                     [](double lp) { return std::exp(lp); });
      total += shannon_entropy(probs, logprobs);
    }
  }
  return std::max(total / static_cast<double>(tokens.size()), 0.0);
}

double trajectory_perplexity(const PolicyParams& params,
                             const Question& question,
                             std::span<const Token> tokens) {
  return std::exp(
      trajectory_entropy(params, question, tokens, EntropyMode::kMeanNll));
}

GradientTable logprob_gradient(const PolicyParams& params,
                               const Question& question,
                               std::span<const Token> tokens) {
  GradientTable grad(params.shape());
  const std::vector<double> ones(tokens.size(), 1.0);
  add_logprob_gradient(params, question, tokens, ones, grad);
  return grad;
}

void add_logprob_gradient(const PolicyParams& params, const Question& question,
                          std::span<const Token> tokens,
                          std::span<const double> scale, GradientTable& out) {
  if (tokens.empty()) throw Error("empty token sequence");
  if (scale.size() != tokens.size()) throw Error("scale length mismatch");
  check_tokens(params.shape(), tokens);
  std::vector<double> probs;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (scale[t] == 0.0) continue;
    const std::size_t ctx = context_at(params, question, tokens, t);
    softmax(params.logits.row(ctx), probs);
    std::span<double> g = out.row(ctx);
    for (std::size_t j = 0; j < probs.size(); ++j) g[j] -= scale[t] * probs[j];
    g[tokens[t]] += scale[t];
  }
}

void add_entropy_gradient(const PolicyParams& params, const Question& question,
                          std::span<const Token> tokens, double scale,
                          GradientTable& out) {
  if (tokens.empty()) throw Error("empty token sequence");
  check_tokens(params.shape(), tokens);
  const double per_step = scale / static_cast<double>(tokens.size());
  std::vector<double> logprobs;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const std::size_t ctx = context_at(params, question, tokens, t);
    log_softmax(params.logits.row(ctx), logprobs);
    double h = 0.0;
    for (double lp : logprobs) h -= std::exp(lp) * lp;
    // dH/dz_j = -p_j (log p_j + H)
    std::span<double> g = out.row(ctx);
    for (std::size_t j = 0; j < logprobs.size(); ++j) {
      g[j] -= per_step * std::exp(logprobs[j]) * (logprobs[j] + h);
    }
  }
}

}  // namespace exgrpo
