#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "exgrpo/rng.hpp"
#include "exgrpo/types.hpp"

namespace exgrpo {

/// Dimensions of the tabular policy. A context is (class, position,
/// previous token); position 0 uses a dedicated begin-of-sequence slot.
struct PolicyShape {
  Vocabulary vocab;
  std::size_t num_classes = 1;
  std::size_t max_len = 1;

  std::size_t prev_slots() const { return vocab.size + 1; }
  std::size_t num_contexts() const {
    return num_classes * max_len * prev_slots();
  }
  std::size_t num_entries() const { return num_contexts() * vocab.size; }

  bool operator==(const PolicyShape& other) const {
    return vocab.size == other.vocab.size &&
           vocab.end_token == other.vocab.end_token &&
           num_classes == other.num_classes && max_len == other.max_len;
  }
};

/// Dense table with one row of `vocab.size` reals per context. Used both for
/// logits and for gradients with respect to them.
class LogitTable {
 public:
  LogitTable() = default;
  explicit LogitTable(const PolicyShape& shape, double fill = 0.0);

  const PolicyShape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }

  /// Row index for the context seen when emitting position `position`
  /// after `previous` (null at position 0).
  std::size_t context(std::uint32_t class_id, std::size_t position,
                      const Token* previous) const;

  std::span<double> row(std::size_t context);
  std::span<const double> row(std::size_t context) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  void add_scaled(const LogitTable& other, double scale);
  bool operator==(const LogitTable& other) const = default;

 private:
  PolicyShape shape_;
  std::vector<double> values_;
};

using GradientTable = LogitTable;

/// Policy parameters: logits plus a snapshot counter that increases with
/// every optimizer update.
struct PolicyParams {
  LogitTable logits;
  std::uint64_t version = 0;

  PolicyParams() = default;
  explicit PolicyParams(const PolicyShape& shape) : logits(shape) {}
  const PolicyShape& shape() const { return logits.shape(); }
};

enum class EntropyMode {
  kMeanNll,          // -(1/|o|) sum_t log pi(o_t | .)
  kMeanDistEntropy,  // (1/|o|) sum_t H(pi(. | context_t))
};

/// Softmax over the logits of the context following `prefix`.
std::vector<double> token_distribution(const PolicyParams& params,
                                       const Question& question,
                                       std::span<const Token> prefix);

/// Samples until end_token or `max_len` tokens. The reward is left unset.
Trajectory sample_trajectory(const PolicyParams& params,
                             const Question& question, std::size_t max_len,
                             Rng& rng);

std::vector<double> sequence_logprobs(const PolicyParams& params,
                                      const Question& question,
                                      std::span<const Token> tokens);

double trajectory_entropy(const PolicyParams& params, const Question& question,
                          std::span<const Token> tokens, EntropyMode mode);

double trajectory_perplexity(const PolicyParams& params,
                             const Question& question,
                             std::span<const Token> tokens);

/// sum_t grad log pi(o_t | .), as a dense table.
GradientTable logprob_gradient(const PolicyParams& params,
                               const Question& question,
                               std::span<const Token> tokens);

/// Accumulates sum_t scale[t] * grad log pi(o_t | .) into `out`.
void add_logprob_gradient(const PolicyParams& params, const Question& question,
                          std::span<const Token> tokens,
                          std::span<const double> scale, GradientTable& out);

/// Accumulates scale * grad of the kMeanDistEntropy value into `out`.
void add_entropy_gradient(const PolicyParams& params, const Question& question,
                          std::span<const Token> tokens, double scale,
                          GradientTable& out);

}  // namespace exgrpo
