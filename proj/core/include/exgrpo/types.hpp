#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

namespace exgrpo {

using Token = std::uint32_t;
using TokenSeq = std::vector<Token>;
using QuestionId = std::uint32_t;

/// Abstract token alphabet. Generation stops at `end_token`.
struct Vocabulary {
  std::size_t size = 2;
  Token end_token = 0;

  /// Throws Error unless size >= 2 and end_token < size.
  void validate() const;
};

/// A synthetic verifiable task. `class_id` keys the policy's logit table;
/// `difficulty` is the golden answer length.
struct Question {
  QuestionId id = 0;
  std::uint32_t class_id = 0;
  TokenSeq golden_answer;
  std::uint32_t difficulty = 1;
  std::optional<double> latest_acc;
};

/// One sampled token sequence. `behavior_logprobs` are recorded at
/// generation time under the producing policy and are never recomputed.
struct Trajectory {
  QuestionId question_id = 0;
  TokenSeq tokens;
  std::vector<double> behavior_logprobs;
  std::optional<int> reward;  // unset until verified
  std::uint64_t producer_version = 0;
  std::optional<double> cached_metric;
};

}  // namespace exgrpo
