#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "exgrpo/policy.hpp"
#include "exgrpo/rng.hpp"
#include "exgrpo/types.hpp"

namespace exgrpo {

/// How the verifier compares an output's answer segment (the tokens before
/// end_token, or the whole output when no end_token was emitted) to the
/// golden answer.
enum class AnswerMatch {
  kExact,   // answer segment == golden answer
  kSuffix,  // answer segment ends with the golden answer
};

struct Stratum {
  std::uint32_t difficulty = 1;  // golden answer length
  std::size_t count = 0;
};

struct StrataSpec {
  std::vector<Stratum> strata;
  /// Answers use the first `alphabet_size` non-end tokens; 0 means all of
  /// them.
  std::size_t alphabet_size = 0;
};

struct TaskSuite {
  Vocabulary vocab;
  AnswerMatch answer_match = AnswerMatch::kExact;
  std::vector<Question> questions;
  std::map<std::uint32_t, std::size_t> strata_counts;

  const Question& at(QuestionId id) const;
  Question& at(QuestionId id);
  /// Throws Error on duplicate ids, bad tokens or inconsistent strata.
  void validate() const;
};

/// Questions get ids and class ids equal to their position in the suite, so
/// every question owns its own block of policy contexts.
TaskSuite generate_suite(const StrataSpec& spec, const Vocabulary& vocab,
                         Rng& rng, AnswerMatch match = AnswerMatch::kExact);

/// Binary verifiable reward: 1 iff the answer segment matches.
int verify(const Question& question, std::span<const Token> output,
           const Vocabulary& vocab, AnswerMatch match = AnswerMatch::kExact);

inline int verify(const TaskSuite& suite, const Question& question,
                  std::span<const Token> output) {
  return verify(question, output, suite.vocab, suite.answer_match);
}

/// Mean of 0/1 rewards.
double pass_at_1(std::span<const int> rewards);

/// Probability that one rollout of length <= max_len is verified correct,
/// computed by walking the generation tree.
double success_probability(const PolicyParams& params, const TaskSuite& suite,
                           const Question& question, std::size_t max_len);

/// Mean of success_probability over every question in the suite.
double suite_pass_at_1(const PolicyParams& params, const TaskSuite& suite,
                       std::size_t max_len);

/// Policy shape with one class per question.
PolicyShape policy_shape_for(const TaskSuite& suite, std::size_t max_len);

/// Line format: a "# exgrpo-suite" header, then one question per line:
/// `id class_id difficulty tok...`.
void write_suite(std::ostream& out, const TaskSuite& suite);
TaskSuite read_suite(std::istream& in);

}  // namespace exgrpo
