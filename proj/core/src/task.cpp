#include "exgrpo/task.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>

#include "exgrpo/error.hpp"

namespace exgrpo {

const Question& TaskSuite::at(QuestionId id) const {
  if (id < questions.size() && questions[id].id == id) return questions[id];
  auto it = std::find_if(questions.begin(), questions.end(),
                         [id](const Question& q) { return q.id == id; });
  if (it == questions.end()) throw Error("unknown question");
  return *it;
}

Question& TaskSuite::at(QuestionId id) {
  return const_cast<Question&>(std::as_const(*this).at(id));
}

void TaskSuite::validate() const {
  vocab.validate();
  std::set<QuestionId> ids;
  std::map<std::uint32_t, std::size_t> counts;
  for (const Question& q : questions) {
    if (!ids.insert(q.id).second) throw Error("duplicate question id");
    if (q.golden_answer.empty()) throw Error("empty golden answer");
    for (Token t : q.golden_answer) {
      if (t >= vocab.size || t == vocab.end_token) {
        throw Error("golden answer token out of range");
      }
    }
    ++counts[q.difficulty];
  }
  if (counts != strata_counts) throw Error("strata counts inconsistent");
}

TaskSuite generate_suite(const StrataSpec& spec, const Vocabulary& vocab,
                         Rng& rng, AnswerMatch match) {
  vocab.validate();
  const std::size_t available = vocab.size - 1;
  const std::size_t alphabet =
      spec.alphabet_size == 0 ? available : spec.alphabet_size;
  if (alphabet > available) {
    throw Error("vocabulary too small for requested answer alphabet");
  }
  std::vector<Token> symbols;
  for (Token t = 0; t < vocab.size && symbols.size() < alphabet; ++t) {
    if (t != vocab.end_token) symbols.push_back(t);
  }

  TaskSuite suite;
  suite.vocab = vocab;
  suite.answer_match = match;
  for (const Stratum& stratum : spec.strata) {
    if (stratum.difficulty < 1) throw Error("difficulty must be >= 1");
    for (std::size_t i = 0; i < stratum.count; ++i) {
      Question q;
      q.id = static_cast<QuestionId>(suite.questions.size());
      q.class_id = q.id;
      q.difficulty = stratum.difficulty;
      q.golden_answer.reserve(stratum.difficulty);
      for (std::uint32_t t = 0; t < stratum.difficulty; ++t) {
        q.golden_answer.push_back(symbols[rng.uniform_index(symbols.size())]);
      }
      suite.questions.push_back(std::move(q));
    }
    if (stratum.count > 0) suite.strata_counts[stratum.difficulty] += stratum.count;
  }
  return suite;
}

int verify(const Question& question, std::span<const Token> output,
           const Vocabulary& vocab, AnswerMatch match) {
  const auto end = std::find(output.begin(), output.end(), vocab.end_token);
  const std::span<const Token> answer(output.begin(), end);
  const auto& golden = question.golden_answer;
  if (match == AnswerMatch::kExact) {
    return std::equal(answer.begin(), answer.end(), golden.begin(),
                      golden.end())
               ? 1
               : 0;
  }
  if (answer.size() < golden.size()) return 0;
  return std::equal(golden.begin(), golden.end(),
                    answer.end() - static_cast<std::ptrdiff_t>(golden.size()))
             ? 1
             : 0;
}

double pass_at_1(std::span<const int> rewards) {
  if (rewards.empty()) throw Error("pass@1 of empty batch");
  double total = 0.0;
  for (int r : rewards) total += r;
  return total / static_cast<double>(rewards.size());
}

namespace {

constexpr std::size_t kMaxTreeNodes = 4'000'000;

struct TreeWalk {
  const PolicyParams& params;
  const TaskSuite& suite;
  const Question& question;
  std::size_t max_len;
  std::size_t nodes = 0;

  double walk(TokenSeq& prefix, double prob) {
    if (++nodes > kMaxTreeNodes) throw Error("generation tree too large");
    const std::vector<double> dist =
        token_distribution(params, question, prefix);
    double total = 0.0;
    for (Token t = 0; t < dist.size(); ++t) {
      if (suite.answer_match == AnswerMatch::kExact && t != suite.vocab.end_token &&
          (prefix.size() >= question.golden_answer.size() ||
           question.golden_answer[prefix.size()] != t)) {
        continue;  // diverged from the only accepted path
      }
      prefix.push_back(t);
      const double p = prob * dist[t];
      if (t == suite.vocab.end_token || prefix.size() == max_len) {
        total += p * verify(suite, question, prefix);
      } else {
        total += walk(prefix, p);
      }
      prefix.pop_back();
    }
    return total;
  }
};

}  // namespace

double success_probability(const PolicyParams& params, const TaskSuite& suite,
                           const Question& question, std::size_t max_len) {
  TokenSeq prefix;
  TreeWalk walker{params, suite, question, max_len};
  return walker.walk(prefix, 1.0);
}

double suite_pass_at_1(const PolicyParams& params, const TaskSuite& suite,
                       std::size_t max_len) {
  if (suite.questions.empty()) return 0.0;
  double total = 0.0;
  for (const Question& q : suite.questions) {
    total += success_probability(params, suite, q, max_len);
  }
  return total / static_cast<double>(suite.questions.size());
}

PolicyShape policy_shape_for(const TaskSuite& suite, std::size_t max_len) {
  PolicyShape shape;
  shape.vocab = suite.vocab;
  std::size_t classes = 1;
  for (const Question& q : suite.questions) {
    classes = std::max<std::size_t>(classes, q.class_id + 1);
  }
  shape.num_classes = classes;
  shape.max_len = max_len;
  return shape;
}

void write_suite(std::ostream& out, const TaskSuite& suite) {
  out << "# exgrpo-suite 1 vocab_size=" << suite.vocab.size
      << " end_token=" << suite.vocab.end_token << " match="
      << (suite.answer_match == AnswerMatch::kExact ? "exact" : "suffix")
      << '\n';
  for (const Question& q : suite.questions) {
    out << q.id << ' ' << q.class_id << ' ' << q.difficulty;
    for (Token t : q.golden_answer) out << ' ' << t;
    out << '\n';
  }
}

TaskSuite read_suite(std::istream& in) {
  TaskSuite suite;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  auto fail = [&line_no](const std::string& msg) {
    throw Error("suite line " + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    if (!have_header) {
      std::string hash, magic, match;
      int version = 0;
      fields >> hash >> magic >> version;
      if (hash != "#" || magic != "exgrpo-suite" || version != 1) {
        fail("missing '# exgrpo-suite 1' header");
      }
      std::string kv;
      while (fields >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) fail("bad header field '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        if (key == "vocab_size") {
          suite.vocab.size = std::stoul(value);
        } else if (key == "end_token") {
          suite.vocab.end_token = static_cast<Token>(std::stoul(value));
        } else if (key == "match") {
          if (value == "exact") {
            suite.answer_match = AnswerMatch::kExact;
          } else if (value == "suffix") {
            suite.answer_match = AnswerMatch::kSuffix;
          } else {
            fail("unknown match mode '" + value + "'");
          }
        } else {
          fail("unknown header key '" + key + "'");
        }
      }
      have_header = true;
      continue;
    }
    if (line[0] == '#') continue;
    Question q;
    if (!(fields >> q.id >> q.class_id >> q.difficulty)) {
      fail("expected 'id class_id difficulty tokens...'");
    }
    Token t = 0;
    while (fields >> t) q.golden_answer.push_back(t);
    if (!fields.eof()) fail("non-numeric token");
    if (q.golden_answer.size() != q.difficulty) {
      fail("answer length differs from difficulty");
    }
    ++suite.strata_counts[q.difficulty];
    suite.questions.push_back(std::move(q));
  }
  if (!have_header) throw Error("suite: empty input");
  suite.validate();
  return suite;
}

}  // namespace exgrpo
