#include "experiment.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "exgrpo/error.hpp"
#include "exgrpo/rng.hpp"

namespace exgrpo::harness {

namespace {

constexpr std::uint64_t kSuiteSalt = 0x5017E;
constexpr std::uint64_t kTrainSalt = 0x7121;

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_integer(const std::string& text) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw Error("expected a non-negative integer, got '" + text + "'");
  }
  return value;
}

double parse_real(const std::string& text) {
  double value = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw Error("expected a number, got '" + text + "'");
  }
  return value;
}

bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error("expected true or false, got '" + text + "'");
}

using Setter = std::function<void(ExperimentSpec&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"name", [](ExperimentSpec& s, const std::string& v) { s.name = v; }},
      {"steps", [](ExperimentSpec& s, const std::string& v) {
         s.steps = parse_integer<std::size_t>(v);
       }},
      {"seeds", [](ExperimentSpec& s, const std::string& v) {
         s.seeds.clear();
         for (const auto& item : split(v, ',')) {
           s.seeds.push_back(parse_integer<std::uint64_t>(item));
         }
       }},
      {"arms", [](ExperimentSpec& s, const std::string& v) {
         s.arms.clear();
         for (const auto& item : split(v, ',')) s.arms.push_back(parse_arm(item));
       }},
      {"strata", [](ExperimentSpec& s, const std::string& v) {
         s.suite_spec.strata.clear();
         for (const auto& item : split(v, ',')) {
           const auto colon = item.find(':');
           if (colon == std::string::npos) {
             throw Error("expected difficulty:count, got '" + item + "'");
           }
           Stratum st;
           st.difficulty = parse_integer<std::uint32_t>(trim(item.substr(0, colon)));
           st.count = parse_integer<std::size_t>(trim(item.substr(colon + 1)));
           s.suite_spec.strata.push_back(st);
         }
       }},
      {"alphabet_size", [](ExperimentSpec& s, const std::string& v) {
         s.suite_spec.alphabet_size = parse_integer<std::size_t>(v);
       }},
      {"vocab_size", [](ExperimentSpec& s, const std::string& v) {
         s.vocab.size = parse_integer<std::size_t>(v);
       }},
      {"end_token", [](ExperimentSpec& s, const std::string& v) {
         s.vocab.end_token = parse_integer<Token>(v);
       }},
      {"answer_match", [](ExperimentSpec& s, const std::string& v) {
         if (v == "exact") {
           s.answer_match = AnswerMatch::kExact;
         } else if (v == "suffix") {
           s.answer_match = AnswerMatch::kSuffix;
         } else {
           throw Error("expected exact or suffix, got '" + v + "'");
         }
       }},
      {"group_size", [](ExperimentSpec& s, const std::string& v) {
         s.config.group_size = parse_integer<std::size_t>(v);
       }},
      {"batch_size", [](ExperimentSpec& s, const std::string& v) {
         s.config.batch_size = parse_integer<std::size_t>(v);
       }},
      {"rho", [](ExperimentSpec& s, const std::string& v) { s.config.rho = parse_real(v); }},
      {"beta", [](ExperimentSpec& s, const std::string& v) { s.config.beta = parse_real(v); }},
      {"mu", [](ExperimentSpec& s, const std::string& v) { s.config.mu = parse_real(v); }},
      {"sigma", [](ExperimentSpec& s, const std::string& v) { s.config.sigma = parse_real(v); }},
      {"epsilon", [](ExperimentSpec& s, const std::string& v) {
         s.config.epsilon = parse_real(v);
       }},
      {"entropy_coeff", [](ExperimentSpec& s, const std::string& v) {
         s.config.entropy_coeff = parse_real(v);
       }},
      {"delayed_start_threshold", [](ExperimentSpec& s, const std::string& v) {
         s.config.delayed_start_threshold = parse_real(v);
       }},
      {"use_delayed_start", [](ExperimentSpec& s, const std::string& v) {
         s.config.use_delayed_start = parse_bool(v);
       }},
      {"learning_rate", [](ExperimentSpec& s, const std::string& v) {
         s.config.learning_rate = parse_real(v);
       }},
      {"use_clip", [](ExperimentSpec& s, const std::string& v) {
         s.config.use_clip = parse_bool(v);
       }},
      {"use_shaping", [](ExperimentSpec& s, const std::string& v) {
         s.config.use_shaping = parse_bool(v);
       }},
      {"use_is_correction", [](ExperimentSpec& s, const std::string& v) {
         s.config.use_is_correction = parse_bool(v);
       }},
      {"shaping_granularity", [](ExperimentSpec& s, const std::string& v) {
         s.config.shaping_granularity = shaping_granularity_from_string(v);
       }},
      {"selection_metric", [](ExperimentSpec& s, const std::string& v) {
         s.config.selection_metric = selection_metric_from_string(v);
       }},
      {"scale_by_std", [](ExperimentSpec& s, const std::string& v) {
         s.config.advantage_mode.scale_by_std = parse_bool(v);
       }},
      {"capacity_per_question", [](ExperimentSpec& s, const std::string& v) {
         s.config.capacity_per_question = parse_integer<std::size_t>(v);
       }},
      {"warm_start_logit", [](ExperimentSpec& s, const std::string& v) {
         s.config.warm_start_logit = parse_real(v);
       }},
      {"max_len", [](ExperimentSpec& s, const std::string& v) {
         s.config.max_len = parse_integer<std::size_t>(v);
       }},
  };
  return table;
}

}  // namespace

void ExperimentSpec::validate() const {
  if (steps < 1) throw Error("steps must be >= 1");
  if (seeds.empty()) throw Error("seeds must not be empty");
  if (arms.empty()) throw Error("arms must not be empty");
  vocab.validate();
  config.validate();
  std::size_t total = 0;
  for (const Stratum& st : suite_spec.strata) {
    total += st.count;
    if (st.difficulty + 1 > config.max_len) {
      throw Error("max_len too small for difficulty " + std::to_string(st.difficulty));
    }
  }
  if (total == 0) throw Error("strata describe an empty suite");
}

ArmSpec parse_arm(const std::string& text) {
  ArmSpec arm;
  arm.label = text;
  const std::vector<std::string> parts = split(text, '/');
  if (parts.empty()) throw Error("empty arm");
  const std::string& head = parts.front();
  if (head == "exgrpo") {
    arm.kind = ArmSpec::Kind::kExgrpo;
  } else if (head == "on_policy") {
    arm.kind = ArmSpec::Kind::kOnPolicy;
  } else if (head.rfind("masked_grpo(", 0) == 0 && head.back() == ')') {
    arm.kind = ArmSpec::Kind::kMaskedGrpo;
    const std::string inner = head.substr(12, head.size() - 13);
    const auto colon = inner.find(':');
    if (colon == std::string::npos) {
      throw Error("masked_grpo expects (low:high), got '" + head + "'");
    }
    arm.band.low = parse_real(trim(inner.substr(0, colon)));
    arm.band.high = parse_real(trim(inner.substr(colon + 1)));
  } else {
    throw Error("unknown arm '" + head + "'");
  }
  static const std::set<std::string> known = {"no_shaping",   "no_is_correction",
                                               "clip",         "token_shaping",
                                               "no_delayed_start", "std_advantage"};
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (!known.contains(parts[i])) throw Error("unknown arm flag '" + parts[i] + "'");
    arm.flags.push_back(parts[i]);
  }
  return arm;
}

ExperimentSpec parse_experiment(std::istream& in, const std::string& source) {
  ExperimentSpec spec;
  spec.arms = {parse_arm("exgrpo")};
  std::set<std::string> seen;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) throw Error(where + "unknown key '" + key + "'");
    if (!seen.insert(key).second) throw Error(where + "duplicate key '" + key + "'");
    try {
      it->second(spec, value);
    } catch (const Error& e) {
      throw Error(where + "field '" + key + "': " + e.what());
    }
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    throw Error(source + ": " + e.what());
  }
  return spec;
}

ExperimentSpec load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open spec '" + path + "'");
  return parse_experiment(in, path);
}

TrainConfig arm_config(const ExperimentSpec& spec, const ArmSpec& arm,
                       std::uint64_t seed) {
  TrainConfig cfg = spec.config;
  cfg.seed = seed;
  switch (arm.kind) {
    case ArmSpec::Kind::kExgrpo:
      break;
    case ArmSpec::Kind::kOnPolicy:
      cfg.rho = 0.0;
      break;
    case ArmSpec::Kind::kMaskedGrpo:
      cfg.rho = 0.0;
      cfg.mask_band = arm.band;
      break;
  }
  for (const std::string& flag : arm.flags) {
    if (flag == "no_shaping") cfg.use_shaping = false;
    if (flag == "no_is_correction") cfg.use_is_correction = false;
    if (flag == "clip") cfg.use_clip = true;
    if (flag == "token_shaping") cfg.shaping_granularity = ShapingGranularity::kToken;
    if (flag == "no_delayed_start") cfg.use_delayed_start = false;
    if (flag == "std_advantage") cfg.advantage_mode.scale_by_std = true;
  }
  cfg.validate();
  return cfg;
}

TaskSuite make_suite(const ExperimentSpec& spec, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, kSuiteSalt);
  return generate_suite(spec.suite_spec, spec.vocab, rng, spec.answer_match);
}

RunResult run_arm(const ExperimentSpec& spec, const ArmSpec& arm,
                  std::uint64_t seed, const StepObserver& observer) {
  const TrainConfig cfg = arm_config(spec, arm, seed);
  RunResult result{{}, TrainState(make_suite(spec, seed), cfg)};
  Rng rng = Rng::derive(seed, kTrainSalt);
  result.reports.reserve(spec.steps);
  for (std::size_t i = 0; i < spec.steps; ++i) {
    result.reports.push_back(train_step(result.final_state, cfg, rng));
    if (observer) observer(result.final_state, result.reports.back());
  }
  return result;
}

std::string arm_slug(const std::string& label) {
  std::string out;
  for (char c : label) {
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' ? c : '_');
  }
  while (!out.empty() && out.back() == '_') out.pop_back();
  return out;
}

}  // namespace exgrpo::harness
