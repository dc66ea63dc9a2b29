#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "exgrpo/config.hpp"
#include "exgrpo/optimizer.hpp"
#include "exgrpo/task.hpp"

namespace exgrpo::harness {

/// One training arm. `flags` are ablation switches applied on top of the
/// experiment's TrainConfig.
struct ArmSpec {
  enum class Kind { kExgrpo, kOnPolicy, kMaskedGrpo };

  std::string label;
  Kind kind = Kind::kExgrpo;
  MaskBand band;
  std::vector<std::string> flags;
};

struct ExperimentSpec {
  std::string name = "experiment";
  TrainConfig config;
  Vocabulary vocab{4, 0};
  StrataSpec suite_spec;
  AnswerMatch answer_match = AnswerMatch::kExact;
  std::size_t steps = 1;
  std::vector<std::uint64_t> seeds{0};
  std::vector<ArmSpec> arms;

  void validate() const;
};

/// Parses the flat `key = value` format. `#` starts a comment. Unknown keys,
/// duplicates and bad values throw Error("<source>:<line>: ...").
ExperimentSpec parse_experiment(std::istream& in, const std::string& source);
ExperimentSpec load_experiment(const std::string& path);

/// Arm grammar: `exgrpo`, `on_policy` or `masked_grpo(low:high)`, each
/// optionally followed by `/flag` switches (no_shaping, no_is_correction,
/// clip, token_shaping, no_delayed_start, std_advantage).
ArmSpec parse_arm(const std::string& text);

TrainConfig arm_config(const ExperimentSpec& spec, const ArmSpec& arm,
                       std::uint64_t seed);

/// Suite for a seed; identical across arms so arms are comparable.
TaskSuite make_suite(const ExperimentSpec& spec, std::uint64_t seed);

struct RunResult {
  std::vector<StepReport> reports;
  TrainState final_state;
};

using StepObserver = std::function<void(const TrainState&, const StepReport&)>;

RunResult run_arm(const ExperimentSpec& spec, const ArmSpec& arm,
                  std::uint64_t seed, const StepObserver& observer = {});

/// File-name-safe form of an arm label.
std::string arm_slug(const std::string& label);

}  // namespace exgrpo::harness
