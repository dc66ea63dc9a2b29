#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

namespace exgrpo {

enum class SelectionMetric { kMeanNll, kMeanDistEntropy, kPerplexity };

/// Whether policy shaping is applied to the replayed trajectory's product
/// weight W* or to each per-token ratio.
enum class ShapingGranularity { kTrajectory, kToken };

/// Group advantages are always mean-centred; std scaling is opt-in (off
/// reproduces the Dr.GRPO estimator).
struct AdvantageMode {
  bool scale_by_std = false;
};

/// Accuracy band for Masked GRPO; both ends inclusive.
struct MaskBand {
  double low = 0.0;
  double high = 1.0;
};

struct TrainConfig {
  std::size_t group_size = 8;    // K
  std::size_t batch_size = 128;  // B
  double rho = 0.5;
  double beta = 0.1;
  double mu = 0.5;
  double sigma = 1.0;
  double epsilon = 0.2;
  double entropy_coeff = 0.001;
  double delayed_start_threshold = 0.35;
  bool use_delayed_start = true;
  double learning_rate = 0.1;
  bool use_clip = false;
  bool use_shaping = true;
  bool use_is_correction = true;
  ShapingGranularity shaping_granularity = ShapingGranularity::kTrajectory;
  SelectionMetric selection_metric = SelectionMetric::kMeanNll;
  AdvantageMode advantage_mode;
  std::optional<MaskBand> mask_band;
  std::size_t capacity_per_question = 8;  // 0 = unbounded
  std::size_t max_len = 5;
  /// Initial logit of the golden token at every context on a question's
  /// golden path (0 = uniform start). Models a base policy with partial
  /// competence that falls off with answer length.
  double warm_start_logit = 0.0;
  std::uint64_t seed = 0;

  /// Throws Error naming the offending field.
  void validate() const;
};

std::string to_string(SelectionMetric metric);
SelectionMetric selection_metric_from_string(const std::string& name);
std::string to_string(ShapingGranularity granularity);
ShapingGranularity shaping_granularity_from_string(const std::string& name);

}  // namespace exgrpo
