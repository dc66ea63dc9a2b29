#include "exgrpo/config.hpp"

#include <cmath>

#include "exgrpo/error.hpp"

namespace exgrpo {

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* field) {
    if (!ok) throw Error(std::string("invalid config field '") + field + "'");
  };
  require(group_size >= 2, "group_size");
  require(batch_size >= 1, "batch_size");
  require(rho >= 0.0 && rho < 1.0, "rho");
  require(beta > 0.0, "beta");
  require(std::isfinite(mu), "mu");
  require(sigma > 0.0, "sigma");
  require(epsilon > 0.0 && epsilon < 1.0, "epsilon");
  require(std::isfinite(entropy_coeff), "entropy_coeff");
  require(delayed_start_threshold >= 0.0 && delayed_start_threshold <= 1.0,
          "delayed_start_threshold");
  require(learning_rate > 0.0, "learning_rate");
  require(max_len >= 1, "max_len");
  require(std::isfinite(warm_start_logit), "warm_start_logit");
  if (mask_band) {
    require(0.0 <= mask_band->low && mask_band->low <= mask_band->high &&
                mask_band->high <= 1.0,
            "mask_band");
  }
}

std::string to_string(SelectionMetric metric) {
  switch (metric) {
    case SelectionMetric::kMeanNll: return "mean_nll";
    case SelectionMetric::kMeanDistEntropy: return "mean_dist_entropy";
    case SelectionMetric::kPerplexity: return "perplexity";
  }
  return "mean_nll";
}

SelectionMetric selection_metric_from_string(const std::string& name) {
  if (name == "mean_nll") return SelectionMetric::kMeanNll;
  if (name == "mean_dist_entropy") return SelectionMetric::kMeanDistEntropy;
  if (name == "perplexity") return SelectionMetric::kPerplexity;
  throw Error("unknown selection metric '" + name + "'");
}

std::string to_string(ShapingGranularity granularity) {
  return granularity == ShapingGranularity::kToken ? "token" : "trajectory";
}

ShapingGranularity shaping_granularity_from_string(const std::string& name) {
  if (name == "trajectory") return ShapingGranularity::kTrajectory;
  if (name == "token") return ShapingGranularity::kToken;
  throw Error("unknown shaping granularity '" + name + "'");
}

}  // namespace exgrpo
