#pragma once

#include <string>

#include "exgrpo/optimizer.hpp"

namespace exgrpo {

inline constexpr int kMetricsFormatVersion = 1;

/// One JSON-lines record. `format_version` is always the first field; the
/// remaining keys are the StepReport field names in declaration order.
std::string to_json_line(const StepReport& report);
StepReport step_report_from_json(const std::string& line);

std::string csv_header();
std::string to_csv_row(const StepReport& report);

}  // namespace exgrpo
