#include "commands.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <ostream>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "checks.hpp"
#include "exgrpo/error.hpp"
#include "exgrpo/experience.hpp"
#include "exgrpo/report.hpp"
#include "exgrpo/snapshot.hpp"
#include "experiment.hpp"

namespace exgrpo::harness {

namespace fs = std::filesystem;

namespace {

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw fs::filesystem_error("cannot write", path, std::make_error_code(std::errc::io_error));
  return out;
}

struct Stats {
  double mean = 0.0;
  double sd = 0.0;
};

Stats stats(const std::vector<double>& xs) {
  Stats s;
  if (xs.empty()) return s;
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return s;
}

}  // namespace

int cmd_train(const std::string& spec_path, const fs::path& out,
              std::optional<std::uint64_t> seed_override, std::ostream& log) {
  ExperimentSpec spec;
  try {
    spec = load_experiment(spec_path);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return fs::exists(spec_path) ? kExitUsage : kExitIo;
  }
  if (seed_override) spec.seeds = {*seed_override};

  try {
    fs::create_directories(out);
    nlohmann::ordered_json summary;
    summary["format_version"] = kMetricsFormatVersion;
    summary["name"] = spec.name;
    summary["steps"] = spec.steps;
    summary["seeds"] = spec.seeds;
    summary["arms"] = nlohmann::ordered_json::array();

    log << fmt::format("{:<32} {:>22} {:>22}\n", "arm", "final Pass@1", "best Pass@1");
    for (const ArmSpec& arm : spec.arms) {
      std::vector<double> finals;
      std::vector<double> bests;
      for (std::uint64_t seed : spec.seeds) {
        const std::string stem = fmt::format("{}_seed{}", arm_slug(arm.label), seed);
        std::ofstream jsonl = open_output(out / (stem + ".jsonl"));
        std::ofstream csv = open_output(out / (stem + ".csv"));
        csv << csv_header() << '\n';
        spdlog::info("training arm {} seed {} for {} steps", arm.label, seed, spec.steps);
        double best = 0.0;
        const RunResult run =
            run_arm(spec, arm, seed, [&](const TrainState&, const StepReport& r) {
              jsonl << to_json_line(r) << '\n';
              csv << to_csv_row(r) << '\n';
              best = std::max(best, r.suite_pass_at_1);
              spdlog::debug("{} seed {} step {} pass@1 {:.4f} buffer {} retired {}",
                            arm.label, seed, r.step, r.pass_at_1, r.buffer_size,
                            r.retired_size);
            });
        finals.push_back(run.reports.back().suite_pass_at_1);
        bests.push_back(best);

        BufferSnapshot snap;
        snap.group_size = arm_config(spec, arm, seed).group_size;
        snap.step = run.final_state.step;
        snap.buffer = run.final_state.buffer;
        snap.retired = run.final_state.retired;
        std::ofstream buf = open_output(out / (stem + ".buffer"));
        write_snapshot(buf, snap);
        if (!jsonl || !csv || !buf) {
          throw fs::filesystem_error("write failed", out / stem,
                                     std::make_error_code(std::errc::io_error));
        }
      }
      const Stats f = stats(finals);
      const Stats b = stats(bests);
      log << fmt::format("{:<32} {:>12.4f} +- {:<6.4f} {:>12.4f} +- {:<6.4f}\n", arm.label,
                         f.mean, f.sd, b.mean, b.sd);
      nlohmann::ordered_json row;
      row["arm"] = arm.label;
      row["final_pass_at_1_mean"] = f.mean;
      row["final_pass_at_1_std"] = f.sd;
      row["best_pass_at_1_mean"] = b.mean;
      row["best_pass_at_1_std"] = b.sd;
      row["final_pass_at_1"] = finals;
      row["best_pass_at_1"] = bests;
      summary["arms"].push_back(row);
    }
    std::ofstream sj = open_output(out / "summary.json");
    sj << summary.dump(2) << '\n';
  } catch (const fs::filesystem_error& e) {
    spdlog::error("output directory '{}': {}", out.string(), e.what());
    return kExitIo;
  }
  return kExitOk;
}

int cmd_verify(const std::string& tier, std::uint64_t seed, std::ostream& log) {
  VerifyTier t;
  if (tier == "fast") {
    t = VerifyTier::kFast;
  } else if (tier == "full") {
    t = VerifyTier::kFull;
  } else {
    spdlog::error("unknown tier '{}' (expected fast or full)", tier);
    return kExitUsage;
  }
  const std::vector<CheckResult> results = run_verify(t, seed);
  bool all = true;
  for (const CheckResult& r : results) {
    log << fmt::format("{:<22} {:<4} {:>7.2f}s  {}\n", r.name, r.pass ? "PASS" : "FAIL",
                       r.seconds, r.detail);
    all = all && r.pass;
  }
  log << (all ? "verify: all checks passed\n" : "verify: FAILED\n");
  return all ? kExitOk : kExitFailure;
}

int cmd_inspect_buffer(const std::string& snapshot_path, std::ostream& log) {
  std::ifstream in(snapshot_path);
  if (!in) {
    spdlog::error("cannot open snapshot '{}'", snapshot_path);
    return kExitIo;
  }
  BufferSnapshot snap;
  try {
    snap = read_snapshot(in);
  } catch (const Error& e) {
    spdlog::error("{}: {}", snapshot_path, e.what());
    return kExitUsage;
  }

  std::map<std::size_t, std::vector<double>> metrics;
  std::map<std::size_t, std::size_t> counts;
  for (const auto& [id, entry] : snap.buffer.entries) {
    ++counts[entry.success_count];
    for (const Trajectory& t : entry.stored) {
      if (t.cached_metric) metrics[entry.success_count].push_back(*t.cached_metric);
    }
  }
  log << fmt::format("step {}  group_size {}  buffered {}  retired {}\n", snap.step,
                     snap.group_size, snap.buffer.size(), snap.retired.size());
  log << fmt::format("{:>6} {:>10} {:>12}  histogram\n", "k", "questions", "mean_metric");
  for (std::size_t k = 1; k < snap.group_size; ++k) {
    const std::size_t n = counts.count(k) ? counts.at(k) : 0;
    const auto it = metrics.find(k);
    const std::string mean =
        it == metrics.end() ? "-" : fmt::format("{:.4f}", stats(it->second).mean);
    log << fmt::format("{:>6} {:>10} {:>12}  {}\n", k, n, mean,
                       std::string(std::min<std::size_t>(n, 60), '#'));
  }

  std::vector<std::string> issues = validate_buffer(snap.buffer, snap.retired);
  for (const auto& [id, entry] : snap.buffer.entries) {
    if (entry.group_size != snap.group_size) {
      issues.push_back(fmt::format("question {} recorded with group size {}", id,
                                   entry.group_size));
    }
  }
  for (const std::string& issue : issues) log << "violation: " << issue << '\n';
  return issues.empty() ? kExitOk : kExitFailure;
}

}  // namespace exgrpo::harness
