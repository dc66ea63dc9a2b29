#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "harness/commands.hpp"

namespace {

bool configure_logging() {
  auto logger = spdlog::stderr_color_mt("exgrpo");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  const char* env = std::getenv("EXGRPO_LOG_LEVEL");
  const std::string level = env ? env : "info";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::error("EXGRPO_LOG_LEVEL must be error, info or debug (got '{}')", level);
    return false;
  }
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace exgrpo::harness;
  if (!configure_logging()) return kExitUsage;

  CLI::App app{"Experience-managed group-relative policy optimization on tabular tasks"};
  app.require_subcommand(1);

  std::string spec_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed_override;
  auto* train = app.add_subcommand("train", "Train every arm and seed of an experiment spec");
  train->add_option("--spec", spec_path, "Experiment spec file")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--seed-override", seed_override, "Run only this seed");

  std::string tier = "fast";
  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "Run the oracle and property checks");
  verify->add_option("--tier", tier, "fast or full")->check(CLI::IsMember({"fast", "full"}));
  verify->add_option("--seed-override", verify_seed, "Seed for randomized checks");

  std::string snapshot_path;
  auto* inspect = app.add_subcommand("inspect-buffer", "Summarize a buffer snapshot");
  inspect->add_option("snapshot", snapshot_path, "Snapshot file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return cmd_train(spec_path, out_dir, seed_override, std::cout);
    if (*verify) return cmd_verify(tier, verify_seed, std::cout);
    if (*inspect) return cmd_inspect_buffer(snapshot_path, std::cout);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
