#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "lagtrack/pipeline.hpp"

namespace lagtrack::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitInput = 3;

inline constexpr const char* kVersion = "0.1.0";

struct Options {
  std::filesystem::path config;
  std::optional<int> workers;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

/// Configuration with every default filled in.
nlohmann::json default_config();

/// Reads a JSON config and merges it over the defaults. Throws Error(Config).
nlohmann::json load_config(const std::filesystem::path& path);

/// Tracking, noise and campaign sections to a CampaignConfig.
CampaignConfig campaign_config(const nlohmann::json& config);

int cmd_calibrate(const Options& options, std::ostream& log);
int cmd_track(const Options& options, std::ostream& log);
int cmd_plot(const Options& options, std::ostream& log);
int cmd_synth(const Options& options, std::ostream& log);

/// Parses `lagtrack <subcommand> [flags]` and dispatches; returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lagtrack::cli
