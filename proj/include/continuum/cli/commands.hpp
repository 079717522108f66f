#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "continuum/msgbus/tcp_broker.hpp"

namespace continuum::cli {

enum ExitCode : int { kExitOk = 0, kExitRuntime = 1, kExitConfig = 2, kExitReplayMismatch = 3 };

enum class Command { SdpSim, DistTrain, FlRun };

const char* command_name(Command c) noexcept;

struct RunOptions {
  std::filesystem::path config_path;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::uint64_t> seed;
  std::string bus = "sim";  // sim | tcp
  std::uint16_t bus_port = bus::kDefaultBusPort;
};

/// Runs one experiment and writes its CSVs, config.resolved.json and
/// manifest.json into the output directory. Nothing is written when the
/// config is rejected.
int run_experiment(Command command, const RunOptions& options, std::ostream& out, std::ostream& err);

/// Reruns the experiment recorded in `manifest_path` into <dir>/.replay
/// and byte-compares every recorded output.
int replay_check(const std::filesystem::path& manifest_path, std::ostream& out, std::ostream& err);

/// Entry point of the `continuum` executable.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace continuum::cli
