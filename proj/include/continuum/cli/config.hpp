#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "continuum/datasets/dataset.hpp"
#include "continuum/dist/train.hpp"
#include "continuum/fed/federated.hpp"
#include "continuum/msgbus/broker.hpp"
#include "continuum/sdp/pipeline.hpp"

namespace continuum::cli {

using Json = nlohmann::json;

/// Parses a JSON file. Syntax errors become ConfigError with "file:line:col".
Json read_json_file(const std::filesystem::path& path);

/// FNV-1a 64 of the compact dump; object keys are sorted, so the hash
/// does not depend on key order in the source file.
std::uint64_t config_hash(const Json& doc);
std::string hex64(std::uint64_t v);

/// Top-level keys shared by every experiment document.
struct Common {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> output_dir;
};
Common read_common(const Json& doc);

struct SdpExperiment {
  sdp::PipelineSpec pipeline;
  sdp::ArrivalSchedule arrivals;
  bus::LinkLatency latency = bus::LinkLatency(0);
};

struct DistExperiment {
  dist::TrainJob job;
};

struct FlExperiment {
  fed::FlConfig config;
  fed::StragglerModel stragglers;
  data::Dataset dataset;
};

// Every parser rejects unknown keys and reports the JSON path of the
// offending field. `seed` is the resolved experiment seed; `base_dir`
// anchors relative dataset paths.
SdpExperiment parse_sdp_experiment(const Json& doc);
DistExperiment parse_dist_experiment(const Json& doc, std::uint64_t seed, const std::filesystem::path& base_dir);
FlExperiment parse_fl_experiment(const Json& doc, std::uint64_t seed, const std::filesystem::path& base_dir);

/// {"synth": {"n","d","classes","separation","seed"}} or
/// {"csv": {"path","label_column","classes","header"}}.
data::Dataset load_dataset(const Json& spec, const std::string& path, std::uint64_t default_seed,
                           const std::filesystem::path& base_dir);

}  // namespace continuum::cli
