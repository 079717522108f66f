#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "continuum/nncore/mlp.hpp"

namespace continuum::data {

using nn::Label;

/// Labelled samples. Every label < num_classes, n >= 1, features finite.
struct Dataset {
  nn::Matrix features;
  std::vector<Label> labels;
  std::size_t num_classes = 0;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  /// Throws std::invalid_argument if an invariant does not hold.
  void validate() const;

  /// Samples at `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices, std::string subset_name) const;

  nn::Batch as_batch() const { return nn::Batch(features, labels); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

inline nn::Evaluation evaluate(const nn::MlpModel& model, const Dataset& dataset) {
  return nn::evaluate(model, dataset.features, dataset.labels);
}

/// Assignment of n samples to num_parts parts; a function of (n, num_parts, seed).
struct PartitionPlan {
  std::size_t num_parts = 0;
  std::vector<std::size_t> assignment;
  std::uint64_t seed = 0;
  /// Sample indices of each part, in dealing order.
  std::vector<std::vector<std::size_t>> members;
};

/**
 * Gaussian blobs: class c is N(separation * u_c, I) in d dimensions.
 * The unit directions u_c come from a seeded Gram-Schmidt pass over
 * Gaussian vectors (orthonormal while c < d; normalised random beyond).
 * Sample i has label i mod num_classes.
 */
Dataset synth_blobs(std::size_t n, std::size_t d, std::size_t num_classes, double separation,
                    std::uint64_t seed);

struct CsvOptions {
  bool has_header = false;
};

/**
 * Comma-separated numeric file. Every non-label column becomes a feature
 * in file order. Errors cite 1-based row and column numbers.
 */
Dataset load_csv(const std::filesystem::path& path, std::size_t label_column,
                 std::size_t num_classes, CsvOptions options = {});

/// Features then label as the last column, shortest round-trip decimal form.
void write_csv(const Dataset& dataset, const std::filesystem::path& path);

PartitionPlan make_partition_plan(std::size_t n, std::size_t num_parts, std::uint64_t seed);

/// Seeded shuffle dealt round-robin; part sizes differ by at most one.
std::vector<Dataset> partition(const Dataset& dataset, std::size_t num_parts, std::uint64_t seed);

/// Samples [round*s, (round+1)*s) of `part`, wrapping modulo the part size.
nn::Batch next_round_batch(const Dataset& part, std::size_t round_index,
                           std::size_t samples_per_round);

/// Seeded shuffle; the first (n - test) samples train, the rest test.
std::pair<Dataset, Dataset> train_test_split(const Dataset& dataset, double test_fraction,
                                             std::uint64_t seed);

}  // namespace continuum::data
