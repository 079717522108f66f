#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "continuum/nncore/matrix.hpp"

namespace continuum::nn {

using Label = std::uint32_t;

enum class Activation { Sigmoid, ReLU, Tanh };

/// Accepts "sigmoid", "relu", "tanh" (case-sensitive); throws ConfigError.
Activation parse_activation(std::string_view name);
std::string_view to_string(Activation a) noexcept;

/**
 * Dense feedforward classifier.
 *
 * Layer l maps layer_sizes[l] inputs to layer_sizes[l+1] outputs through
 * weights(l) (fan_in x fan_out) and biases(l) (fan_out). Hidden layers use
 * the configured activation; the output layer is always softmax.
 */
class MlpModel {
 public:
  /// All parameters zero. Throws std::invalid_argument on fewer than two
  /// layers or a zero-sized layer.
  MlpModel(std::vector<std::size_t> layer_sizes, Activation hidden_activation);

  const std::vector<std::size_t>& layer_sizes() const noexcept { return layer_sizes_; }
  Activation hidden_activation() const noexcept { return activation_; }
  std::size_t num_weight_layers() const noexcept { return weights_.size(); }
  std::size_t input_dim() const noexcept { return layer_sizes_.front(); }
  std::size_t num_classes() const noexcept { return layer_sizes_.back(); }

  const Matrix& weights(std::size_t l) const { return weights_.at(l); }
  Matrix& weights(std::size_t l) { return weights_.at(l); }
  const std::vector<double>& biases(std::size_t l) const { return biases_.at(l); }
  std::vector<double>& biases(std::size_t l) { return biases_.at(l); }

  std::size_t param_count() const noexcept { return param_count(layer_sizes_); }
  static std::size_t param_count(std::span<const std::size_t> layer_sizes) noexcept;

  friend bool operator==(const MlpModel&, const MlpModel&) = default;

 private:
  std::vector<std::size_t> layer_sizes_;
  Activation activation_;
  std::vector<Matrix> weights_;
  std::vector<std::vector<double>> biases_;
};

/// One labelled sample set (features n x d, labels n).
struct Batch {
  Batch(Matrix features, std::vector<Label> labels);

  std::size_t size() const noexcept { return labels.size(); }

  Matrix features;
  std::vector<Label> labels;
};

/// Gradient of the mean loss; shapes mirror an MlpModel.
struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
  std::size_t sample_count = 0;

  /// Zero gradient shaped like `model`.
  static Gradients zeros_like(const MlpModel& model, std::size_t sample_count);
  /// Same canonical order as serialize_params.
  std::vector<double> flatten() const;
  static Gradients unflatten(std::span<const std::size_t> layer_sizes, std::span<const double> flat,
                             std::size_t sample_count);
};

struct Evaluation {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

/// Glorot-uniform weights, zero biases. Deterministic in seed.
MlpModel init_model(std::vector<std::size_t> layer_sizes, Activation hidden_activation,
                    std::uint64_t seed);

/// Class probabilities (n x C); each row is a softmax distribution.
Matrix forward(const MlpModel& model, const Matrix& features);

/// Mean cross-entropy of the batch.
double loss(const MlpModel& model, const Batch& batch);

/// Exact gradient of loss() by backpropagation.
Gradients gradient(const MlpModel& model, const Batch& batch);

/// params - learning_rate * grads. learning_rate must be finite and >= 0.
MlpModel sgd_step(const MlpModel& model, const Gradients& grads, double learning_rate);

/// Argmax accuracy (ties to the lowest class index) and mean cross-entropy.
Evaluation evaluate(const MlpModel& model, const Matrix& features, std::span<const Label> labels);
inline Evaluation evaluate(const MlpModel& model, const Batch& batch) {
  return evaluate(model, batch.features, batch.labels);
}

/// Frozen wire order: for each layer, weights row-major then biases.
std::vector<double> serialize_params(const MlpModel& model);
MlpModel deserialize_params(std::vector<std::size_t> layer_sizes, Activation hidden_activation,
                            std::span<const double> params);

/// Bit-for-bit equality of all parameters (distinguishes -0.0 from 0.0).
bool bitwise_equal(const MlpModel& a, const MlpModel& b);

}  // namespace continuum::nn
