#include "continuum/nncore/mlp.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "continuum/common/error.hpp"
#include "continuum/common/rng.hpp"

namespace continuum::nn {
namespace {

void check_layers(std::span<const std::size_t> sizes) {
  if (sizes.size() < 2) throw std::invalid_argument("model needs at least input and output layers");
  for (std::size_t s : sizes) {
    if (s == 0) throw std::invalid_argument("layer size must be >= 1");
  }
}

double activate(Activation a, double z) {
  switch (a) {
    case Activation::Sigmoid:
      return 1.0 / (1.0 + std::exp(-z));
    case Activation::ReLU:
      return z > 0.0 ? z : 0.0;
    case Activation::Tanh:
      return std::tanh(z);
  }
  return z;
}

// Derivative expressed through the pre-activation z and the output a.
double activate_grad(Activation act, double z, double a) {
  switch (act) {
    case Activation::Sigmoid:
      return a * (1.0 - a);
    case Activation::ReLU:
      return z > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh:
      return 1.0 - a * a;
  }
  return 1.0;
}

// out = x * w + b, summing over k in ascending order.
Matrix affine(const Matrix& x, const Matrix& w, const std::vector<double>& b) {
  const std::size_t n = x.rows();
  const std::size_t fan_in = w.rows();
  const std::size_t fan_out = w.cols();
  Matrix out(n, fan_out);
  for (std::size_t i = 0; i < n; ++i) std::copy(b.begin(), b.end(), out.row(i).data());
  // Rows are processed four at a time to reuse each weight row; every
  // output element still accumulates over k in ascending order.
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    double* o0 = out.row(i).data();
    double* o1 = out.row(i + 1).data();
    double* o2 = out.row(i + 2).data();
    double* o3 = out.row(i + 3).data();
    const double* x0 = x.row(i).data();
    const double* x1 = x.row(i + 1).data();
    const double* x2 = x.row(i + 2).data();
    const double* x3 = x.row(i + 3).data();
    for (std::size_t k = 0; k < fan_in; ++k) {
      const double* wk = w.row(k).data();
      const double a0 = x0[k], a1 = x1[k], a2 = x2[k], a3 = x3[k];
      for (std::size_t j = 0; j < fan_out; ++j) {
        const double wv = wk[j];
        o0[j] += a0 * wv;
        o1[j] += a1 * wv;
        o2[j] += a2 * wv;
        o3[j] += a3 * wv;
      }
    }
  }
  for (; i < n; ++i) {
    double* o = out.row(i).data();
    const double* xi = x.row(i).data();
    for (std::size_t k = 0; k < fan_in; ++k) {
      const double xv = xi[k];
      const double* wk = w.row(k).data();
      for (std::size_t j = 0; j < fan_out; ++j) o[j] += xv * wk[j];
    }
  }
  return out;
}

// Per-layer pre-activations and activations of one forward pass. acts[0]
// is the input; acts.back() holds the output logits (softmax not applied).
struct Pass {
  std::vector<Matrix> pre;
  std::vector<Matrix> acts;
};

Pass run_layers(const MlpModel& model, const Matrix& features, bool keep_all) {
  if (features.cols() != model.input_dim()) {
    throw DimensionError("feature width " + std::to_string(features.cols()) +
                         " != model input " + std::to_string(model.input_dim()));
  }
  Pass pass;
  const std::size_t layers = model.num_weight_layers();
  if (keep_all) pass.acts.push_back(features);
  const Matrix* input = &features;
  Matrix current;
  for (std::size_t l = 0; l < layers; ++l) {
    Matrix z = affine(*input, model.weights(l), model.biases(l));
    if (l + 1 == layers) {
      if (keep_all) pass.pre.push_back(z);
      current = std::move(z);
      break;
    }
    Matrix a = z;
    for (double& v : a.data()) v = activate(model.hidden_activation(), v);
    if (keep_all) {
      pass.pre.push_back(std::move(z));
      pass.acts.push_back(a);
    }
    current = std::move(a);
    input = &current;
  }
  pass.acts.push_back(std::move(current));
  return pass;
}

// Row-wise softmax in place with max subtraction.
void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double sum = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : r) v /= sum;
  }
}

// -log softmax(logits)[label], computed without forming probabilities.
double cross_entropy(std::span<const double> logits, Label label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return -(logits[label] - mx - std::log(sum));
}

void check_labels(std::span<const Label> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) throw DimensionError("label count does not match feature rows");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) {
      throw DimensionError("label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                           " out of range for " + std::to_string(classes) + " classes");
    }
  }
}

void check_shapes(const MlpModel& model, const Gradients& grads) {
  if (grads.weights.size() != model.num_weight_layers() ||
      grads.biases.size() != model.num_weight_layers()) {
    throw DimensionError("gradient layer count does not match model");
  }
  for (std::size_t l = 0; l < model.num_weight_layers(); ++l) {
    const Matrix& w = model.weights(l);
    if (grads.weights[l].rows() != w.rows() || grads.weights[l].cols() != w.cols() ||
        grads.biases[l].size() != model.biases(l).size()) {
      throw DimensionError("gradient shape mismatch at layer " + std::to_string(l));
    }
  }
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "relu") return Activation::ReLU;
  if (name == "tanh") return Activation::Tanh;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation a) noexcept {
  switch (a) {
    case Activation::Sigmoid:
      return "sigmoid";
    case Activation::ReLU:
      return "relu";
    case Activation::Tanh:
      return "tanh";
  }
  return "?";
}

MlpModel::MlpModel(std::vector<std::size_t> layer_sizes, Activation hidden_activation)
    : layer_sizes_(std::move(layer_sizes)), activation_(hidden_activation) {
  check_layers(layer_sizes_);
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
    weights_.emplace_back(layer_sizes_[l], layer_sizes_[l + 1]);
    biases_.emplace_back(layer_sizes_[l + 1], 0.0);
  }
}

std::size_t MlpModel::param_count(std::span<const std::size_t> layer_sizes) noexcept {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    total += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
  }
  return total;
}

Batch::Batch(Matrix f, std::vector<Label> l) : features(std::move(f)), labels(std::move(l)) {
  if (labels.empty()) throw std::invalid_argument("batch must hold at least one sample");
  if (labels.size() != features.rows()) {
    throw DimensionError("batch has " + std::to_string(features.rows()) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  }
}

Gradients Gradients::zeros_like(const MlpModel& model, std::size_t sample_count) {
  Gradients g;
  for (std::size_t l = 0; l < model.num_weight_layers(); ++l) {
    g.weights.emplace_back(model.weights(l).rows(), model.weights(l).cols());
    g.biases.emplace_back(model.biases(l).size(), 0.0);
  }
  g.sample_count = sample_count;
  return g;
}

std::vector<double> Gradients::flatten() const {
  std::vector<double> out;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    out.insert(out.end(), weights[l].data().begin(), weights[l].data().end());
    out.insert(out.end(), biases[l].begin(), biases[l].end());
  }
  return out;
}

Gradients Gradients::unflatten(std::span<const std::size_t> layer_sizes, std::span<const double> flat,
                               std::size_t sample_count) {
  check_layers(layer_sizes);
  if (flat.size() != MlpModel::param_count(layer_sizes)) {
    throw DimensionError("gradient vector length " + std::to_string(flat.size()) + " != " +
                         std::to_string(MlpModel::param_count(layer_sizes)));
  }
  Gradients g;
  g.sample_count = sample_count;
  std::size_t pos = 0;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const std::size_t rows = layer_sizes[l];
    const std::size_t cols = layer_sizes[l + 1];
    g.weights.emplace_back(rows, cols,
                           std::vector<double>(flat.begin() + pos, flat.begin() + pos + rows * cols));
    pos += rows * cols;
    g.biases.emplace_back(flat.begin() + pos, flat.begin() + pos + cols);
    pos += cols;
  }
  return g;
}

MlpModel init_model(std::vector<std::size_t> layer_sizes, Activation hidden_activation,
                    std::uint64_t seed) {
  MlpModel model(std::move(layer_sizes), hidden_activation);
  Rng rng(seed);
  for (std::size_t l = 0; l < model.num_weight_layers(); ++l) {
    Matrix& w = model.weights(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (double& v : w.data()) v = rng.uniform(-limit, limit);
  }
  return model;
}

Matrix forward(const MlpModel& model, const Matrix& features) {
  Matrix out = std::move(run_layers(model, features, false).acts.back());
  softmax_rows(out);
  return out;
}

double loss(const MlpModel& model, const Batch& batch) {
  check_labels(batch.labels, batch.features.rows(), model.num_classes());
  return evaluate(model, batch).mean_loss;
}

Gradients gradient(const MlpModel& model, const Batch& batch) {
  check_labels(batch.labels, batch.features.rows(), model.num_classes());
  const std::size_t n = batch.size();
  const std::size_t layers = model.num_weight_layers();
  Pass pass = run_layers(model, batch.features, true);

  // delta = dLoss/dz for the current layer, already divided by n.
  Matrix delta = pass.acts.back();
  softmax_rows(delta);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = delta.row(i);
    r[batch.labels[i]] -= 1.0;
    for (double& v : r) v *= inv_n;
  }

  Gradients g = Gradients::zeros_like(model, n);
  for (std::size_t l = layers; l-- > 0;) {
    const Matrix& input = pass.acts[l];
    Matrix& gw = g.weights[l];
    std::vector<double>& gb = g.biases[l];
    const std::size_t fan_in = gw.rows();
    const std::size_t fan_out = gw.cols();
    for (std::size_t i = 0; i < n; ++i) {
      const double* di = delta.row(i).data();
      const double* xi = input.row(i).data();
      for (std::size_t k = 0; k < fan_in; ++k) {
        const double xv = xi[k];
        double* gk = gw.row(k).data();
        for (std::size_t j = 0; j < fan_out; ++j) gk[j] += xv * di[j];
      }
      for (std::size_t j = 0; j < fan_out; ++j) gb[j] += di[j];
    }
    if (l == 0) break;

    const Matrix& w = model.weights(l);
    const Matrix& z_prev = pass.pre[l - 1];
    Matrix next(n, fan_in);
    for (std::size_t i = 0; i < n; ++i) {
      const double* di = delta.row(i).data();
      const double* ai = input.row(i).data();
      const double* zi = z_prev.row(i).data();
      double* ni = next.row(i).data();
      for (std::size_t k = 0; k < fan_in; ++k) {
        const double* wk = w.row(k).data();
        double s = 0.0;
        for (std::size_t j = 0; j < fan_out; ++j) s += di[j] * wk[j];
        ni[k] = s * activate_grad(model.hidden_activation(), zi[k], ai[k]);
      }
    }
    delta = std::move(next);
  }
  return g;
}

MlpModel sgd_step(const MlpModel& model, const Gradients& grads, double learning_rate) {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning rate must be finite and non-negative");
  }
  check_shapes(model, grads);
  MlpModel next = model;
  for (std::size_t l = 0; l < model.num_weight_layers(); ++l) {
    auto w = next.weights(l).data();
    const auto gw = grads.weights[l].data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= learning_rate * gw[i];
    auto& b = next.biases(l);
    for (std::size_t j = 0; j < b.size(); ++j) b[j] -= learning_rate * grads.biases[l][j];
    if (!next.weights(l).all_finite() ||
        !std::all_of(b.begin(), b.end(), [](double v) { return std::isfinite(v); })) {
      throw NumericError("sgd step produced non-finite parameters at layer " + std::to_string(l));
    }
  }
  return next;
}

Evaluation evaluate(const MlpModel& model, const Matrix& features, std::span<const Label> labels) {
  if (labels.empty()) throw std::invalid_argument("cannot evaluate on an empty dataset");
  check_labels(labels, features.rows(), model.num_classes());
  const Matrix logits = std::move(run_layers(model, features, false).acts.back());
  std::size_t correct = 0;
  double total_loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto r = logits.row(i);
    // max_element returns the first maximum, i.e. the lowest index on ties.
    const auto best = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    if (best == labels[i]) ++correct;
    total_loss += cross_entropy(r, labels[i]);
  }
  const double n = static_cast<double>(labels.size());
  return {static_cast<double>(correct) / n, total_loss / n};
}

std::vector<double> serialize_params(const MlpModel& model) {
  std::vector<double> out;
  out.reserve(model.param_count());
  for (std::size_t l = 0; l < model.num_weight_layers(); ++l) {
    const auto w = model.weights(l).data();
    out.insert(out.end(), w.begin(), w.end());
    out.insert(out.end(), model.biases(l).begin(), model.biases(l).end());
  }
  return out;
}

MlpModel deserialize_params(std::vector<std::size_t> layer_sizes, Activation hidden_activation,
                            std::span<const double> params) {
  check_layers(layer_sizes);
  const std::size_t expected = MlpModel::param_count(layer_sizes);
  if (params.size() != expected) {
    throw DimensionError("parameter vector length " + std::to_string(params.size()) + " != " +
                         std::to_string(expected));
  }
  MlpModel model(std::move(layer_sizes), hidden_activation);
  std::size_t pos = 0;
  for (std::size_t l = 0; l < model.num_weight_layers(); ++l) {
    auto w = model.weights(l).data();
    std::copy_n(params.begin() + pos, w.size(), w.begin());
    pos += w.size();
    auto& b = model.biases(l);
    std::copy_n(params.begin() + pos, b.size(), b.begin());
    pos += b.size();
  }
  return model;
}

bool bitwise_equal(const MlpModel& a, const MlpModel& b) {
  if (a.layer_sizes() != b.layer_sizes() || a.hidden_activation() != b.hidden_activation()) {
    return false;
  }
  const auto pa = serialize_params(a);
  const auto pb = serialize_params(b);
  return std::equal(pa.begin(), pa.end(), pb.begin(), [](double x, double y) {
    return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
  });
}

}  // namespace continuum::nn
