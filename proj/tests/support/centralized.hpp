#pragma once

// Single-process full-batch gradient descent used as the reference for
// distributed training.

#include <vector>

#include "continuum/datasets/dataset.hpp"
#include "continuum/nncore/mlp.hpp"

namespace oracle {

struct CentralizedRun {
  continuum::nn::MlpModel model;
  std::vector<double> loss;
  std::vector<double> accuracy;
};

inline CentralizedRun centralized_training(const continuum::data::Dataset& ds, std::vector<std::size_t> layers,
                                           continuum::nn::Activation act, double lr, std::size_t epochs,
                                           std::uint64_t seed) {
  using namespace continuum;
  CentralizedRun run{nn::init_model(std::move(layers), act, seed), {}, {}};
  const nn::Batch batch = ds.as_batch();
  for (std::size_t e = 0; e < epochs; ++e) {
    run.model = nn::sgd_step(run.model, nn::gradient(run.model, batch), lr);
    const auto ev = data::evaluate(run.model, ds);
    run.loss.push_back(ev.mean_loss);
    run.accuracy.push_back(ev.accuracy);
  }
  return run;
}

}  // namespace oracle
