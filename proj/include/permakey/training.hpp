#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace permakey {

// Adam with exponentially decayed learning rate, minibatch epochs and early
// stopping on validation loss.
struct OptimSchedule {
  double learning_rate = 2e-4;
  double decay_rate = 0.85;
  int64_t decay_steps = 10000;
  int64_t batch_size = 32;
  int64_t epochs = 100;
  int64_t patience = 10;
  // Caps the minibatches per epoch (0: full pass over the training set).
  int64_t max_batches_per_epoch = 0;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static OptimSchedule from_json(const nlohmann::json& j);
};

// lr * decay_rate^(step / decay_steps), continuous decay.
double scheduled_learning_rate(const OptimSchedule& schedule, int64_t step);

struct TrainHistory {
  std::vector<double> train_loss;  // per epoch, mean over minibatches
  std::vector<double> val_loss;    // per epoch
  int64_t best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int64_t steps = 0;
  bool early_stopped = false;

  nlohmann::json to_json() const;
};

using BatchLossFn = std::function<torch::Tensor(const std::vector<int64_t>&)>;
using ValidationFn = std::function<double()>;

// Runs the schedule over `n_train` examples. Module is put in train mode for
// steps and eval mode for validation; the best-validation weights are
// restored at the end.
TrainHistory fit(torch::nn::Module& module, int64_t n_train,
                 const OptimSchedule& schedule, const BatchLossFn& batch_loss,
                 const ValidationFn& validation_loss,
                 const std::string& log_name = "");

// One Adam step on `loss` for the given optimizer; returns the loss value.
double optimizer_step(torch::optim::Optimizer& opt, const torch::Tensor& loss);

// Checkpoint archives: module parameters + buffers (incl. BatchNorm running
// statistics) and a JSON config string in one file.
void save_checkpoint(const std::filesystem::path& path,
                     torch::nn::Module& module, const nlohmann::json& config);
nlohmann::json read_checkpoint_config(const std::filesystem::path& path);
void load_checkpoint_weights(const std::filesystem::path& path,
                             torch::nn::Module& module);

}  // namespace permakey
