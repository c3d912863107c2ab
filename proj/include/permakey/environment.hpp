#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <optional>
#include <random>

#include "permakey/frame.hpp"

namespace permakey {

struct StepResult {
  torch::Tensor observation;
  double reward = 0.0;
  bool done = false;
};

// A reset/step environment. Visual environments emit float CHW images in
// [0,1]; other environments (e.g. tabular MDPs) emit arbitrary vectors.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual torch::Tensor reset() = 0;
  // Throws IllegalTransitionError when called after an episode ended.
  virtual StepResult step(int64_t action) = 0;
  virtual int64_t num_actions() const = 0;
  virtual void seed(uint64_t seed) = 0;

  // False once the environment cannot start any further episode.
  virtual bool can_reset() const { return true; }
  virtual std::optional<SpriteScene> ground_truth() const {
    return std::nullopt;
  }
};

using ActionSampler =
    std::function<int64_t(const torch::Tensor& observation, std::mt19937_64&)>;

ActionSampler uniform_random_policy(int64_t num_actions);

}  // namespace permakey
