#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace permakey::test_support {

struct GradCheckResult {
  int64_t checked = 0;
  double max_relative_error = 0.0;
};

// Compares autograd against central differences on `samples` scalar entries
// drawn uniformly from `params`. The loss closure must be deterministic and
// everything must be float64.
inline GradCheckResult finite_difference_check(
    const std::vector<torch::Tensor>& params,
    const std::function<torch::Tensor()>& loss_fn, int64_t samples,
    uint64_t seed, double h = 1e-5, double floor = 1e-6) {
  for (const auto& p : params)
    if (p.grad().defined()) p.grad().zero_();
  loss_fn().backward();
  std::vector<std::pair<size_t, int64_t>> pool;
  for (size_t i = 0; i < params.size(); ++i)
    for (int64_t j = 0; j < params[i].numel(); ++j) pool.emplace_back(i, j);
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min<size_t>(pool.size(), static_cast<size_t>(samples)));

  GradCheckResult out;
  torch::NoGradGuard no_grad;
  for (auto [i, j] : pool) {
    auto flat = params[i].view({-1});
    auto analytic = params[i].grad().view({-1})[j].item<double>();
    const double orig = flat[j].item<double>();
    flat[j] = orig + h;
    const double up = loss_fn().item<double>();
    flat[j] = orig - h;
    const double down = loss_fn().item<double>();
    flat[j] = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    out.max_relative_error =
        std::max(out.max_relative_error, std::abs(analytic - numeric) / denom);
    ++out.checked;
  }
  return out;
}

}  // namespace permakey::test_support
