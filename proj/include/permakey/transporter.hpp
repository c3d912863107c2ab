#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <random>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "permakey/dataset.hpp"
#include "permakey/layers.hpp"
#include "permakey/training.hpp"

namespace permakey {

struct TransporterConfig {
  int64_t input_size = kFrameSize;
  ConvStackConfig features{{3, 3, 3, 3}, {16, 16, 32, 32}, {1, 1, 2, 1}};
  int64_t num_keypoints = 10;
  double sigma = 0.1;
  int64_t min_offset = 1;
  int64_t max_offset = 20;

  nlohmann::json to_json() const;
  static TransporterConfig from_json(const nlohmann::json& j);
};

// Union of K Gaussian maps: 1 - prod_k (1 - g_k). [N, K, h, w] -> [N, 1, h, w]
torch::Tensor combine_heatmaps(const torch::Tensor& gaussians);

// (1 - hs)(1 - ht) * phi_s + ht * phi_t, broadcasting heatmaps over channels.
torch::Tensor transport(const torch::Tensor& phi_source,
                        const torch::Tensor& phi_target,
                        const torch::Tensor& heat_source,
                        const torch::Tensor& heat_target);

class TransporterImpl : public torch::nn::Module {
 public:
  explicit TransporterImpl(TransporterConfig config);

  struct Keypoints {
    torch::Tensor logits;     // [N, K, h, w]
    torch::Tensor centers;    // [N, K, 2]
    torch::Tensor gaussians;  // [N, K, h, w]
  };
  torch::Tensor features(const torch::Tensor& frames);
  Keypoints keypoints(const torch::Tensor& frames);

  struct Output {
    Keypoints source;
    Keypoints target;
    torch::Tensor transported;     // [N, C, h, w]
    torch::Tensor reconstruction;  // [N, 3, size, size]
  };
  // Source keypoints are detached from the graph; the source feature branch
  // and the whole target branch receive gradients.
  Output forward(const torch::Tensor& source, const torch::Tensor& target);

  const TransporterConfig& config() const { return config_; }

 private:
  TransporterConfig config_;
  int64_t feature_side_;
  ConvEncoder phi_{nullptr};
  ConvEncoder psi_{nullptr};
  SameConv2d regressor_{nullptr};
  ConvDecoder refine_{nullptr};
};
TORCH_MODULE(Transporter);

// Mean squared pixel error.
torch::Tensor transporter_loss(const torch::Tensor& reconstruction,
                               const torch::Tensor& target);

// For each source index, a target index in the same episode at a temporal
// offset drawn uniformly from [min_offset, max_offset] (forward or backward,
// restricted to offsets that stay inside the episode). Frames whose episode
// has a single frame are skipped.
std::vector<std::pair<int64_t, int64_t>> sample_frame_pairs(
    const FrameDataset& ds, const std::vector<int64_t>& sources,
    int64_t min_offset, int64_t max_offset, std::mt19937_64& rng);

double evaluate_transporter(Transporter& net, const FrameDataset& ds,
                            const std::vector<std::pair<int64_t, int64_t>>& pairs);

TrainHistory train_transporter(Transporter& net, const FrameDataset& train,
                               const FrameDataset& val,
                               const OptimSchedule& schedule);

// Keypoint centers [N, K, 2] for every frame of `ds`.
torch::Tensor transporter_centers(Transporter& net, const torch::Tensor& frames,
                                  int64_t chunk = 64);

void save_transporter(const std::filesystem::path& path, Transporter& net);
Transporter load_transporter(const std::filesystem::path& path);

}  // namespace permakey
