#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "permakey/frame.hpp"
#include "permakey/layers.hpp"
#include "permakey/training.hpp"

namespace permakey {

// Normalized coordinates of pixel centers along one axis of length n:
// -1 + (2i + 1) / n, so the grid is symmetric about 0.
torch::Tensor pixel_center_coordinates(int64_t n,
                                       torch::TensorOptions options = {});

// Spatial-softmax expectation. heatmaps: [..., K, H, W] -> [..., K, 2] as
// (x, y) with x rightward and y downward, both in [-1, 1].
torch::Tensor heatmaps_to_centers(const torch::Tensor& heatmaps);

// exp(-|p - mu|^2 / (2 sigma^2)) on the normalized pixel grid.
// centers: [..., K, 2] -> [..., K, height, width]. ParameterError if sigma <= 0.
torch::Tensor gaussian_maps(const torch::Tensor& centers, double sigma,
                            int64_t height, int64_t width);

struct KeypointSet {
  torch::Tensor centers;  // [K, 2]
  torch::Tensor masks;    // [K, H, W]
  double sigma = 0.1;

  static KeypointSet render(const torch::Tensor& centers, double sigma,
                            int64_t side);
  int64_t size() const { return centers.size(0); }
};

struct KeypointFeatures {
  torch::Tensor vectors;     // [(N,) K, C], mask-weighted feature averages
  torch::Tensor superposed;  // [(N,) C, H, W], sum_k mask_k * features
};

// features: [(N,) C, H, W]; masks: [(N,) K, H, W] on the same grid.
KeypointFeatures keypoint_features(const torch::Tensor& features,
                                   const torch::Tensor& masks);

struct PointNetConfig {
  int64_t in_channels = 2;  // M fused error-map channels
  int64_t input_size = kFrameSize;
  ConvStackConfig encoder;
  int64_t num_keypoints = 10;
  double sigma = 0.1;
  double regressor_gain = 3.0;  // scales the default init of the 1x1 regressor

  nlohmann::json to_json() const;
  static PointNetConfig from_json(const nlohmann::json& j);
};

// Encoder (VAE encoder geometry) -> 1x1 regressor to K heatmaps -> centers
// -> Gaussian windows at the bottleneck resolution -> transposed decoder
// (no batch norm) reconstructing the M error-map channels.
class PointNetImpl : public torch::nn::Module {
 public:
  explicit PointNetImpl(PointNetConfig config);

  struct Output {
    torch::Tensor heatmaps;        // [N, K, h, w]
    torch::Tensor centers;         // [N, K, 2]
    torch::Tensor gaussians;       // [N, K, h, w]
    torch::Tensor reconstruction;  // [N, M, size, size]
  };
  Output forward(const torch::Tensor& maps);
  torch::Tensor centers(const torch::Tensor& maps);

  const PointNetConfig& config() const { return config_; }

 private:
  PointNetConfig config_;
  int64_t bottleneck_side_;
  ConvEncoder encoder_{nullptr};
  SameConv2d regressor_{nullptr};
  ConvDecoder decoder_{nullptr};
};
TORCH_MODULE(PointNet);

// Mean squared reconstruction error over M*H*W (and batch); target is
// treated as a constant.
torch::Tensor pointnet_loss(const torch::Tensor& reconstruction,
                            const torch::Tensor& target);

TrainHistory train_pointnet(PointNet& net, const torch::Tensor& train_maps,
                            const torch::Tensor& val_maps,
                            const OptimSchedule& schedule);

// Mean loss over `maps` in eval mode.
double evaluate_pointnet(PointNet& net, const torch::Tensor& maps);
torch::Tensor infer_centers(PointNet& net, const torch::Tensor& maps,
                            int64_t chunk = 64);

void save_pointnet(const std::filesystem::path& path, PointNet& net);
PointNet load_pointnet(const std::filesystem::path& path);

}  // namespace permakey
