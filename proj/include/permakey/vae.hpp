#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "permakey/dataset.hpp"
#include "permakey/frame.hpp"
#include "permakey/layers.hpp"
#include "permakey/training.hpp"

namespace permakey {

struct VaeConfig {
  int64_t in_channels = 3;
  int64_t input_size = kFrameSize;
  ConvStackConfig encoder;  // kernels [4,3,3,3], filters [32,64,64,128], strides [1,2,2,1]
  int64_t latent_dim = 128;

  nlohmann::json to_json() const;
  static VaeConfig from_json(const nlohmann::json& j);
};

// Per-layer encoder activations. Batched: layers[l] is [N, C_l, H_l, W_l].
struct FeatureStack {
  std::vector<torch::Tensor> layers;
};

struct PosteriorParams {
  torch::Tensor mean;    // [N, d_z]
  torch::Tensor logvar;  // [N, d_z]
};

struct EncodeResult {
  FeatureStack features;
  PosteriorParams posterior;
};

struct ElboTerms {
  torch::Tensor loss;            // reconstruction + kl, batch mean
  torch::Tensor reconstruction;  // 0.5 * sum of squared pixel errors, batch mean
  torch::Tensor kl;              // batch mean
  torch::Tensor pixel_mse;       // mean squared error per pixel
};

class VaeImpl : public torch::nn::Module {
 public:
  explicit VaeImpl(VaeConfig config);

  // x: [N, in_channels, input_size, input_size].
  EncodeResult encode(const torch::Tensor& x);
  // Encoder activations up to `last_layer` (skips the latent head).
  FeatureStack features(const torch::Tensor& x, size_t last_layer);
  // z: [N, latent_dim] -> [N, in_channels, input_size, input_size] in (0,1).
  torch::Tensor decode(const torch::Tensor& z);

  const VaeConfig& config() const { return config_; }
  ConvEncoder& encoder() { return encoder_; }

 private:
  void check_input(const torch::Tensor& x) const;

  VaeConfig config_;
  int64_t bottleneck_side_;
  ConvEncoder encoder_{nullptr};
  torch::nn::Linear posterior_head_{nullptr};
  torch::nn::Linear latent_projection_{nullptr};
  ConvDecoder decoder_{nullptr};
};
TORCH_MODULE(Vae);

// Single-frame wrappers; the module's current mode (train/eval) applies.
EncodeResult encode(Vae& vae, const Frame& frame);
Frame decode(Vae& vae, const torch::Tensor& z);

// Closed-form KL(N(mean, exp(logvar)) || N(0, I)) per row: [N].
torch::Tensor kl_divergence(const torch::Tensor& mean,
                            const torch::Tensor& logvar);

// Negative ELBO with one reparameterized sample per image; `noise` is the
// standard-normal draw ([N, d_z]).
ElboTerms elbo_loss(Vae& vae, const torch::Tensor& batch,
                    const torch::Tensor& noise);
ElboTerms elbo_loss(Vae& vae, const torch::Tensor& batch,
                    at::Generator& generator);

struct VaeTrainResult {
  TrainHistory history;
  double train_pixel_mse = 0.0;  // logged on the training set after fitting
};

VaeTrainResult train_vae(Vae& vae, const FrameDataset& train,
                         const FrameDataset& val,
                         const OptimSchedule& schedule);

void save_vae(const std::filesystem::path& path, Vae& vae,
              const nlohmann::json& extra = nlohmann::json::object());
Vae load_vae(const std::filesystem::path& path);

}  // namespace permakey
