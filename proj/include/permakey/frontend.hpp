#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "permakey/keypoint_encoders.hpp"
#include "permakey/lspn.hpp"
#include "permakey/pointnet.hpp"
#include "permakey/rl_agent.hpp"
#include "permakey/transporter.hpp"
#include "permakey/vae.hpp"

namespace permakey {

// Frozen keypoint pipeline state shared by the frontends.
struct PermaKeyModels {
  Vae vae{nullptr};
  LspnBank lspn{nullptr};
  PointNet pointnet{nullptr};
  // VAE encoder layer whose activations are pooled under the keypoint masks.
  int64_t feature_layer = 2;
};

// Keypoint centers [N, K, 2] for frames [N, 3, 84, 84].
torch::Tensor permakey_centers(PermaKeyModels& models, const torch::Tensor& frames);

// Observation for the agent from a single frame [3, 84, 84]:
// gnn -> [K, C + 2] (mask-averaged features, then centers);
// cnn -> [C, h, w] superposed masked features.
Frontend permakey_frontend(PermaKeyModels models, EncoderKind kind);
Frontend transporter_frontend(Transporter model, EncoderKind kind);

// Shared tail of both frontends.
torch::Tensor keypoint_observation(const torch::Tensor& features,
                                   const torch::Tensor& centers, double sigma,
                                   EncoderKind kind);

}  // namespace permakey
