#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "permakey/layers.hpp"

namespace permakey {

inline constexpr int64_t kStateDim = 128;
inline constexpr int64_t kGraphWidth = 64;

// Complete directed graph without self-edges. Edge e has sender
// senders[e] and receiver receivers[e]; edges are ordered by (sender,
// receiver). nodes [..., K, D], edges [..., K*(K-1), E].
struct GraphState {
  torch::Tensor nodes;
  torch::Tensor edges;
  torch::Tensor senders;    // int64 [K*(K-1)]
  torch::Tensor receivers;  // int64 [K*(K-1)]

  int64_t num_nodes() const { return nodes.size(-2); }
  static GraphState complete(const torch::Tensor& nodes, int64_t edge_dim);
  // Index of edge (sender, receiver) in the canonical ordering.
  static int64_t edge_index(int64_t k, int64_t sender, int64_t receiver);
};

// e'_ij = f_e([v_i, v_j, e_ij]); agg_i = sum_j e'_ji; v'_i = f_v([v_i, agg_i]).
class InteractionNetworkImpl : public torch::nn::Module {
 public:
  InteractionNetworkImpl(int64_t node_dim, int64_t edge_dim,
                         int64_t hidden = kGraphWidth);
  GraphState forward(const GraphState& g);

  Mlp edge_fn{nullptr};
  Mlp node_fn{nullptr};

 private:
  int64_t hidden_;
};
TORCH_MODULE(InteractionNetwork);

GraphState interaction_step(InteractionNetwork& net, const GraphState& g);

// Common interface of the per-step state encoders used by the agent.
class StateEncoderImpl : public torch::nn::Module {
 public:
  // obs [B, ...per-step observation shape] -> [B, output_dim()]
  virtual torch::Tensor forward(const torch::Tensor& obs) = 0;
  virtual int64_t output_dim() const = 0;
};

// Passes flat observations through unchanged (oracle embeddings).
class IdentityEncoderImpl : public StateEncoderImpl {
 public:
  explicit IdentityEncoderImpl(int64_t dim) : dim_(dim) {}
  torch::Tensor forward(const torch::Tensor& obs) override;
  int64_t output_dim() const override { return dim_; }

 private:
  int64_t dim_;
};

// Conv-BN-ReLU stack over the superposed masked feature map, flatten, Dense-128
// ReLU. obs [B, C, side, side].
class CnnKeypointEncoderImpl : public StateEncoderImpl {
 public:
  CnnKeypointEncoderImpl(int64_t channels, int64_t side,
                         ConvStackConfig conv = {{3, 3, 3, 3},
                                                 {128, 128, 128, 128},
                                                 {1, 1, 2, 1}});
  torch::Tensor forward(const torch::Tensor& obs) override;
  int64_t output_dim() const override { return kStateDim; }

 private:
  int64_t channels_;
  int64_t side_;
  ConvEncoder conv_{nullptr};
  torch::nn::Linear dense_{nullptr};
};

// 2 -> 64 -> 64, linear output.
class PositionalEmbeddingImpl : public torch::nn::Module {
 public:
  PositionalEmbeddingImpl();
  torch::Tensor forward(const torch::Tensor& centers);

  Mlp mlp{nullptr};
};
TORCH_MODULE(PositionalEmbedding);

// Encode-Process-Decode over the keypoint graph. obs [B, K, C + 2]: the
// mask-averaged keypoint feature followed by its center (x, y).
class GnnKeypointEncoderImpl : public StateEncoderImpl {
 public:
  GnnKeypointEncoderImpl(int64_t num_keypoints, int64_t feature_dim);
  torch::Tensor forward(const torch::Tensor& obs) override;
  int64_t output_dim() const override { return kStateDim; }

  // Same computation from separate inputs: features [..., K, C], centers
  // [..., K, 2].
  torch::Tensor encode(const torch::Tensor& features,
                       const torch::Tensor& centers);

  PositionalEmbedding positional{nullptr};
  Mlp node_encoder{nullptr};
  Mlp edge_encoder{nullptr};
  InteractionNetwork processor{nullptr};
  Mlp node_decoder{nullptr};
  Mlp readout{nullptr};

 private:
  int64_t num_keypoints_;
  int64_t feature_dim_;
};

enum class EncoderKind { kIdentity, kCnn, kGnn };
EncoderKind encoder_kind_from_string(const std::string& name);
std::string to_string(EncoderKind kind);

// Type-erased holder for the encoder used inside the agent.
using StateEncoder = std::shared_ptr<StateEncoderImpl>;

// obs_shape is the per-step observation shape: [D] for identity,
// [C, side, side] for cnn, [K, C + 2] for gnn.
StateEncoder make_state_encoder(EncoderKind kind,
                                const std::vector<int64_t>& obs_shape);

}  // namespace permakey
