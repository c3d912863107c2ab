#include "permakey/keypoint_encoders.hpp"

#include "permakey/errors.hpp"
#include "permakey/tensor_utils.hpp"

namespace permakey {

GraphState GraphState::complete(const torch::Tensor& nodes, int64_t edge_dim) {
  if (nodes.dim() < 2) throw ShapeError("nodes must be [..., K, D]");
  const int64_t k = nodes.size(-2);
  std::vector<int64_t> s, r;
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < k; ++j)
      if (i != j) {
        s.push_back(i);
        r.push_back(j);
      }
  auto edge_shape = nodes.sizes().vec();
  edge_shape[edge_shape.size() - 2] = k * (k - 1);
  edge_shape.back() = edge_dim;
  return {nodes, torch::zeros(edge_shape, nodes.options()),
          torch::tensor(s, torch::kLong), torch::tensor(r, torch::kLong)};
}

int64_t GraphState::edge_index(int64_t k, int64_t sender, int64_t receiver) {
  if (sender == receiver || sender < 0 || receiver < 0 || sender >= k ||
      receiver >= k)
    throw PreconditionError("no such edge");
  return sender * (k - 1) + (receiver < sender ? receiver : receiver - 1);
}

InteractionNetworkImpl::InteractionNetworkImpl(int64_t node_dim,
                                               int64_t edge_dim, int64_t hidden)
    : hidden_(hidden) {
  edge_fn = register_module(
      "edge_fn", Mlp(std::vector<int64_t>{2 * node_dim + edge_dim, hidden, hidden},
                     OutputActivation::kRelu));
  node_fn = register_module(
      "node_fn", Mlp(std::vector<int64_t>{node_dim + hidden, hidden, hidden},
                     OutputActivation::kRelu));
}

GraphState InteractionNetworkImpl::forward(const GraphState& g) {
  const int64_t node_axis = g.nodes.dim() - 2;
  auto v_send = g.nodes.index_select(node_axis, g.senders);
  auto v_recv = g.nodes.index_select(node_axis, g.receivers);
  auto edges = edge_fn->forward(torch::cat({v_send, v_recv, g.edges}, -1));
  auto agg_shape = g.nodes.sizes().vec();
  agg_shape.back() = hidden_;
  auto agg = torch::zeros(agg_shape, g.nodes.options())
                 .index_add(node_axis, g.receivers, edges);
  auto nodes = node_fn->forward(torch::cat({g.nodes, agg}, -1));
  return {nodes, edges, g.senders, g.receivers};
}

GraphState interaction_step(InteractionNetwork& net, const GraphState& g) {
  return net->forward(g);
}

torch::Tensor IdentityEncoderImpl::forward(const torch::Tensor& obs) {
  if (obs.dim() != 2 || obs.size(1) != dim_)
    throw ShapeError("identity encoder expects [B, " + std::to_string(dim_) +
                     "], got " + shape_string(obs.sizes()));
  return obs;
}

CnnKeypointEncoderImpl::CnnKeypointEncoderImpl(int64_t channels, int64_t side,
                                               ConvStackConfig conv)
    : channels_(channels), side_(side) {
  const int64_t out_side = conv.spatial_sizes(side).back();
  const int64_t flat = conv.filters.back() * out_side * out_side;
  conv_ = register_module("conv", ConvEncoder(channels, conv));
  dense_ = register_module("dense", torch::nn::Linear(flat, kStateDim));
}

torch::Tensor CnnKeypointEncoderImpl::forward(const torch::Tensor& obs) {
  if (obs.dim() != 4 || obs.size(1) != channels_ || obs.size(2) != side_ ||
      obs.size(3) != side_)
    throw ShapeError("CNN keypoint encoder expects [B, " +
                     std::to_string(channels_) + ", " + std::to_string(side_) +
                     ", " + std::to_string(side_) + "], got " +
                     shape_string(obs.sizes()));
  return torch::relu(dense_->forward(conv_->forward(obs).back().flatten(1)));
}

PositionalEmbeddingImpl::PositionalEmbeddingImpl() {
  mlp = register_module(
      "mlp", Mlp(std::vector<int64_t>{2, kGraphWidth, kGraphWidth},
                 OutputActivation::kLinear));
}

torch::Tensor PositionalEmbeddingImpl::forward(const torch::Tensor& centers) {
  if (centers.size(-1) != 2) throw ShapeError("centers must be [..., 2]");
  return mlp->forward(centers);
}

GnnKeypointEncoderImpl::GnnKeypointEncoderImpl(int64_t num_keypoints,
                                               int64_t feature_dim)
    : num_keypoints_(num_keypoints), feature_dim_(feature_dim) {
  const int64_t w = kGraphWidth;
  positional = register_module("positional", PositionalEmbedding());
  node_encoder = register_module(
      "node_encoder",
      Mlp(std::vector<int64_t>{feature_dim + w, w, w}, OutputActivation::kRelu));
  edge_encoder = register_module(
      "edge_encoder", Mlp(std::vector<int64_t>{w, w, w}, OutputActivation::kRelu));
  processor = register_module("processor", InteractionNetwork(w, w, w));
  node_decoder = register_module(
      "node_decoder", Mlp(std::vector<int64_t>{w, w, w}, OutputActivation::kRelu));
  readout = register_module(
      "readout", Mlp(std::vector<int64_t>{num_keypoints * w, kStateDim, kStateDim},
                     OutputActivation::kRelu));
}

torch::Tensor GnnKeypointEncoderImpl::encode(const torch::Tensor& features,
                                             const torch::Tensor& centers) {
  if (features.dim() < 2 || features.size(-2) != num_keypoints_ ||
      features.size(-1) != feature_dim_)
    throw ShapeError("GNN encoder configured for K=" +
                     std::to_string(num_keypoints_) + ", C=" +
                     std::to_string(feature_dim_) + " got features " +
                     shape_string(features.sizes()));
  if (centers.sizes().slice(0, centers.dim() - 1) !=
      features.sizes().slice(0, features.dim() - 1))
    throw ShapeError("keypoint centers " + shape_string(centers.sizes()) +
                     " do not match features " + shape_string(features.sizes()));
  auto nodes = node_encoder->forward(
      torch::cat({features, positional->forward(centers)}, -1));
  auto g = GraphState::complete(nodes, kGraphWidth);
  g.edges = edge_encoder->forward(g.edges);
  g = processor->forward(g);
  auto decoded = node_decoder->forward(g.nodes);
  return readout->forward(decoded.flatten(-2));
}

torch::Tensor GnnKeypointEncoderImpl::forward(const torch::Tensor& obs) {
  if (obs.dim() != 3 || obs.size(-1) != feature_dim_ + 2)
    throw ShapeError("GNN encoder expects [B, K, C + 2], got " +
                     shape_string(obs.sizes()));
  return encode(obs.slice(-1, 0, feature_dim_),
                obs.slice(-1, feature_dim_, feature_dim_ + 2));
}

EncoderKind encoder_kind_from_string(const std::string& name) {
  if (name == "identity") return EncoderKind::kIdentity;
  if (name == "cnn") return EncoderKind::kCnn;
  if (name == "gnn") return EncoderKind::kGnn;
  throw ConfigError("unknown encoder '" + name + "' (identity, cnn, gnn)");
}

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kIdentity: return "identity";
    case EncoderKind::kCnn: return "cnn";
    case EncoderKind::kGnn: return "gnn";
  }
  return "?";
}

StateEncoder make_state_encoder(EncoderKind kind,
                                const std::vector<int64_t>& obs_shape) {
  switch (kind) {
    case EncoderKind::kIdentity:
      if (obs_shape.size() != 1) throw ShapeError("identity obs must be [D]");
      return std::make_shared<IdentityEncoderImpl>(obs_shape[0]);
    case EncoderKind::kCnn:
      if (obs_shape.size() != 3 || obs_shape[1] != obs_shape[2])
        throw ShapeError("cnn obs must be [C, side, side]");
      return std::make_shared<CnnKeypointEncoderImpl>(obs_shape[0], obs_shape[1]);
    case EncoderKind::kGnn:
      if (obs_shape.size() != 2 || obs_shape[1] < 3)
        throw ShapeError("gnn obs must be [K, C + 2]");
      return std::make_shared<GnnKeypointEncoderImpl>(obs_shape[0],
                                                      obs_shape[1] - 2);
  }
  throw ConfigError("unknown encoder kind");
}

}  // namespace permakey
