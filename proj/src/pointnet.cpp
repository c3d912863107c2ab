#include "permakey/pointnet.hpp"

#include "permakey/dataset.hpp"
#include "permakey/errors.hpp"
#include "permakey/tensor_utils.hpp"

namespace permakey {

namespace {

nlohmann::json conv_json(const ConvStackConfig& c) {
  return {{"kernels", c.kernels}, {"filters", c.filters}, {"strides", c.strides}};
}

ConvStackConfig conv_from(const nlohmann::json& j) {
  ConvStackConfig c;
  c.kernels = j.at("kernels").get<std::vector<int64_t>>();
  c.filters = j.at("filters").get<std::vector<int64_t>>();
  c.strides = j.at("strides").get<std::vector<int64_t>>();
  return c;
}

}  // namespace

torch::Tensor pixel_center_coordinates(int64_t n, torch::TensorOptions options) {
  auto opts = options.dtype(options.has_dtype() ? options.dtype()
                                                : caffe2::TypeMeta::Make<float>());
  return torch::arange(n, opts).mul(2.0).add(1.0).div(static_cast<double>(n))
      .sub(1.0);
}

torch::Tensor heatmaps_to_centers(const torch::Tensor& heatmaps) {
  if (heatmaps.dim() < 3) throw ShapeError("heatmaps must be [..., K, H, W]");
  const int64_t h = heatmaps.size(-2), w = heatmaps.size(-1);
  auto flat = heatmaps.flatten(-2);
  auto probs = torch::softmax(flat, -1).unflatten(-1, {h, w});
  auto ys = pixel_center_coordinates(h, heatmaps.options());
  auto xs = pixel_center_coordinates(w, heatmaps.options());
  auto x = (probs.sum(-2) * xs).sum(-1);
  auto y = (probs.sum(-1) * ys).sum(-1);
  return torch::stack({x, y}, -1);
}

torch::Tensor gaussian_maps(const torch::Tensor& centers, double sigma,
                            int64_t height, int64_t width) {
  if (!(sigma > 0.0)) throw ParameterError("Gaussian sigma must be > 0");
  if (centers.dim() < 2 || centers.size(-1) != 2)
    throw ShapeError("centers must be [..., K, 2]");
  auto ys = pixel_center_coordinates(height, centers.options());
  auto xs = pixel_center_coordinates(width, centers.options());
  auto mx = centers.select(-1, 0).unsqueeze(-1).unsqueeze(-1);
  auto my = centers.select(-1, 1).unsqueeze(-1).unsqueeze(-1);
  auto dx = xs.view({1, width}) - mx;
  auto dy = ys.view({height, 1}) - my;
  return torch::exp(-(dx.pow(2) + dy.pow(2)) / (2.0 * sigma * sigma));
}

KeypointSet KeypointSet::render(const torch::Tensor& centers, double sigma,
                                int64_t side) {
  return {centers, gaussian_maps(centers, sigma, side, side), sigma};
}

KeypointFeatures keypoint_features(const torch::Tensor& features,
                                   const torch::Tensor& masks) {
  const bool batched = features.dim() == 4;
  auto f = batched ? features : features.unsqueeze(0);
  auto m = masks.dim() == 4 ? masks : masks.unsqueeze(0);
  if (f.dim() != 4 || m.dim() != 4 || f.size(0) != m.size(0) ||
      f.size(2) != m.size(2) || f.size(3) != m.size(3))
    throw ShapeError("keypoint masks " + shape_string(masks.sizes()) +
                     " are not aligned with features " +
                     shape_string(features.sizes()));
  auto weighted = torch::einsum("nkhw,nchw->nkc", {m, f});
  auto norm = m.sum({2, 3}).unsqueeze(-1);
  KeypointFeatures out;
  out.vectors = weighted / norm;
  out.superposed = m.sum(1, true) * f;
  if (!batched) {
    out.vectors = out.vectors.squeeze(0);
    out.superposed = out.superposed.squeeze(0);
  }
  return out;
}

nlohmann::json PointNetConfig::to_json() const {
  return {{"in_channels", in_channels},   {"input_size", input_size},
          {"encoder", conv_json(encoder)}, {"num_keypoints", num_keypoints},
          {"sigma", sigma},
          {"regressor_gain", regressor_gain}};
}

PointNetConfig PointNetConfig::from_json(const nlohmann::json& j) {
  PointNetConfig c;
  c.in_channels = j.at("in_channels").get<int64_t>();
  c.input_size = j.at("input_size").get<int64_t>();
  c.encoder = conv_from(j.at("encoder"));
  c.num_keypoints = j.at("num_keypoints").get<int64_t>();
  c.sigma = j.at("sigma").get<double>();
  c.regressor_gain = j.value("regressor_gain", c.regressor_gain);
  return c;
}

PointNetImpl::PointNetImpl(PointNetConfig config) : config_(std::move(config)) {
  config_.encoder.validate();
  if (config_.num_keypoints < 1) throw ConfigError("K must be >= 1");
  if (!(config_.sigma > 0.0)) throw ConfigError("sigma must be > 0");
  bottleneck_side_ = config_.encoder.spatial_sizes(config_.input_size).back();
  encoder_ = register_module("encoder",
                             ConvEncoder(config_.in_channels, config_.encoder));
  regressor_ = register_module(
      "regressor",
      SameConv2d(config_.encoder.filters.back(), config_.num_keypoints, 1, 1));
  {
    torch::NoGradGuard no_grad;
    regressor_->conv->weight.mul_(config_.regressor_gain);
  }
  decoder_ = register_module(
      "decoder", ConvDecoder(config_.num_keypoints, config_.encoder,
                             config_.in_channels, config_.input_size, false));
}

PointNetImpl::Output PointNetImpl::forward(const torch::Tensor& maps) {
  if (maps.dim() != 4 || maps.size(1) != config_.in_channels ||
      maps.size(2) != config_.input_size || maps.size(3) != config_.input_size)
    throw ShapeError("PointNet expects [N, " +
                     std::to_string(config_.in_channels) + ", " +
                     std::to_string(config_.input_size) + ", " +
                     std::to_string(config_.input_size) + "], got " +
                     shape_string(maps.sizes()));
  Output out;
  out.heatmaps = regressor_->forward(encoder_->forward(maps).back());
  out.centers = heatmaps_to_centers(out.heatmaps);
  out.gaussians = gaussian_maps(out.centers, config_.sigma, bottleneck_side_,
                                bottleneck_side_);
  out.reconstruction = decoder_->forward(out.gaussians);
  return out;
}

torch::Tensor PointNetImpl::centers(const torch::Tensor& maps) {
  return heatmaps_to_centers(regressor_->forward(encoder_->forward(maps).back()));
}

torch::Tensor pointnet_loss(const torch::Tensor& reconstruction,
                            const torch::Tensor& target) {
  check_shape(reconstruction, target.sizes(), "PointNet reconstruction");
  check_finite(target, "PointNet target maps");
  check_finite(reconstruction, "PointNet reconstruction");
  return (reconstruction - target.detach()).pow(2).mean();
}

double evaluate_pointnet(PointNet& net, const torch::Tensor& maps) {
  torch::NoGradGuard no_grad;
  net->eval();
  double total = 0.0;
  const int64_t n = maps.size(0);
  for (int64_t i = 0; i < n; i += 64) {
    auto chunk = maps.slice(0, i, std::min(n, i + 64));
    total += pointnet_loss(net->forward(chunk).reconstruction, chunk)
                 .item<double>() *
             static_cast<double>(chunk.size(0));
  }
  return total / static_cast<double>(n);
}

TrainHistory train_pointnet(PointNet& net, const torch::Tensor& train_maps,
                            const torch::Tensor& val_maps,
                            const OptimSchedule& schedule) {
  auto train = train_maps.detach();
  return fit(
      *net, train.size(0), schedule,
      [&](const std::vector<int64_t>& idx) {
        auto batch = train.index_select(0, torch::tensor(idx));
        return pointnet_loss(net->forward(batch).reconstruction, batch);
      },
      [&] {
        return val_maps.size(0) ? evaluate_pointnet(net, val_maps) : 0.0;
      },
      "pointnet");
}

torch::Tensor infer_centers(PointNet& net, const torch::Tensor& maps,
                            int64_t chunk) {
  torch::NoGradGuard no_grad;
  net->eval();
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < maps.size(0); i += chunk)
    out.push_back(net->centers(maps.slice(0, i, std::min(maps.size(0), i + chunk))));
  return torch::cat(out, 0);
}

void save_pointnet(const std::filesystem::path& path, PointNet& net) {
  save_checkpoint(path, *net,
                  {{"kind", "pointnet"}, {"config", net->config().to_json()}});
}

PointNet load_pointnet(const std::filesystem::path& path) {
  auto cfg = read_checkpoint_config(path);
  if (cfg.value("kind", "") != "pointnet")
    throw IoError(path.string() + " is not a PointNet checkpoint");
  PointNet net(PointNetConfig::from_json(cfg.at("config")));
  load_checkpoint_weights(path, *net);
  net->eval();
  return net;
}

}  // namespace permakey
