#include "permakey/frontend.hpp"

#include <algorithm>

#include "permakey/errors.hpp"

namespace permakey {

torch::Tensor permakey_centers(PermaKeyModels& models, const torch::Tensor& frames) {
  torch::NoGradGuard no_grad;
  models.vae->eval();
  models.lspn->eval();
  auto feats = lspn_features(models.vae, frames, models.lspn->config());
  return infer_centers(models.pointnet,
                       error_map(feats, models.lspn).fused);
}

torch::Tensor keypoint_observation(const torch::Tensor& features,
                                   const torch::Tensor& centers, double sigma,
                                   EncoderKind kind) {
  auto masks = gaussian_maps(centers, sigma, features.size(-2), features.size(-1));
  auto kf = keypoint_features(features, masks);
  switch (kind) {
    case EncoderKind::kGnn:
      return torch::cat({kf.vectors, centers}, -1);
    case EncoderKind::kCnn:
      return kf.superposed;
    case EncoderKind::kIdentity:
      break;
  }
  throw ConfigError("keypoint frontends feed cnn or gnn encoders");
}

Frontend permakey_frontend(PermaKeyModels models, EncoderKind kind) {
  if (kind == EncoderKind::kIdentity)
    throw ConfigError("keypoint frontends feed cnn or gnn encoders");
  return [models, kind](const torch::Tensor& frame) mutable {
    torch::NoGradGuard no_grad;
    models.vae->eval();
    models.lspn->eval();
    models.pointnet->eval();
    auto x = frame.unsqueeze(0);
    const auto& layers = models.lspn->config().layers;
    const int64_t deepest = std::max(
        models.feature_layer, *std::max_element(layers.begin(), layers.end()));
    auto feats = models.vae->features(x, static_cast<size_t>(deepest));
    auto centers = models.pointnet->centers(error_map(feats, models.lspn).fused);
    return keypoint_observation(
        feats.layers.at(static_cast<size_t>(models.feature_layer))[0],
        centers[0], models.pointnet->config().sigma, kind);
  };
}

Frontend transporter_frontend(Transporter model, EncoderKind kind) {
  if (kind == EncoderKind::kIdentity)
    throw ConfigError("keypoint frontends feed cnn or gnn encoders");
  return [model, kind](const torch::Tensor& frame) mutable {
    torch::NoGradGuard no_grad;
    model->eval();
    auto x = frame.unsqueeze(0);
    auto centers = model->keypoints(x).centers;
    return keypoint_observation(model->features(x)[0], centers[0],
                                model->config().sigma, kind);
  };
}

}  // namespace permakey
