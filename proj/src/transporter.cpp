#include "permakey/transporter.hpp"

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <span>

#include "permakey/errors.hpp"
#include "permakey/pointnet.hpp"
#include "permakey/tensor_utils.hpp"

namespace permakey {

nlohmann::json TransporterConfig::to_json() const {
  return {{"input_size", input_size},
          {"kernels", features.kernels},
          {"filters", features.filters},
          {"strides", features.strides},
          {"num_keypoints", num_keypoints},
          {"sigma", sigma},
          {"min_offset", min_offset},
          {"max_offset", max_offset}};
}

TransporterConfig TransporterConfig::from_json(const nlohmann::json& j) {
  TransporterConfig c;
  c.input_size = j.at("input_size").get<int64_t>();
  c.features.kernels = j.at("kernels").get<std::vector<int64_t>>();
  c.features.filters = j.at("filters").get<std::vector<int64_t>>();
  c.features.strides = j.at("strides").get<std::vector<int64_t>>();
  c.num_keypoints = j.at("num_keypoints").get<int64_t>();
  c.sigma = j.at("sigma").get<double>();
  c.min_offset = j.at("min_offset").get<int64_t>();
  c.max_offset = j.at("max_offset").get<int64_t>();
  return c;
}

torch::Tensor combine_heatmaps(const torch::Tensor& gaussians) {
  if (gaussians.dim() != 4) throw ShapeError("gaussians must be [N, K, h, w]");
  return 1.0 - (1.0 - gaussians).prod(1, true);
}

torch::Tensor transport(const torch::Tensor& phi_source,
                        const torch::Tensor& phi_target,
                        const torch::Tensor& heat_source,
                        const torch::Tensor& heat_target) {
  if (phi_source.sizes() != phi_target.sizes())
    throw ShapeError("source features " + shape_string(phi_source.sizes()) +
                     " and target features " +
                     shape_string(phi_target.sizes()) + " differ");
  auto spatial = [&](const torch::Tensor& h) {
    return h.size(-1) == phi_source.size(-1) &&
           h.size(-2) == phi_source.size(-2);
  };
  if (!spatial(heat_source) || !spatial(heat_target))
    throw ShapeError("heatmaps are not aligned with the feature maps");
  return (1.0 - heat_source) * (1.0 - heat_target) * phi_source +
         heat_target * phi_target;
}

TransporterImpl::TransporterImpl(TransporterConfig config)
    : config_(std::move(config)) {
  config_.features.validate();
  if (config_.num_keypoints < 1) throw ConfigError("K must be >= 1");
  if (config_.min_offset < 1 || config_.max_offset < config_.min_offset)
    throw ConfigError("frame offsets must satisfy 1 <= min <= max");
  feature_side_ = config_.features.spatial_sizes(config_.input_size).back();
  phi_ = register_module("phi", ConvEncoder(3, config_.features));
  psi_ = register_module("psi", ConvEncoder(3, config_.features));
  regressor_ = register_module(
      "regressor", SameConv2d(config_.features.filters.back(),
                              config_.num_keypoints, 1, 1));
  refine_ = register_module(
      "refine", ConvDecoder(config_.features.filters.back(), config_.features,
                            3, config_.input_size));
}

torch::Tensor TransporterImpl::features(const torch::Tensor& frames) {
  return phi_->forward(frames).back();
}

TransporterImpl::Keypoints TransporterImpl::keypoints(
    const torch::Tensor& frames) {
  Keypoints k;
  k.logits = regressor_->forward(psi_->forward(frames).back());
  k.centers = heatmaps_to_centers(k.logits);
  k.gaussians =
      gaussian_maps(k.centers, config_.sigma, feature_side_, feature_side_);
  return k;
}

TransporterImpl::Output TransporterImpl::forward(const torch::Tensor& source,
                                                 const torch::Tensor& target) {
  check_shape(target, source.sizes(), "Transporter target frames");
  if (source.dim() != 4 || source.size(1) != 3 ||
      source.size(2) != config_.input_size)
    throw ShapeError("Transporter expects [N, 3, " +
                     std::to_string(config_.input_size) + ", " +
                     std::to_string(config_.input_size) + "] frames, got " +
                     shape_string(source.sizes()));
  Output out;
  out.source = keypoints(source);
  out.target = keypoints(target);
  auto hs = combine_heatmaps(out.source.gaussians.detach());
  auto ht = combine_heatmaps(out.target.gaussians);
  out.transported = transport(features(source), features(target), hs, ht);
  out.reconstruction = refine_->forward(out.transported);
  return out;
}

torch::Tensor transporter_loss(const torch::Tensor& reconstruction,
                               const torch::Tensor& target) {
  check_shape(reconstruction, target.sizes(), "Transporter reconstruction");
  check_finite(reconstruction, "Transporter reconstruction");
  return (reconstruction - target.detach()).pow(2).mean();
}

std::vector<std::pair<int64_t, int64_t>> sample_frame_pairs(
    const FrameDataset& ds, const std::vector<int64_t>& sources,
    int64_t min_offset, int64_t max_offset, std::mt19937_64& rng) {
  const auto& episodes = ds.episode_ids();
  std::vector<std::pair<int64_t, int64_t>> pairs;
  pairs.reserve(sources.size());
  const int64_t n = ds.size();
  for (int64_t s : sources) {
    std::vector<int64_t> candidates;
    for (int64_t d = min_offset; d <= max_offset; ++d) {
      for (int64_t t : {s + d, s - d}) {
        if (t >= 0 && t < n && episodes[t] == episodes[s] &&
            std::abs(ds.step(t) - ds.step(s)) == d)
          candidates.push_back(t);
      }
    }
    if (candidates.empty()) continue;
    // Uniform over offsets first, then over direction.
    std::vector<int64_t> offsets;
    for (int64_t t : candidates) offsets.push_back(std::abs(ds.step(t) - ds.step(s)));
    std::sort(offsets.begin(), offsets.end());
    offsets.erase(std::unique(offsets.begin(), offsets.end()), offsets.end());
    const int64_t d = offsets[std::uniform_int_distribution<size_t>(
        0, offsets.size() - 1)(rng)];
    std::vector<int64_t> at_d;
    for (int64_t t : candidates)
      if (std::abs(ds.step(t) - ds.step(s)) == d) at_d.push_back(t);
    pairs.emplace_back(
        s, at_d[std::uniform_int_distribution<size_t>(0, at_d.size() - 1)(rng)]);
  }
  return pairs;
}

namespace {

std::pair<torch::Tensor, torch::Tensor> pair_batch(
    const FrameDataset& ds,
    std::span<const std::pair<int64_t, int64_t>> pairs) {
  std::vector<int64_t> s, t;
  for (const auto& [a, b] : pairs) {
    s.push_back(a);
    t.push_back(b);
  }
  return {ds.batch(s), ds.batch(t)};
}

}  // namespace

double evaluate_transporter(
    Transporter& net, const FrameDataset& ds,
    const std::vector<std::pair<int64_t, int64_t>>& pairs) {
  if (pairs.empty()) return 0.0;
  torch::NoGradGuard no_grad;
  net->eval();
  double total = 0.0;
  std::span<const std::pair<int64_t, int64_t>> all(pairs);
  for (size_t i = 0; i < pairs.size(); i += 32) {
    auto chunk = all.subspan(i, std::min<size_t>(32, pairs.size() - i));
    auto [src, tgt] = pair_batch(ds, chunk);
    total += transporter_loss(net->forward(src, tgt).reconstruction, tgt)
                 .item<double>() *
             static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(pairs.size());
}

TrainHistory train_transporter(Transporter& net, const FrameDataset& train,
                               const FrameDataset& val,
                               const OptimSchedule& schedule) {
  const auto& cfg = net->config();
  std::mt19937_64 rng(schedule.seed ^ 0x7a11u);
  std::vector<int64_t> val_sources(val.size());
  std::iota(val_sources.begin(), val_sources.end(), 0);
  std::mt19937_64 val_rng(schedule.seed + 1);
  const auto val_pairs = sample_frame_pairs(val, val_sources, cfg.min_offset,
                                            cfg.max_offset, val_rng);
  return fit(
      *net, train.size(), schedule,
      [&](const std::vector<int64_t>& idx) {
        auto pairs =
            sample_frame_pairs(train, idx, cfg.min_offset, cfg.max_offset, rng);
        if (pairs.empty())
          throw PreconditionError("no frame pairs available in batch");
        auto [src, tgt] = pair_batch(train, pairs);
        return transporter_loss(net->forward(src, tgt).reconstruction, tgt);
      },
      [&] { return evaluate_transporter(net, val, val_pairs); },
      "transporter");
}

torch::Tensor transporter_centers(Transporter& net, const torch::Tensor& frames,
                                  int64_t chunk) {
  torch::NoGradGuard no_grad;
  net->eval();
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < frames.size(0); i += chunk)
    out.push_back(
        net->keypoints(frames.slice(0, i, std::min(frames.size(0), i + chunk)))
            .centers);
  return torch::cat(out, 0);
}

void save_transporter(const std::filesystem::path& path, Transporter& net) {
  save_checkpoint(path, *net,
                  {{"kind", "transporter"}, {"config", net->config().to_json()}});
}

Transporter load_transporter(const std::filesystem::path& path) {
  auto cfg = read_checkpoint_config(path);
  if (cfg.value("kind", "") != "transporter")
    throw IoError(path.string() + " is not a Transporter checkpoint");
  Transporter net(TransporterConfig::from_json(cfg.at("config")));
  load_checkpoint_weights(path, *net);
  net->eval();
  return net;
}

}  // namespace permakey
