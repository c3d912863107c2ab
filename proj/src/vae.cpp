#include "permakey/vae.hpp"

#include "permakey/errors.hpp"
#include "permakey/tensor_utils.hpp"

namespace permakey {

namespace {

nlohmann::json conv_to_json(const ConvStackConfig& c) {
  return {{"kernels", c.kernels}, {"filters", c.filters}, {"strides", c.strides}};
}

ConvStackConfig conv_from_json(const nlohmann::json& j) {
  ConvStackConfig c;
  c.kernels = j.at("kernels").get<std::vector<int64_t>>();
  c.filters = j.at("filters").get<std::vector<int64_t>>();
  c.strides = j.at("strides").get<std::vector<int64_t>>();
  return c;
}

}  // namespace

nlohmann::json VaeConfig::to_json() const {
  return {{"in_channels", in_channels},
          {"input_size", input_size},
          {"encoder", conv_to_json(encoder)},
          {"latent_dim", latent_dim}};
}

VaeConfig VaeConfig::from_json(const nlohmann::json& j) {
  VaeConfig c;
  c.in_channels = j.at("in_channels").get<int64_t>();
  c.input_size = j.at("input_size").get<int64_t>();
  c.encoder = conv_from_json(j.at("encoder"));
  c.latent_dim = j.at("latent_dim").get<int64_t>();
  return c;
}

VaeImpl::VaeImpl(VaeConfig config) : config_(std::move(config)) {
  config_.encoder.validate();
  if (config_.latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  bottleneck_side_ = config_.encoder.spatial_sizes(config_.input_size).back();
  const int64_t flat =
      config_.encoder.filters.back() * bottleneck_side_ * bottleneck_side_;
  encoder_ = register_module("encoder",
                             ConvEncoder(config_.in_channels, config_.encoder));
  posterior_head_ = register_module(
      "posterior_head", torch::nn::Linear(flat, 2 * config_.latent_dim));
  latent_projection_ = register_module(
      "latent_projection", torch::nn::Linear(config_.latent_dim, flat));
  decoder_ = register_module(
      "decoder", ConvDecoder(config_.encoder.filters.back(), config_.encoder,
                             config_.in_channels, config_.input_size));
}

void VaeImpl::check_input(const torch::Tensor& x) const {
  if (x.dim() != 4 || x.size(1) != config_.in_channels ||
      x.size(2) != config_.input_size || x.size(3) != config_.input_size)
    throw ShapeError("VAE input must be [N, " +
                     std::to_string(config_.in_channels) + ", " +
                     std::to_string(config_.input_size) + ", " +
                     std::to_string(config_.input_size) + "], got " +
                     shape_string(x.sizes()));
}

EncodeResult VaeImpl::encode(const torch::Tensor& x) {
  check_input(x);
  EncodeResult out;
  out.features.layers = encoder_->forward(x);
  auto stats = posterior_head_->forward(out.features.layers.back().flatten(1));
  auto parts = stats.chunk(2, 1);
  out.posterior.mean = parts[0];
  out.posterior.logvar = parts[1];
  return out;
}

FeatureStack VaeImpl::features(const torch::Tensor& x, size_t last_layer) {
  check_input(x);
  return {encoder_->forward_until(x, last_layer)};
}

torch::Tensor VaeImpl::decode(const torch::Tensor& z) {
  if (z.dim() != 2 || z.size(1) != config_.latent_dim)
    throw ShapeError("latent must be [N, " + std::to_string(config_.latent_dim) +
                     "], got " + shape_string(z.sizes()));
  auto h = torch::relu(latent_projection_->forward(z))
               .view({z.size(0), config_.encoder.filters.back(),
                      bottleneck_side_, bottleneck_side_});
  return torch::sigmoid(decoder_->forward(h));
}

EncodeResult encode(Vae& vae, const Frame& frame) {
  return vae->encode(frame.pixels().unsqueeze(0));
}

Frame decode(Vae& vae, const torch::Tensor& z) {
  auto latent = z.dim() == 1 ? z.unsqueeze(0) : z;
  return Frame(vae->decode(latent).squeeze(0).detach().to(torch::kFloat32));
}

torch::Tensor kl_divergence(const torch::Tensor& mean,
                            const torch::Tensor& logvar) {
  return 0.5 * (mean.pow(2) + logvar.exp() - 1.0 - logvar).sum(1);
}

ElboTerms elbo_loss(Vae& vae, const torch::Tensor& batch,
                    const torch::Tensor& noise) {
  if (batch.size(0) == 0) throw SizeError("ELBO batch is empty");
  check_finite(batch, "ELBO input");
  auto enc = vae->encode(batch);
  check_finite(enc.posterior.mean, "posterior mean");
  check_finite(enc.posterior.logvar, "posterior logvar");
  check_shape(noise, enc.posterior.mean.sizes(), "reparameterization noise");
  auto z = enc.posterior.mean + (0.5 * enc.posterior.logvar).exp() * noise;
  auto recon = vae->decode(z);
  check_finite(recon, "reconstruction");
  auto sq = (recon - batch).pow(2);
  ElboTerms t;
  t.reconstruction = 0.5 * sq.flatten(1).sum(1).mean();
  t.kl = kl_divergence(enc.posterior.mean, enc.posterior.logvar).mean();
  t.loss = t.reconstruction + t.kl;
  t.pixel_mse = sq.mean();
  return t;
}

ElboTerms elbo_loss(Vae& vae, const torch::Tensor& batch,
                    at::Generator& generator) {
  auto noise = torch::randn({batch.size(0), vae->config().latent_dim},
                            generator, batch.options());
  return elbo_loss(vae, batch, noise);
}

VaeTrainResult train_vae(Vae& vae, const FrameDataset& train,
                         const FrameDataset& val,
                         const OptimSchedule& schedule) {
  auto gen = at::detail::createCPUGenerator(schedule.seed + 17);
  auto mean_over = [&](const FrameDataset& ds, bool pixel) {
    double total = 0.0;
    int64_t count = 0;
    for (const auto& b : epoch_batches(ds.size(), 64, 0, 0)) {
      auto terms = elbo_loss(vae, ds.batch(b), gen);
      total += (pixel ? terms.pixel_mse : terms.loss).item<double>() *
               static_cast<double>(b.size());
      count += static_cast<int64_t>(b.size());
    }
    return total / static_cast<double>(count);
  };
  VaeTrainResult result;
  result.history = fit(
      *vae, train.size(), schedule,
      [&](const std::vector<int64_t>& idx) {
        return elbo_loss(vae, train.batch(idx), gen).loss;
      },
      [&] { return val.size() ? mean_over(val, false) : 0.0; }, "vae");
  torch::NoGradGuard no_grad;
  vae->eval();
  result.train_pixel_mse = mean_over(train, true);
  return result;
}

void save_vae(const std::filesystem::path& path, Vae& vae,
              const nlohmann::json& extra) {
  nlohmann::json cfg = {{"kind", "vae"}, {"config", vae->config().to_json()},
                        {"extra", extra}};
  save_checkpoint(path, *vae, cfg);
}

Vae load_vae(const std::filesystem::path& path) {
  auto cfg = read_checkpoint_config(path);
  if (cfg.value("kind", "") != "vae")
    throw IoError(path.string() + " is not a VAE checkpoint");
  Vae vae(VaeConfig::from_json(cfg.at("config")));
  load_checkpoint_weights(path, *vae);
  vae->eval();
  return vae;
}

}  // namespace permakey
