#include "permakey/layers.hpp"

#include "permakey/errors.hpp"

namespace permakey {

namespace F = torch::nn::functional;

void ConvStackConfig::validate() const {
  if (kernels.empty() || kernels.size() != filters.size() ||
      kernels.size() != strides.size())
    throw ConfigError("conv stack kernels/filters/strides must align");
  for (size_t i = 0; i < depth(); ++i)
    if (kernels[i] < 1 || filters[i] < 1 || strides[i] < 1)
      throw ConfigError("conv stack entries must be positive");
}

std::vector<int64_t> ConvStackConfig::spatial_sizes(int64_t input_size) const {
  std::vector<int64_t> sizes{input_size};
  for (int64_t s : strides) sizes.push_back((sizes.back() + s - 1) / s);
  return sizes;
}

SameConv2dImpl::SameConv2dImpl(int64_t in_channels, int64_t out_channels,
                               int64_t kernel, int64_t stride, bool bias)
    : kernel_(kernel), stride_(stride) {
  conv = register_module(
      "conv", torch::nn::Conv2d(
                  torch::nn::Conv2dOptions(in_channels, out_channels, kernel)
                      .stride(stride)
                      .bias(bias)));
}

torch::Tensor SameConv2dImpl::forward(const torch::Tensor& x) {
  auto pad_for = [&](int64_t side) {
    const int64_t out = (side + stride_ - 1) / stride_;
    return std::max<int64_t>((out - 1) * stride_ + kernel_ - side, 0);
  };
  const int64_t ph = pad_for(x.size(-2));
  const int64_t pw = pad_for(x.size(-1));
  auto padded = (ph || pw) ? F::pad(x, F::PadFuncOptions({pw / 2, pw - pw / 2,
                                                          ph / 2, ph - ph / 2}))
                           : x;
  return conv->forward(padded);
}

ConvEncoderImpl::ConvEncoderImpl(int64_t in_channels, ConvStackConfig config,
                                 bool batch_norm)
    : config_(std::move(config)) {
  config_.validate();
  int64_t c = in_channels;
  for (size_t i = 0; i < config_.depth(); ++i) {
    convs_.push_back(register_module(
        "conv" + std::to_string(i),
        SameConv2d(c, config_.filters[i], config_.kernels[i],
                   config_.strides[i])));
    if (batch_norm)
      norms_.push_back(register_module(
          "bn" + std::to_string(i), torch::nn::BatchNorm2d(config_.filters[i])));
    c = config_.filters[i];
  }
}

std::vector<torch::Tensor> ConvEncoderImpl::forward(torch::Tensor x) {
  return forward_until(std::move(x), config_.depth() - 1);
}

std::vector<torch::Tensor> ConvEncoderImpl::forward_until(torch::Tensor x,
                                                          size_t last_layer) {
  std::vector<torch::Tensor> out;
  for (size_t i = 0; i <= last_layer && i < convs_.size(); ++i) {
    x = convs_[i]->forward(x);
    if (!norms_.empty()) x = norms_[i]->forward(x);
    x = torch::relu(x);
    out.push_back(x);
  }
  return out;
}

ConvDecoderImpl::ConvDecoderImpl(int64_t in_channels,
                                 ConvStackConfig encoder_config,
                                 int64_t out_channels, int64_t output_size,
                                 bool batch_norm)
    : config_(std::move(encoder_config)) {
  config_.validate();
  sizes_ = config_.spatial_sizes(output_size);
  const size_t depth = config_.depth();
  int64_t c = in_channels;
  if (c != config_.filters.back()) {
    torch::nn::Sequential projection(SameConv2d(c, config_.filters.back(), 1, 1));
    if (batch_norm)
      projection->push_back(torch::nn::BatchNorm2d(config_.filters.back()));
    projection->push_back(torch::nn::ReLU());
    input_projection_ = register_module("input_projection", projection);
    c = config_.filters.back();
  }
  // Decoder layer j undoes encoder layer (depth - 1 - j).
  for (size_t j = 0; j < depth; ++j) {
    const size_t l = depth - 1 - j;
    const int64_t out = l == 0 ? out_channels : config_.filters[l - 1];
    convs_.push_back(register_module(
        "conv" + std::to_string(j), SameConv2d(c, out, config_.kernels[l], 1)));
    if (l != 0 && batch_norm)
      norms_.push_back(register_module("bn" + std::to_string(j),
                                       torch::nn::BatchNorm2d(out)));
    c = out;
  }
}

torch::Tensor ConvDecoderImpl::forward(torch::Tensor x) {
  if (input_projection_) x = input_projection_->forward(x);
  const size_t depth = config_.depth();
  for (size_t j = 0; j < depth; ++j) {
    const size_t l = depth - 1 - j;
    if (config_.strides[l] > 1) {
      x = F::interpolate(x, F::InterpolateFuncOptions()
                                .size(std::vector<int64_t>{sizes_[l], sizes_[l]})
                                .mode(torch::kBilinear)
                                .align_corners(false));
    }
    x = convs_[j]->forward(x);
    if (l == 0) continue;
    if (!norms_.empty()) x = norms_[j]->forward(x);
    x = torch::relu(x);
  }
  return x;
}

MlpImpl::MlpImpl(std::vector<int64_t> sizes, OutputActivation output)
    : sizes_(std::move(sizes)), output_(output) {
  if (sizes_.size() < 2) throw ConfigError("MLP needs at least two sizes");
  for (size_t i = 0; i + 1 < sizes_.size(); ++i)
    layers_.push_back(register_module(
        "fc" + std::to_string(i), torch::nn::Linear(sizes_[i], sizes_[i + 1])));
}

torch::Tensor MlpImpl::forward(torch::Tensor x) {
  for (size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i]->forward(x);
    const bool last = i + 1 == layers_.size();
    if (!last || output_ == OutputActivation::kRelu) x = torch::relu(x);
  }
  return x;
}

void zero_biases(torch::nn::Module& m) {
  torch::NoGradGuard no_grad;
  for (auto& item : m.named_parameters(true))
    if (item.key().ends_with("bias")) item.value().zero_();
}

}  // namespace permakey
