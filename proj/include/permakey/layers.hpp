#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace permakey {

// Conv-BatchNorm-ReLU stack geometry.
struct ConvStackConfig {
  std::vector<int64_t> kernels{4, 3, 3, 3};
  std::vector<int64_t> filters{32, 64, 64, 128};
  std::vector<int64_t> strides{1, 2, 2, 1};

  size_t depth() const { return kernels.size(); }
  void validate() const;
  // Spatial side after each layer; element 0 is the input side.
  std::vector<int64_t> spatial_sizes(int64_t input_size) const;
};

// 2D convolution with TensorFlow-style "same" padding (output side is
// ceil(input / stride); asymmetric padding for even kernels).
class SameConv2dImpl : public torch::nn::Module {
 public:
  SameConv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel,
                 int64_t stride, bool bias = true);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};

 private:
  int64_t kernel_;
  int64_t stride_;
};
TORCH_MODULE(SameConv2d);

// Conv-BN-ReLU layers (Conv-ReLU without batch norm); forward returns every
// layer's post-ReLU activation.
class ConvEncoderImpl : public torch::nn::Module {
 public:
  ConvEncoderImpl(int64_t in_channels, ConvStackConfig config,
                  bool batch_norm = true);
  std::vector<torch::Tensor> forward(torch::Tensor x);
  // Activations up to and including `last_layer` only.
  std::vector<torch::Tensor> forward_until(torch::Tensor x, size_t last_layer);

  const ConvStackConfig& config() const { return config_; }

 private:
  ConvStackConfig config_;
  std::vector<SameConv2d> convs_;
  std::vector<torch::nn::BatchNorm2d> norms_;
};
TORCH_MODULE(ConvEncoder);

// Transpose of a ConvEncoder: reversed layers, bilinear upsampling where the
// encoder strided, linear output layer. Inputs with a channel count other
// than the encoder's last width pass through a leading 1x1 Conv-BN-ReLU.
// With batch_norm off every BN is dropped.
class ConvDecoderImpl : public torch::nn::Module {
 public:
  ConvDecoderImpl(int64_t in_channels, ConvStackConfig encoder_config,
                  int64_t out_channels, int64_t output_size,
                  bool batch_norm = true);
  torch::Tensor forward(torch::Tensor x);

 private:
  ConvStackConfig config_;
  std::vector<int64_t> sizes_;
  torch::nn::Sequential input_projection_{nullptr};
  std::vector<SameConv2d> convs_;
  std::vector<torch::nn::BatchNorm2d> norms_;
};
TORCH_MODULE(ConvDecoder);

enum class OutputActivation { kLinear, kRelu };

// Dense layers with ReLU between them; sizes = {in, hidden..., out}.
class MlpImpl : public torch::nn::Module {
 public:
  MlpImpl(std::vector<int64_t> sizes, OutputActivation output);
  torch::Tensor forward(torch::Tensor x);

  std::vector<torch::nn::Linear>& layers() { return layers_; }
  int64_t out_features() const { return sizes_.back(); }

 private:
  std::vector<int64_t> sizes_;
  OutputActivation output_;
  std::vector<torch::nn::Linear> layers_;
};
TORCH_MODULE(Mlp);

// Zeroes every bias (and BatchNorm shift) of a module tree.
void zero_biases(torch::nn::Module& m);

}  // namespace permakey
