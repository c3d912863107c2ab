#include "permakey/frame.hpp"

#include "permakey/errors.hpp"
#include "permakey/tensor_utils.hpp"

namespace permakey {

Frame::Frame(torch::Tensor pixels) : pixels_(std::move(pixels)) {
  check_shape(pixels_, {kFrameChannels, kFrameSize, kFrameSize}, "Frame");
  if (pixels_.scalar_type() != torch::kFloat32)
    pixels_ = pixels_.to(torch::kFloat32);
  if (pixels_.min().item<float>() < 0.f || pixels_.max().item<float>() > 1.f)
    throw ParameterError("Frame pixels must lie in [0,1]");
}

Frame Frame::zeros() {
  return Frame(torch::zeros({kFrameChannels, kFrameSize, kFrameSize}));
}

Frame Frame::from_hwc_bytes(const torch::Tensor& hwc_u8) {
  check_shape(hwc_u8, {kFrameSize, kFrameSize, kFrameChannels}, "HWC frame");
  return Frame(hwc_u8.permute({2, 0, 1}).to(torch::kFloat32).div(255.0));
}

torch::Tensor Frame::to_hwc_bytes() const {
  return pixels_.mul(255.0).round().clamp(0, 255).to(torch::kUInt8)
      .permute({1, 2, 0})
      .contiguous();
}

torch::Tensor SpriteScene::to_label_map() const {
  auto labels = torch::zeros({kFrameSize, kFrameSize}, torch::kUInt8);
  for (size_t i = 0; i < instance_masks.size(); ++i)
    labels.masked_fill_(instance_masks[i], static_cast<int64_t>(i + 1));
  if (distractor_mask.defined())
    labels.masked_fill_(distractor_mask, kDistractorLabel);
  return labels;
}

SpriteScene SpriteScene::from_label_map(const Frame& frame,
                                        const torch::Tensor& labels,
                                        int64_t n_instances) {
  check_shape(labels, {kFrameSize, kFrameSize}, "label map");
  SpriteScene scene;
  scene.frame = frame;
  for (int64_t i = 1; i <= n_instances; ++i)
    scene.instance_masks.push_back(labels == i);
  scene.distractor_mask = labels == static_cast<int64_t>(kDistractorLabel);
  return scene;
}

}  // namespace permakey
