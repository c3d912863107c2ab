#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace permakey {

inline constexpr int64_t kFrameSize = 84;
inline constexpr int64_t kFrameChannels = 3;

// An 84x84 RGB observation with values in [0,1], stored channels-first
// ([3, 84, 84], float32) to match the convolution layout used throughout.
class Frame {
 public:
  explicit Frame(torch::Tensor pixels);

  static Frame zeros();
  // From interleaved uint8 HWC bytes (84*84*3).
  static Frame from_hwc_bytes(const torch::Tensor& hwc_u8);

  const torch::Tensor& pixels() const { return pixels_; }
  // uint8 [84, 84, 3], values round(255 * p).
  torch::Tensor to_hwc_bytes() const;

 private:
  torch::Tensor pixels_;
};

// Ground truth for one rendered sprites-world frame.
struct SpriteScene {
  Frame frame = Frame::zeros();
  // One bool [84, 84] mask per sprite; nonempty, pairwise disjoint.
  std::vector<torch::Tensor> instance_masks;
  // bool [84, 84]; all false when no distractor is drawn.
  torch::Tensor distractor_mask;

  // Label map encoding: 0 background, 1..n instance, 255 distractor.
  torch::Tensor to_label_map() const;
  static SpriteScene from_label_map(const Frame& frame,
                                    const torch::Tensor& labels,
                                    int64_t n_instances);
};

inline constexpr uint8_t kDistractorLabel = 255;

}  // namespace permakey
