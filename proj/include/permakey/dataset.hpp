#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "permakey/environment.hpp"
#include "permakey/frame.hpp"

namespace permakey {

enum class Split { kAll, kTrain, kVal, kTest };

std::string to_string(Split split);
Split split_from_string(const std::string& name);

// Frames kept as uint8 NHWC in memory and on disk; batches are produced as
// float NCHW in [0,1]. Read-only after construction.
class FrameDataset {
 public:
  FrameDataset() = default;
  FrameDataset(torch::Tensor frames_u8, std::vector<int64_t> episode_ids,
               std::vector<int64_t> steps, std::optional<torch::Tensor> labels,
               int64_t n_instances, Split split);

  int64_t size() const { return frames_.defined() ? frames_.size(0) : 0; }
  Split split() const { return split_; }

  Frame frame(int64_t index) const;
  // float [B, 3, 84, 84]
  torch::Tensor batch(std::span<const int64_t> indices) const;
  torch::Tensor all_frames() const;

  int64_t episode_id(int64_t index) const { return episode_ids_.at(index); }
  int64_t step(int64_t index) const { return steps_.at(index); }
  const std::vector<int64_t>& episode_ids() const { return episode_ids_; }
  const std::vector<int64_t>& steps() const { return steps_; }

  bool has_ground_truth() const { return labels_.has_value(); }
  int64_t n_instances() const { return n_instances_; }
  const std::optional<torch::Tensor>& labels() const { return labels_; }
  SpriteScene scene(int64_t index) const;

  // Contiguous [begin, end) slice relabelled with `split`.
  FrameDataset slice(int64_t begin, int64_t end, Split split) const;

  const torch::Tensor& raw_frames() const { return frames_; }

 private:
  torch::Tensor frames_;  // uint8 [N, 84, 84, 3]
  std::vector<int64_t> episode_ids_;
  std::vector<int64_t> steps_;
  std::optional<torch::Tensor> labels_;  // uint8 [N, 84, 84]
  int64_t n_instances_ = 0;
  Split split_ = Split::kAll;
};

struct SplitSizes {
  int64_t train = 85000;
  int64_t val = 5000;
  int64_t test = 5000;
};

struct DatasetSplits {
  FrameDataset train;
  FrameDataset val;
  FrameDataset test;
};

// Contiguous, disjoint splits in index order; throws SizeError when the
// requested sizes exceed the dataset.
DatasetSplits split_dataset(const FrameDataset& ds, SplitSizes sizes);

enum class DistractorMode { kHorizontal, kVertical, kBoth };

struct DistractorSpec {
  DistractorMode mode = DistractorMode::kHorizontal;
  int bar_thickness = 4;
  std::array<float, 3> color{1.f, 1.f, 1.f};
  uint64_t rng_seed = 0;

  // Color drawn from the fixed palette by seed.
  static DistractorSpec from_palette(DistractorMode mode, uint64_t seed,
                                     int bar_thickness = 4);
};

const std::vector<std::array<float, 3>>& distractor_palette();

struct DistractedFrame {
  Frame frame;
  torch::Tensor mask;  // bool [84, 84], exactly the overwritten pixels
};

// Superimposes bar(s) of spec.color; each bar's offset is uniform over the
// positions where the full thickness fits inside the image.
DistractedFrame apply_distractor(const Frame& frame, const DistractorSpec& spec,
                                 std::mt19937_64& rng);
// In-place on a float [B, 3, 84, 84] batch; returns bool [B, 84, 84] masks.
torch::Tensor apply_distractor_batch(torch::Tensor& batch,
                                     const DistractorSpec& spec,
                                     std::mt19937_64& rng);

// Rolls out `policy` (resetting on episode end) until n_frames observations
// are recorded. Observations are resized to 84x84 RGB and clamped to [0,1].
FrameDataset collect_frames(Environment& env, const ActionSampler& policy,
                            int64_t n_frames, uint64_t seed);

// Shuffled minibatches of [0, n) for one epoch; deterministic in (seed, epoch).
std::vector<std::vector<int64_t>> epoch_batches(int64_t n, int64_t batch_size,
                                                uint64_t seed, int64_t epoch);

// <root>/<split>/frames.bin (+ labels.bin) and <root>/<split>/meta.json.
void write_split(const std::filesystem::path& root, const FrameDataset& ds);
FrameDataset read_split(const std::filesystem::path& root, Split split);

// Raw little-endian tensor blobs used by all emitted artifacts.
void write_tensor_file(const std::filesystem::path& path,
                       const torch::Tensor& t);
torch::Tensor read_tensor_file(const std::filesystem::path& path,
                               c10::ScalarType dtype,
                               std::vector<int64_t> sizes);

}  // namespace permakey
