#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "permakey/frame.hpp"

namespace permakey {

inline const double kDefaultCoverageThreshold = std::exp(-0.5);

struct CoverageEntry {
  int64_t covered = 0;
  int64_t total = 0;
  double fraction() const {
    return total ? static_cast<double>(covered) / static_cast<double>(total) : 0.0;
  }
};

// A sprite is covered when some keypoint Gaussian (rendered on the frame
// grid) reaches `threshold` on one of its mask pixels. centers [K, 2] (K may
// be 0). PreconditionError on an empty instance mask.
CoverageEntry keypoint_coverage(const torch::Tensor& centers, double sigma,
                                const SpriteScene& scene,
                                double threshold = kDefaultCoverageThreshold);

// Fraction of the K keypoints whose Gaussian reaches `threshold` on a
// distractor pixel. distractor_mask: bool [H, W].
double distractor_capture_rate(const torch::Tensor& centers, double sigma,
                               const torch::Tensor& distractor_mask,
                               double threshold = kDefaultCoverageThreshold);

struct CoverageReport {
  std::vector<double> per_frame;
  double mean = 0.0;
  double std = 0.0;
  nlohmann::json to_json() const;
};
CoverageReport summarize_fractions(std::vector<double> per_frame);

// Minimum-cost perfect matching on a square cost matrix; returns the column
// assigned to each row.
std::vector<int64_t> hungarian(const std::vector<std::vector<double>>& cost);

// Mean Euclidean distance between two [K, 2] center sets under the optimal
// matching.
double matched_distance(const torch::Tensor& a, const torch::Tensor& b);

struct StabilityReport {
  std::vector<double> per_frame;  // mean over run pairs
  double mean = 0.0;
  nlohmann::json to_json() const;
};

// runs: per-run centers [F, K, 2]. ConfigError if K differs between runs.
StabilityReport stability_across_seeds(const std::vector<torch::Tensor>& runs);

// Fixed keypoint palette; keypoint k is drawn with palette()[k % size].
const std::vector<std::array<uint8_t, 3>>& keypoint_palette();

struct OverlayImage {
  torch::Tensor pixels;  // uint8 [H, W, 3]
  int64_t width() const { return pixels.size(1); }
  int64_t height() const { return pixels.size(0); }
};

// Grid with one column per frame: the frames, the frames with keypoints
// drawn on them, then one heatmap row per map layer.
// frames [N, 3, 84, 84]; centers [N, K, 2] (optional);
// maps [N, M, 84, 84] (optional).
OverlayImage render_overlay(const torch::Tensor& frames,
                            const std::optional<torch::Tensor>& centers,
                            const std::optional<torch::Tensor>& maps,
                            int64_t scale = 1);

void write_png(const std::filesystem::path& path, const OverlayImage& image);
OverlayImage read_png(const std::filesystem::path& path);

}  // namespace permakey
