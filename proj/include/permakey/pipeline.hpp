#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "permakey/config.hpp"
#include "permakey/dataset.hpp"
#include "permakey/evaluation.hpp"

namespace permakey {

const char* git_revision();

struct StageRecord {
  std::string name;
  std::string key;
  bool cached = false;
  double seconds = 0.0;
  std::filesystem::path dir;
  std::string outputs_digest;  // SHA-256 over the output file hashes
  nlohmann::json metrics = nlohmann::json::object();

  nlohmann::json to_json() const;
};

// Content-addressed stage cache: a stage's directory is derived from its key
// (name, config subset, upstream output digests). A stage is skipped when
// its record matches the key and every recorded output still hashes equal.
class StageCache {
 public:
  explicit StageCache(std::filesystem::path root);

  using Body = std::function<nlohmann::json(const std::filesystem::path& dir)>;
  StageRecord run(const std::string& name, const std::string& config_subset,
                  const std::vector<const StageRecord*>& upstream,
                  const Body& body);

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

struct RunResult {
  std::filesystem::path run_dir;
  std::vector<StageRecord> stages;
  nlohmann::json manifest;

  const StageRecord& stage(const std::string& name) const;
  bool has_stage(const std::string& name) const;
};

struct PipelineOptions {
  // Shared artifact cache (default: <run_dir>/cache).
  std::filesystem::path cache_dir;
};

// Validates the config (seed protocol first), then runs
// collect -> keypoint model stages -> metrics -> agent -> evaluate.
// Writes <run_dir>/config.txt and <run_dir>/manifest.json; on a stage
// failure writes <run_dir>/FAILED.json and rethrows. Rerunning resumes
// from the cache.
RunResult run_pipeline(const ExperimentConfig& config,
                       const std::filesystem::path& run_dir,
                       const PipelineOptions& options = {});

struct SweepSpec {
  std::string key;
  std::vector<std::string> values;
};
// "k=5,7,10" (scalar keys, comma-separated) or "layers=0|0,1|2,3" (list
// keys, '|'-separated).
SweepSpec parse_vary(const std::string& vary);

// One run per value under <out_dir>/<key>=<value>, sharing one cache.
// Returns a table of per-run metrics.
nlohmann::json sweep(const ExperimentConfig& base, const SweepSpec& spec,
                     const std::filesystem::path& out_dir);

// Keypoint record files: <dir>/keypoints.jsonl (frame_id, episode, step,
// centers) and <dir>/centers.pt ([N, K, 2]); masks.pt ([N, K, 84, 84]) when
// `write_masks`.
void write_keypoints(const std::filesystem::path& dir, const FrameDataset& ds,
                     const torch::Tensor& centers, double sigma, bool write_masks);
torch::Tensor read_keypoint_centers(const std::filesystem::path& dir);

void save_tensor(const std::filesystem::path& path, const torch::Tensor& t);
torch::Tensor load_tensor(const std::filesystem::path& path);

struct KeypointMetrics {
  CoverageReport coverage;
  CoverageReport capture;  // distractor capture rate per frame
  double frames_with_bar_keypoint = 0.0;  // fraction of frames with >= 1
  nlohmann::json to_json() const;
};

// Scores centers [N, K, 2] against the dataset's ground-truth scenes.
KeypointMetrics keypoint_metrics(const FrameDataset& ds,
                                 const torch::Tensor& centers, double sigma,
                                 double threshold = kDefaultCoverageThreshold);

}  // namespace permakey
