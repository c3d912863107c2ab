#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "permakey/layers.hpp"
#include "permakey/training.hpp"
#include "permakey/vae.hpp"

namespace permakey {

inline constexpr int64_t kNeighbors = 8;

// Non-overlapping p x p tiling of one feature map. Each patch vector is
// flattened row-major within the patch with channels last:
// index = (dy * p + dx) * C + c.
struct PatchGrid {
  torch::Tensor patches;  // [G_h, G_w, p*p*C]
  int64_t patch = 2;
  int64_t channels = 0;
  int64_t layer = 0;

  int64_t rows() const { return patches.size(0); }
  int64_t cols() const { return patches.size(1); }
};

// feature_map: [C, H, W]. Throws SizeError if H or W < 3p.
PatchGrid extract_patch_grid(const torch::Tensor& feature_map, int64_t patch,
                             int64_t layer = 0);
// Inverse of extract_patch_grid: [C, p*G_h, p*G_w].
torch::Tensor unpatch(const PatchGrid& grid);

// Offsets (drow, dcol) of the 8 neighbours, clockwise from top-left.
const std::array<std::pair<int, int>, kNeighbors>& neighbor_offsets();

// Concatenated neighbour patches of interior cell (i, j); BorderError for
// cells without all 8 neighbours.
torch::Tensor neighborhood(const PatchGrid& grid, int64_t i, int64_t j);

// Batched forms. maps: [N, C, H, W] -> grid [N, G_h, G_w, p*p*C].
torch::Tensor patch_grid_batch(const torch::Tensor& maps, int64_t patch);

struct InteriorCells {
  torch::Tensor inputs;   // [N, G_h-2, G_w-2, 8*p*p*C]
  torch::Tensor centers;  // [N, G_h-2, G_w-2, p*p*C]
};
InteriorCells interior_neighborhoods(const torch::Tensor& grid);

struct LspnConfig {
  std::vector<int64_t> layers{0, 1};
  int64_t patch = 2;
  std::vector<int64_t> hidden{512, 256};
  // Interior cells sampled per image for each training step (0: all).
  int64_t cells_per_image = 0;
  int64_t map_size = kFrameSize;

  nlohmann::json to_json() const;
  static LspnConfig from_json(const nlohmann::json& j);
};

// MLP [8*p*p*C, hidden..., p*p*C] with ReLU hidden units and linear output.
class LspnImpl : public torch::nn::Module {
 public:
  LspnImpl(int64_t channels, int64_t patch, std::vector<int64_t> hidden);
  torch::Tensor forward(const torch::Tensor& neighborhoods);

  int64_t channels() const { return channels_; }
  int64_t patch() const { return patch_; }
  Mlp& mlp() { return mlp_; }

 private:
  int64_t channels_;
  int64_t patch_;
  Mlp mlp_{nullptr};
};
TORCH_MODULE(Lspn);

// One independent LSPN per configured encoder layer.
class LspnBankImpl : public torch::nn::Module {
 public:
  LspnBankImpl(LspnConfig config, const std::vector<int64_t>& layer_channels);

  const LspnConfig& config() const { return config_; }
  Lspn& net(size_t index) { return nets_.at(index); }
  size_t size() const { return nets_.size(); }
  std::vector<int64_t> layer_channels() const;

 private:
  LspnConfig config_;
  std::vector<Lspn> nets_;
};
TORCH_MODULE(LspnBank);

// Mean over batch and interior cells of the per-cell mean squared error
// (averaged over the p*p*C patch entries). Feature maps are detached.
torch::Tensor lsp_loss(Lspn& net, const torch::Tensor& maps);
// Same objective on `cells_per_image` uniformly drawn interior cells.
torch::Tensor lsp_loss_sampled(Lspn& net, const torch::Tensor& maps,
                               int64_t cells_per_image, at::Generator& gen);

// Per-cell errors [N, G_h, G_w]; border cells replicate the nearest
// interior cell.
torch::Tensor cell_errors(Lspn& net, const torch::Tensor& maps);

struct PredictabilityMap {
  std::vector<torch::Tensor> errors;  // per configured layer, [N, G_h, G_w]
  torch::Tensor fused;                // [N, M, map_size, map_size]
};

// features must contain every configured layer index.
PredictabilityMap error_map(const FeatureStack& features, LspnBank& bank);

// VAE layers up to the deepest configured LSPN layer, in eval mode.
FeatureStack lspn_features(Vae& vae, const torch::Tensor& frames,
                           const LspnConfig& config);

struct LspnTrainResult {
  std::vector<TrainHistory> histories;  // one joint history (summed layer losses)
};

// Trains each layer's LSPN on frozen VAE features (the VAE is only read).
LspnTrainResult train_lspn(LspnBank& bank, Vae& vae, const FrameDataset& train,
                           const FrameDataset& val,
                           const OptimSchedule& schedule);

// Fused maps [N, M, map_size, map_size] for a whole dataset, in chunks.
torch::Tensor compute_fused_maps(Vae& vae, LspnBank& bank,
                                 const FrameDataset& ds, int64_t chunk = 32);

void save_lspn(const std::filesystem::path& path, LspnBank& bank);
LspnBank load_lspn(const std::filesystem::path& path);

}  // namespace permakey
