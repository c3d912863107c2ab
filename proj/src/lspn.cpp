#include "permakey/lspn.hpp"

#include <algorithm>

#include "permakey/errors.hpp"
#include "permakey/tensor_utils.hpp"

namespace permakey {

namespace F = torch::nn::functional;
using torch::indexing::Slice;

const std::array<std::pair<int, int>, kNeighbors>& neighbor_offsets() {
  static const std::array<std::pair<int, int>, kNeighbors> offsets = {{
      {-1, -1}, {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1},
  }};
  return offsets;
}

torch::Tensor patch_grid_batch(const torch::Tensor& maps, int64_t patch) {
  if (maps.dim() != 4) throw ShapeError("feature maps must be [N, C, H, W]");
  if (patch < 1) throw ParameterError("patch side must be >= 1");
  const int64_t n = maps.size(0), c = maps.size(1), h = maps.size(2),
                w = maps.size(3);
  if (h < 3 * patch || w < 3 * patch)
    throw SizeError("feature map " + std::to_string(h) + "x" +
                    std::to_string(w) + " is smaller than 3p = " +
                    std::to_string(3 * patch));
  const int64_t gh = h / patch, gw = w / patch;
  return maps.index({Slice(), Slice(), Slice(0, gh * patch), Slice(0, gw * patch)})
      .reshape({n, c, gh, patch, gw, patch})
      .permute({0, 2, 4, 3, 5, 1})
      .reshape({n, gh, gw, patch * patch * c});
}

PatchGrid extract_patch_grid(const torch::Tensor& feature_map, int64_t patch,
                             int64_t layer) {
  if (feature_map.dim() != 3) throw ShapeError("feature map must be [C, H, W]");
  PatchGrid grid;
  grid.patches = patch_grid_batch(feature_map.unsqueeze(0), patch).squeeze(0);
  grid.patch = patch;
  grid.channels = feature_map.size(0);
  grid.layer = layer;
  return grid;
}

torch::Tensor unpatch(const PatchGrid& grid) {
  const int64_t gh = grid.rows(), gw = grid.cols(), p = grid.patch,
                c = grid.channels;
  return grid.patches.reshape({gh, gw, p, p, c})
      .permute({4, 0, 2, 1, 3})
      .reshape({c, gh * p, gw * p});
}

torch::Tensor neighborhood(const PatchGrid& grid, int64_t i, int64_t j) {
  if (i < 1 || j < 1 || i >= grid.rows() - 1 || j >= grid.cols() - 1)
    throw BorderError("cell (" + std::to_string(i) + ", " + std::to_string(j) +
                      ") lacks a full 8-neighbourhood");
  std::vector<torch::Tensor> parts;
  for (auto [dr, dc] : neighbor_offsets())
    parts.push_back(grid.patches.index({i + dr, j + dc}));
  return torch::cat(parts);
}

InteriorCells interior_neighborhoods(const torch::Tensor& grid) {
  const int64_t gh = grid.size(1), gw = grid.size(2);
  std::vector<torch::Tensor> parts;
  for (auto [dr, dc] : neighbor_offsets())
    parts.push_back(grid.index({Slice(), Slice(1 + dr, gh - 1 + dr),
                                Slice(1 + dc, gw - 1 + dc)}));
  return {torch::cat(parts, -1),
          grid.index({Slice(), Slice(1, gh - 1), Slice(1, gw - 1)})};
}

nlohmann::json LspnConfig::to_json() const {
  return {{"layers", layers},
          {"patch", patch},
          {"hidden", hidden},
          {"cells_per_image", cells_per_image},
          {"map_size", map_size}};
}

LspnConfig LspnConfig::from_json(const nlohmann::json& j) {
  LspnConfig c;
  c.layers = j.at("layers").get<std::vector<int64_t>>();
  c.patch = j.at("patch").get<int64_t>();
  c.hidden = j.at("hidden").get<std::vector<int64_t>>();
  c.cells_per_image = j.value("cells_per_image", int64_t{0});
  c.map_size = j.value("map_size", kFrameSize);
  return c;
}

LspnImpl::LspnImpl(int64_t channels, int64_t patch, std::vector<int64_t> hidden)
    : channels_(channels), patch_(patch) {
  const int64_t d = patch * patch * channels;
  std::vector<int64_t> sizes{kNeighbors * d};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(d);
  mlp_ = register_module("mlp", Mlp(sizes, OutputActivation::kLinear));
}

torch::Tensor LspnImpl::forward(const torch::Tensor& neighborhoods) {
  return mlp_->forward(neighborhoods);
}

LspnBankImpl::LspnBankImpl(LspnConfig config,
                           const std::vector<int64_t>& layer_channels)
    : config_(std::move(config)) {
  if (config_.layers.empty()) throw ConfigError("LSPN needs at least one layer");
  if (layer_channels.size() != config_.layers.size())
    throw ConfigError("one channel count per LSPN layer required");
  for (size_t m = 0; m < config_.layers.size(); ++m)
    nets_.push_back(register_module(
        "layer" + std::to_string(config_.layers[m]),
        Lspn(layer_channels[m], config_.patch, config_.hidden)));
}

std::vector<int64_t> LspnBankImpl::layer_channels() const {
  std::vector<int64_t> out;
  for (const auto& n : nets_) out.push_back(n->channels());
  return out;
}

namespace {

torch::Tensor check_maps(Lspn& net, const torch::Tensor& maps) {
  if (maps.dim() != 4 || maps.size(1) != net->channels())
    throw ShapeError("LSPN expects [N, " + std::to_string(net->channels()) +
                     ", H, W] maps, got " + shape_string(maps.sizes()));
  if (maps.size(0) == 0) throw SizeError("LSP batch is empty");
  return maps.detach();
}

}  // namespace

torch::Tensor lsp_loss(Lspn& net, const torch::Tensor& maps) {
  auto grid = patch_grid_batch(check_maps(net, maps), net->patch());
  auto cells = interior_neighborhoods(grid);
  auto pred = net->forward(cells.inputs);
  auto loss = (pred - cells.centers).pow(2).mean();
  check_finite(loss.unsqueeze(0), "LSP loss");
  return loss;
}

torch::Tensor lsp_loss_sampled(Lspn& net, const torch::Tensor& maps,
                               int64_t cells_per_image, at::Generator& gen) {
  auto grid = patch_grid_batch(check_maps(net, maps), net->patch());
  const int64_t n = grid.size(0), gh = grid.size(1), gw = grid.size(2);
  const int64_t count = n * cells_per_image;
  auto opts = torch::TensorOptions().dtype(torch::kInt64);
  auto img = torch::arange(n, opts).repeat_interleave(cells_per_image);
  auto row = torch::randint(1, gh - 1, {count}, gen, opts);
  auto col = torch::randint(1, gw - 1, {count}, gen, opts);
  std::vector<torch::Tensor> parts;
  for (auto [dr, dc] : neighbor_offsets())
    parts.push_back(grid.index({img, row + dr, col + dc}));
  auto pred = net->forward(torch::cat(parts, -1));
  auto loss = (pred - grid.index({img, row, col})).pow(2).mean();
  check_finite(loss.unsqueeze(0), "LSP loss");
  return loss;
}

torch::Tensor cell_errors(Lspn& net, const torch::Tensor& maps) {
  auto grid = patch_grid_batch(check_maps(net, maps), net->patch());
  auto cells = interior_neighborhoods(grid);
  auto err = (net->forward(cells.inputs) - cells.centers).pow(2).mean(-1);
  return F::pad(err.unsqueeze(1),
                F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate))
      .squeeze(1);
}

PredictabilityMap error_map(const FeatureStack& features, LspnBank& bank) {
  const auto& cfg = bank->config();
  PredictabilityMap out;
  std::vector<torch::Tensor> resized;
  for (size_t m = 0; m < bank->size(); ++m) {
    const auto layer = static_cast<size_t>(cfg.layers[m]);
    if (layer >= features.layers.size())
      throw ShapeError("feature stack lacks layer " + std::to_string(layer));
    auto err = cell_errors(bank->net(m), features.layers[layer]);
    out.errors.push_back(err);
    resized.push_back(F::interpolate(
        err.unsqueeze(1),
        F::InterpolateFuncOptions()
            .size(std::vector<int64_t>{cfg.map_size, cfg.map_size})
            .mode(torch::kBilinear)
            .align_corners(false)));
  }
  out.fused = torch::cat(resized, 1);
  return out;
}

FeatureStack lspn_features(Vae& vae, const torch::Tensor& frames,
                           const LspnConfig& config) {
  torch::NoGradGuard no_grad;
  vae->eval();
  const auto deepest = *std::max_element(config.layers.begin(),
                                         config.layers.end());
  return vae->features(frames, static_cast<size_t>(deepest));
}

LspnTrainResult train_lspn(LspnBank& bank, Vae& vae, const FrameDataset& train,
                           const FrameDataset& val,
                           const OptimSchedule& schedule) {
  const auto& cfg = bank->config();
  auto gen = at::detail::createCPUGenerator(schedule.seed + 29);
  auto loss_on = [&](const torch::Tensor& frames, at::Generator& g) {
    auto feats = lspn_features(vae, frames, cfg);
    torch::Tensor total;
    for (size_t m = 0; m < bank->size(); ++m) {
      const auto& maps = feats.layers[static_cast<size_t>(cfg.layers[m])];
      auto l = cfg.cells_per_image > 0
                   ? lsp_loss_sampled(bank->net(m), maps, cfg.cells_per_image, g)
                   : lsp_loss(bank->net(m), maps);
      total = total.defined() ? total + l : l;
    }
    return total;
  };
  LspnTrainResult result;
  result.histories.push_back(fit(
      *bank, train.size(), schedule,
      [&](const std::vector<int64_t>& idx) {
        return loss_on(train.batch(idx), gen);
      },
      [&] {
        if (val.size() == 0) return 0.0;
        auto val_gen = at::detail::createCPUGenerator(schedule.seed + 31);
        double total = 0.0;
        int64_t count = 0;
        for (const auto& b : epoch_batches(val.size(), 32, 0, 0)) {
          total += loss_on(val.batch(b), val_gen).item<double>() *
                   static_cast<double>(b.size());
          count += static_cast<int64_t>(b.size());
        }
        return total / static_cast<double>(count);
      },
      "lspn"));
  return result;
}

torch::Tensor compute_fused_maps(Vae& vae, LspnBank& bank,
                                 const FrameDataset& ds, int64_t chunk) {
  torch::NoGradGuard no_grad;
  bank->eval();
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < ds.size(); i += chunk) {
    std::vector<int64_t> idx;
    for (int64_t k = i; k < std::min(ds.size(), i + chunk); ++k)
      idx.push_back(k);
    auto frames = ds.batch(idx);
    out.push_back(
        error_map(lspn_features(vae, frames, bank->config()), bank).fused);
  }
  return torch::cat(out, 0);
}

void save_lspn(const std::filesystem::path& path, LspnBank& bank) {
  nlohmann::json cfg = {{"kind", "lspn"},
                        {"config", bank->config().to_json()},
                        {"layer_channels", bank->layer_channels()}};
  save_checkpoint(path, *bank, cfg);
}

LspnBank load_lspn(const std::filesystem::path& path) {
  auto cfg = read_checkpoint_config(path);
  if (cfg.value("kind", "") != "lspn")
    throw IoError(path.string() + " is not an LSPN checkpoint");
  LspnBank bank(LspnConfig::from_json(cfg.at("config")),
                cfg.at("layer_channels").get<std::vector<int64_t>>());
  load_checkpoint_weights(path, *bank);
  bank->eval();
  return bank;
}

}  // namespace permakey
