#include "permakey/evaluation.hpp"

#include <png.h>

#include <algorithm>
#include <cstdio>
#include <limits>
#include <memory>

#include "permakey/errors.hpp"
#include "permakey/pointnet.hpp"
#include "permakey/tensor_utils.hpp"

namespace permakey {

namespace {

torch::Tensor render_masks(const torch::Tensor& centers, double sigma,
                           int64_t h, int64_t w) {
  if (centers.dim() != 2 || centers.size(1) != 2)
    throw ShapeError("centers must be [K, 2], got " +
                     shape_string(centers.sizes()));
  return gaussian_maps(centers.to(torch::kFloat), sigma, h, w);
}

}  // namespace

CoverageEntry keypoint_coverage(const torch::Tensor& centers, double sigma,
                                const SpriteScene& scene, double threshold) {
  CoverageEntry out;
  out.total = static_cast<int64_t>(scene.instance_masks.size());
  for (const auto& m : scene.instance_masks)
    if (!m.any().item<bool>())
      throw PreconditionError("sprite instance mask is empty");
  if (centers.size(0) == 0) return out;
  const auto h = scene.frame.pixels().size(1), w = scene.frame.pixels().size(2);
  auto peak = render_masks(centers, sigma, h, w).amax(0);
  for (const auto& m : scene.instance_masks) {
    if (peak.masked_select(m).max().item<double>() >= threshold) ++out.covered;
  }
  return out;
}

double distractor_capture_rate(const torch::Tensor& centers, double sigma,
                               const torch::Tensor& distractor_mask,
                               double threshold) {
  const int64_t k = centers.size(0);
  if (k == 0 || !distractor_mask.any().item<bool>()) return 0.0;
  auto masks = render_masks(centers, sigma, distractor_mask.size(0),
                            distractor_mask.size(1));
  auto on_bar = masks.masked_select(distractor_mask.unsqueeze(0).expand_as(masks))
                    .view({k, -1})
                    .amax(1);
  return (on_bar >= threshold).sum().item<double>() / static_cast<double>(k);
}

CoverageReport summarize_fractions(std::vector<double> per_frame) {
  CoverageReport r;
  r.per_frame = std::move(per_frame);
  if (r.per_frame.empty()) return r;
  for (double v : r.per_frame) r.mean += v;
  r.mean /= static_cast<double>(r.per_frame.size());
  for (double v : r.per_frame) r.std += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(r.per_frame.size()));
  return r;
}

nlohmann::json CoverageReport::to_json() const {
  return {{"mean", mean}, {"std", std}, {"frames", per_frame.size()}};
}

std::vector<int64_t> hungarian(const std::vector<std::vector<double>>& cost) {
  const size_t n = cost.size();
  for (const auto& row : cost)
    if (row.size() != n) throw ShapeError("cost matrix must be square");
  if (n == 0) return {};
  // Shortest augmenting paths with row/column potentials (1-indexed).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<size_t> match(n + 1, 0), way(n + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    match[0] = i;
    size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const size_t i0 = match[j0];
      double delta = inf;
      size_t j1 = 0;
      for (size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int64_t> assignment(n, -1);
  for (size_t j = 1; j <= n; ++j) assignment[match[j] - 1] = static_cast<int64_t>(j - 1);
  return assignment;
}

double matched_distance(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.dim() != 2 || a.size(1) != 2 || b.sizes() != a.sizes())
    throw ShapeError("matched_distance needs two [K, 2] sets, got " +
                     shape_string(a.sizes()) + " and " + shape_string(b.sizes()));
  const int64_t k = a.size(0);
  if (k == 0) return 0.0;
  auto d = torch::cdist(a.to(torch::kDouble), b.to(torch::kDouble)).contiguous();
  auto acc = d.accessor<double, 2>();
  std::vector<std::vector<double>> cost(k, std::vector<double>(k));
  for (int64_t i = 0; i < k; ++i)
    for (int64_t j = 0; j < k; ++j) cost[i][j] = acc[i][j];
  const auto assign = hungarian(cost);
  double total = 0.0;
  for (int64_t i = 0; i < k; ++i) total += cost[i][assign[i]];
  return total / static_cast<double>(k);
}

nlohmann::json StabilityReport::to_json() const {
  return {{"mean", mean}, {"frames", per_frame.size()}};
}

StabilityReport stability_across_seeds(const std::vector<torch::Tensor>& runs) {
  if (runs.size() < 2) throw PreconditionError("stability needs >= 2 runs");
  for (const auto& r : runs) {
    if (r.dim() != 3 || r.size(2) != 2)
      throw ShapeError("runs must be [F, K, 2]");
    if (r.size(1) != runs[0].size(1))
      throw ConfigError("runs disagree on the number of keypoints");
    if (r.size(0) != runs[0].size(0))
      throw PreconditionError("runs must cover the same frames");
  }
  StabilityReport rep;
  const int64_t frames = runs[0].size(0);
  for (int64_t f = 0; f < frames; ++f) {
    double total = 0.0;
    int64_t pairs = 0;
    for (size_t a = 0; a < runs.size(); ++a)
      for (size_t b = a + 1; b < runs.size(); ++b) {
        total += matched_distance(runs[a][f], runs[b][f]);
        ++pairs;
      }
    rep.per_frame.push_back(total / static_cast<double>(pairs));
  }
  for (double v : rep.per_frame) rep.mean += v;
  if (frames) rep.mean /= static_cast<double>(frames);
  return rep;
}

const std::vector<std::array<uint8_t, 3>>& keypoint_palette() {
  static const std::vector<std::array<uint8_t, 3>> palette = {
      {230, 25, 75},  {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
      {245, 130, 48}, {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
      {210, 245, 60}, {250, 190, 212}, {0, 128, 128},  {220, 190, 255},
      {170, 110, 40}, {255, 250, 200}, {128, 0, 0},    {170, 255, 195},
      {128, 128, 0},  {255, 215, 180}, {0, 0, 128},    {128, 128, 128}};
  return palette;
}

namespace {

torch::Tensor to_u8_hwc(const torch::Tensor& chw) {
  return (chw.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).permute({1, 2, 0});
}

// Dark blue -> teal -> yellow ramp.
torch::Tensor heat_colors(const torch::Tensor& map) {
  auto lo = map.min(), hi = map.max();
  auto t = ((map - lo) / (hi - lo).clamp_min(1e-12)).unsqueeze(-1);
  auto c0 = torch::tensor({0.27f, 0.00f, 0.33f});
  auto c1 = torch::tensor({0.13f, 0.57f, 0.55f});
  auto c2 = torch::tensor({0.99f, 0.91f, 0.14f});
  auto first = c0 + (c1 - c0) * (t * 2.0);
  auto second = c1 + (c2 - c1) * (t * 2.0 - 1.0);
  auto rgb = torch::where(t < 0.5, first, second);
  return (rgb.clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8);
}

void draw_marker(torch::Tensor& tile, double x, double y,
                 const std::array<uint8_t, 3>& color) {
  const int64_t h = tile.size(0), w = tile.size(1);
  const double col = (x + 1.0) * 0.5 * static_cast<double>(w) - 0.5;
  const double row = (y + 1.0) * 0.5 * static_cast<double>(h) - 0.5;
  const double radius = std::max(1.5, static_cast<double>(w) / 42.0);
  auto acc = tile.accessor<uint8_t, 3>();
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      const double dr = static_cast<double>(r) - row;
      const double dc = static_cast<double>(c) - col;
      if (dr * dr + dc * dc <= radius * radius)
        for (int ch = 0; ch < 3; ++ch) acc[r][c][ch] = color[ch];
    }
}

torch::Tensor upscale(const torch::Tensor& hwc, int64_t scale) {
  if (scale == 1) return hwc;
  return hwc.repeat_interleave(scale, 0).repeat_interleave(scale, 1);
}

}  // namespace

OverlayImage render_overlay(const torch::Tensor& frames,
                            const std::optional<torch::Tensor>& centers,
                            const std::optional<torch::Tensor>& maps,
                            int64_t scale) {
  if (frames.dim() != 4 || frames.size(1) != 3)
    throw ShapeError("frames must be [N, 3, H, W]");
  if (scale < 1) throw ParameterError("scale must be >= 1");
  const int64_t n = frames.size(0), h = frames.size(2) * scale,
                w = frames.size(3) * scale;
  std::vector<torch::Tensor> rows;
  std::vector<torch::Tensor> plain, marked;
  for (int64_t i = 0; i < n; ++i) {
    auto tile = upscale(to_u8_hwc(frames[i]), scale).contiguous();
    plain.push_back(tile);
    auto over = tile.clone();
    if (centers) {
      auto c = centers->to(torch::kDouble)[i].contiguous();
      for (int64_t k = 0; k < c.size(0); ++k)
        draw_marker(over, c[k][0].item<double>(), c[k][1].item<double>(),
                    keypoint_palette()[k % keypoint_palette().size()]);
    }
    marked.push_back(over);
  }
  rows.push_back(torch::cat(plain, 1));
  rows.push_back(torch::cat(marked, 1));
  if (maps) {
    if (maps->dim() != 4 || maps->size(0) != n)
      throw ShapeError("maps must be [N, M, H, W]");
    for (int64_t m = 0; m < maps->size(1); ++m) {
      std::vector<torch::Tensor> tiles;
      for (int64_t i = 0; i < n; ++i) {
        auto map = (*maps)[i][m].to(torch::kFloat).unsqueeze(0).unsqueeze(0);
        map = torch::nn::functional::interpolate(
                  map, torch::nn::functional::InterpolateFuncOptions()
                           .size(std::vector<int64_t>{h, w})
                           .mode(torch::kNearest))[0][0];
        tiles.push_back(heat_colors(map));
      }
      rows.push_back(torch::cat(tiles, 1));
    }
  }
  return {torch::cat(rows, 0).contiguous()};
}

void write_png(const std::filesystem::path& path, const OverlayImage& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto pixels = image.pixels.contiguous();
  if (pixels.dim() != 3 || pixels.size(2) != 3 || pixels.scalar_type() != torch::kUInt8)
    throw ShapeError("PNG pixels must be uint8 [H, W, 3]");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), std::fclose);
  if (!fp) throw IoError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  const auto h = static_cast<png_uint_32>(pixels.size(0));
  const auto w = static_cast<png_uint_32>(pixels.size(1));
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  auto* data = pixels.data_ptr<uint8_t>();
  for (png_uint_32 r = 0; r < h; ++r)
    png_write_row(png, data + static_cast<size_t>(r) * w * 3);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

OverlayImage read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), std::fclose);
  if (!fp) throw IoError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  torch::Tensor pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed reading " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const auto w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  pixels = torch::empty({static_cast<int64_t>(h), static_cast<int64_t>(w), 3}, torch::kUInt8);
  auto* data = pixels.data_ptr<uint8_t>();
  for (png_uint_32 r = 0; r < h; ++r)
    png_read_row(png, data + static_cast<size_t>(r) * w * 3, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return {pixels};
}

}  // namespace permakey
