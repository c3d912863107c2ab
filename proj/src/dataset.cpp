#include "permakey/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "permakey/errors.hpp"
#include "permakey/tensor_utils.hpp"

namespace permakey {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

std::string to_string(Split split) {
  switch (split) {
    case Split::kAll: return "all";
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "all";
}

Split split_from_string(const std::string& name) {
  if (name == "all") return Split::kAll;
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ParameterError("unknown split '" + name + "'");
}

FrameDataset::FrameDataset(torch::Tensor frames_u8,
                           std::vector<int64_t> episode_ids,
                           std::vector<int64_t> steps,
                           std::optional<torch::Tensor> labels,
                           int64_t n_instances, Split split)
    : frames_(std::move(frames_u8)),
      episode_ids_(std::move(episode_ids)),
      steps_(std::move(steps)),
      labels_(std::move(labels)),
      n_instances_(n_instances),
      split_(split) {
  if (frames_.dim() != 4 || frames_.size(1) != kFrameSize ||
      frames_.size(2) != kFrameSize || frames_.size(3) != kFrameChannels ||
      frames_.scalar_type() != torch::kUInt8)
    throw ShapeError("FrameDataset expects uint8 [N, 84, 84, 3], got " +
                     shape_string(frames_.sizes()));
  const auto n = static_cast<size_t>(frames_.size(0));
  if (episode_ids_.empty()) episode_ids_.assign(n, 0);
  if (steps_.empty()) {
    steps_.resize(n);
    std::iota(steps_.begin(), steps_.end(), 0);
  }
  if (episode_ids_.size() != n || steps_.size() != n)
    throw ShapeError("FrameDataset index arrays do not match frame count");
  if (labels_)
    check_shape(*labels_, {frames_.size(0), kFrameSize, kFrameSize},
                "FrameDataset labels");
}

Frame FrameDataset::frame(int64_t index) const {
  return Frame::from_hwc_bytes(frames_[index]);
}

torch::Tensor FrameDataset::batch(std::span<const int64_t> indices) const {
  auto idx = torch::tensor(std::vector<int64_t>(indices.begin(), indices.end()),
                           torch::kInt64);
  return frames_.index_select(0, idx)
      .permute({0, 3, 1, 2})
      .to(torch::kFloat32)
      .div(255.0)
      .contiguous();
}

torch::Tensor FrameDataset::all_frames() const {
  return frames_.permute({0, 3, 1, 2}).to(torch::kFloat32).div(255.0)
      .contiguous();
}

SpriteScene FrameDataset::scene(int64_t index) const {
  if (!labels_) throw PreconditionError("dataset carries no ground truth");
  return SpriteScene::from_label_map(frame(index), (*labels_)[index],
                                     n_instances_);
}

FrameDataset FrameDataset::slice(int64_t begin, int64_t end,
                                 Split split) const {
  if (begin < 0 || end > size() || begin > end)
    throw SizeError("slice out of range");
  std::optional<torch::Tensor> labels;
  if (labels_) labels = labels_->slice(0, begin, end).clone();
  return FrameDataset(
      frames_.slice(0, begin, end).clone(),
      std::vector<int64_t>(episode_ids_.begin() + begin,
                           episode_ids_.begin() + end),
      std::vector<int64_t>(steps_.begin() + begin, steps_.begin() + end),
      std::move(labels), n_instances_, split);
}

DatasetSplits split_dataset(const FrameDataset& ds, SplitSizes sizes) {
  if (sizes.train < 0 || sizes.val < 0 || sizes.test < 0)
    throw SizeError("negative split size");
  const int64_t total = sizes.train + sizes.val + sizes.test;
  if (total > ds.size())
    throw SizeError("requested splits (" + std::to_string(total) +
                    " frames) exceed dataset size " +
                    std::to_string(ds.size()));
  const int64_t a = sizes.train;
  const int64_t b = a + sizes.val;
  return {ds.slice(0, a, Split::kTrain), ds.slice(a, b, Split::kVal),
          ds.slice(b, total, Split::kTest)};
}

const std::vector<std::array<float, 3>>& distractor_palette() {
  static const std::vector<std::array<float, 3>> palette = {
      {0.95f, 0.85f, 0.20f}, {0.90f, 0.30f, 0.85f}, {0.20f, 0.90f, 0.90f},
      {1.00f, 0.55f, 0.10f}, {0.95f, 0.95f, 0.95f}, {0.55f, 0.95f, 0.25f},
  };
  return palette;
}

DistractorSpec DistractorSpec::from_palette(DistractorMode mode, uint64_t seed,
                                            int bar_thickness) {
  const auto& palette = distractor_palette();
  DistractorSpec spec;
  spec.mode = mode;
  spec.bar_thickness = bar_thickness;
  spec.color = palette[seed % palette.size()];
  spec.rng_seed = seed;
  return spec;
}

namespace {

void validate(const DistractorSpec& spec) {
  if (spec.bar_thickness < 1 || spec.bar_thickness > kFrameSize)
    throw ParameterError("bar thickness must be in [1, 84]");
  for (float c : spec.color)
    if (c < 0.f || c > 1.f) throw ParameterError("bar color outside [0,1]");
}

// bool [84, 84] mask of one or two bars; consumes one offset draw per bar.
torch::Tensor draw_bar_mask(const DistractorSpec& spec, std::mt19937_64& rng) {
  std::uniform_int_distribution<int64_t> offset(
      0, kFrameSize - spec.bar_thickness);
  auto mask = torch::zeros({kFrameSize, kFrameSize}, torch::kBool);
  if (spec.mode != DistractorMode::kVertical) {
    const int64_t row = offset(rng);
    mask.slice(0, row, row + spec.bar_thickness).fill_(true);
  }
  if (spec.mode != DistractorMode::kHorizontal) {
    const int64_t col = offset(rng);
    mask.slice(1, col, col + spec.bar_thickness).fill_(true);
  }
  return mask;
}

}  // namespace

DistractedFrame apply_distractor(const Frame& frame, const DistractorSpec& spec,
                                 std::mt19937_64& rng) {
  validate(spec);
  auto mask = draw_bar_mask(spec, rng);
  auto color = torch::tensor({spec.color[0], spec.color[1], spec.color[2]})
                   .view({3, 1, 1})
                   .expand({3, kFrameSize, kFrameSize});
  auto out = torch::where(mask.unsqueeze(0), color, frame.pixels());
  return {Frame(out.contiguous()), mask};
}

torch::Tensor apply_distractor_batch(torch::Tensor& batch,
                                     const DistractorSpec& spec,
                                     std::mt19937_64& rng) {
  validate(spec);
  if (batch.dim() != 4 || batch.size(1) != 3 || batch.size(2) != kFrameSize ||
      batch.size(3) != kFrameSize)
    throw ShapeError("distractor batch must be [B, 3, 84, 84]");
  std::vector<torch::Tensor> masks;
  auto color = torch::tensor({spec.color[0], spec.color[1], spec.color[2]})
                   .view({3, 1, 1});
  for (int64_t b = 0; b < batch.size(0); ++b) {
    auto mask = draw_bar_mask(spec, rng);
    batch[b].copy_(torch::where(mask.unsqueeze(0), color, batch[b]));
    masks.push_back(mask);
  }
  return torch::stack(masks);
}

namespace {

torch::Tensor to_frame_pixels(const torch::Tensor& obs) {
  if (obs.dim() != 3 || (obs.size(0) != 1 && obs.size(0) != 3))
    throw ShapeError("visual observation must be CHW with 1 or 3 channels, got " +
                     shape_string(obs.sizes()));
  auto x = obs.to(torch::kFloat32);
  if (x.size(0) == 1) x = x.expand({3, x.size(1), x.size(2)});
  if (x.size(1) != kFrameSize || x.size(2) != kFrameSize) {
    x = F::interpolate(x.unsqueeze(0),
                       F::InterpolateFuncOptions()
                           .size(std::vector<int64_t>{kFrameSize, kFrameSize})
                           .mode(torch::kBilinear)
                           .align_corners(false))
            .squeeze(0);
  }
  return x.clamp(0.0, 1.0).contiguous();
}

}  // namespace

FrameDataset collect_frames(Environment& env, const ActionSampler& policy,
                            int64_t n_frames, uint64_t seed) {
  if (n_frames < 1) throw ParameterError("n_frames must be >= 1");
  std::mt19937_64 rng(seed);
  auto frames = torch::empty({n_frames, kFrameSize, kFrameSize, kFrameChannels},
                             torch::kUInt8);
  std::vector<int64_t> episodes, steps;
  std::vector<torch::Tensor> labels;
  int64_t n_instances = 0;
  bool with_labels = true;
  int64_t count = 0;
  int64_t episode = 0;
  int64_t step = 0;

  auto record = [&](const torch::Tensor& obs) {
    frames[count].copy_(Frame(to_frame_pixels(obs)).to_hwc_bytes());
    episodes.push_back(episode);
    steps.push_back(step);
    if (with_labels) {
      if (auto scene = env.ground_truth()) {
        labels.push_back(scene->to_label_map());
        n_instances = std::max<int64_t>(
            n_instances, static_cast<int64_t>(scene->instance_masks.size()));
      } else {
        with_labels = false;
        labels.clear();
      }
    }
    ++count;
  };

  if (!env.can_reset())
    throw CollectionExhaustedError("environment cannot start an episode");
  torch::Tensor obs = env.reset();
  record(obs);
  while (count < n_frames) {
    auto result = env.step(policy(obs, rng));
    obs = result.observation;
    ++step;
    // Terminal observations are recorded too.
    record(obs);
    if (count == n_frames) break;
    if (result.done) {
      if (!env.can_reset())
        throw CollectionExhaustedError(
            "environment terminated after " + std::to_string(count) + " of " +
            std::to_string(n_frames) + " frames");
      obs = env.reset();
      ++episode;
      step = 0;
      record(obs);
    }
  }
  std::optional<torch::Tensor> label_tensor;
  if (with_labels && !labels.empty()) label_tensor = torch::stack(labels);
  return FrameDataset(frames, std::move(episodes), std::move(steps),
                      std::move(label_tensor), n_instances, Split::kAll);
}

std::vector<std::vector<int64_t>> epoch_batches(int64_t n, int64_t batch_size,
                                                uint64_t seed, int64_t epoch) {
  if (batch_size < 1) throw ParameterError("batch size must be >= 1");
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + static_cast<uint64_t>(epoch));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int64_t>> batches;
  for (int64_t i = 0; i < n; i += batch_size)
    batches.emplace_back(order.begin() + i,
                         order.begin() + std::min(n, i + batch_size));
  return batches;
}

void write_tensor_file(const fs::path& path, const torch::Tensor& t) {
  auto c = t.contiguous().cpu();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(static_cast<const char*>(c.data_ptr()),
            static_cast<std::streamsize>(c.nbytes()));
  if (!out) throw IoError("failed writing " + path.string());
}

torch::Tensor read_tensor_file(const fs::path& path, c10::ScalarType dtype,
                               std::vector<int64_t> sizes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  auto t = torch::empty(sizes, dtype);
  in.read(static_cast<char*>(t.data_ptr()),
          static_cast<std::streamsize>(t.nbytes()));
  if (in.gcount() != static_cast<std::streamsize>(t.nbytes()))
    throw IoError(path.string() + " is truncated");
  return t;
}

void write_split(const fs::path& root, const FrameDataset& ds) {
  const fs::path dir = root / to_string(ds.split());
  fs::create_directories(dir);
  write_tensor_file(dir / "frames.bin", ds.raw_frames());
  if (ds.labels()) write_tensor_file(dir / "labels.bin", *ds.labels());
  nlohmann::json meta = {
      {"split", to_string(ds.split())},
      {"count", ds.size()},
      {"height", kFrameSize},
      {"width", kFrameSize},
      {"channels", kFrameChannels},
      {"dtype", "uint8"},
      {"layout", "NHWC"},
      {"episode_ids", ds.episode_ids()},
      {"steps", ds.steps()},
      {"has_labels", ds.has_ground_truth()},
      {"n_instances", ds.n_instances()},
  };
  std::ofstream out(dir / "meta.json");
  out << meta.dump(1) << "\n";
  if (!out) throw IoError("failed writing " + (dir / "meta.json").string());
}

FrameDataset read_split(const fs::path& root, Split split) {
  const fs::path dir = root / to_string(split);
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError("missing " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed " + (dir / "meta.json").string() + ": " + e.what());
  }
  const int64_t n = meta.at("count").get<int64_t>();
  auto frames = read_tensor_file(dir / "frames.bin", torch::kUInt8,
                                 {n, kFrameSize, kFrameSize, kFrameChannels});
  std::optional<torch::Tensor> labels;
  if (meta.value("has_labels", false))
    labels = read_tensor_file(dir / "labels.bin", torch::kUInt8,
                              {n, kFrameSize, kFrameSize});
  return FrameDataset(frames, meta.at("episode_ids").get<std::vector<int64_t>>(),
                      meta.at("steps").get<std::vector<int64_t>>(),
                      std::move(labels), meta.value("n_instances", int64_t{0}),
                      split);
}

}  // namespace permakey
