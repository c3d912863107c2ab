#include <gtest/gtest.h>

#include <set>

#include "permakey/dataset.hpp"
#include "permakey/errors.hpp"
#include "permakey/sprites_env.hpp"
#include "test_util.hpp"

using namespace permakey;

namespace {

class BlackEnv : public Environment {
 public:
  torch::Tensor reset() override { return torch::zeros({3, 84, 84}); }
  StepResult step(int64_t) override { return {torch::zeros({3, 84, 84}), 0.0, false}; }
  int64_t num_actions() const override { return 2; }
  void seed(uint64_t) override {}
};

// Ends after three steps and refuses further resets.
class OneShotEnv : public Environment {
 public:
  torch::Tensor reset() override {
    used_ = true;
    t_ = 0;
    return torch::zeros({3, 84, 84});
  }
  StepResult step(int64_t) override {
    ++t_;
    return {torch::zeros({3, 84, 84}), 0.0, t_ >= 3};
  }
  int64_t num_actions() const override { return 1; }
  void seed(uint64_t) override {}
  bool can_reset() const override { return !used_; }

 private:
  bool used_ = false;
  int t_ = 0;
};

FrameDataset numbered(int64_t n) {
  auto frames = torch::zeros({n, 84, 84, 3}, torch::kUInt8);
  std::vector<int64_t> ep(n), st(n);
  for (int64_t i = 0; i < n; ++i) {
    frames[i].fill_(static_cast<int64_t>(i % 256));
    ep[i] = i / 4;
    st[i] = i % 4;
  }
  return FrameDataset(frames, ep, st, std::nullopt, 0, Split::kAll);
}

SpritesConfig three_sprites(uint64_t seed) {
  SpritesConfig c;
  c.n_rewards = 1;
  c.n_enemies = 1;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(CollectFrames, SpritesShapeAndRange) {
  SpritesEnv env(three_sprites(3));
  auto ds = collect_frames(env, uniform_random_policy(env.num_actions()), 100, 7);
  ASSERT_EQ(ds.size(), 100);
  auto x = ds.all_frames();
  EXPECT_EQ(x.sizes(), (std::vector<int64_t>{100, 3, 84, 84}));
  EXPECT_GE(x.min().item<float>(), 0.f);
  EXPECT_LE(x.max().item<float>(), 1.f);
  EXPECT_TRUE(ds.has_ground_truth());
}

TEST(CollectFrames, BlackScreens) {
  BlackEnv env;
  auto ds = collect_frames(env, uniform_random_policy(2), 10, 0);
  ASSERT_EQ(ds.size(), 10);
  EXPECT_EQ(ds.all_frames().abs().sum().item<float>(), 0.f);
  EXPECT_FALSE(ds.has_ground_truth());
}

TEST(CollectFrames, ExhaustedEnvironment) {
  OneShotEnv env;
  EXPECT_THROW(collect_frames(env, uniform_random_policy(1), 10, 0),
               CollectionExhaustedError);
}

TEST(CollectFrames, RejectsZeroFrames) {
  BlackEnv env;
  EXPECT_THROW(collect_frames(env, uniform_random_policy(2), 0, 0), ParameterError);
}

TEST(CollectFrames, FirstFrameMatchesDirectRasterization) {
  SpritesEnv env(three_sprites(11));
  auto ds = collect_frames(env, uniform_random_policy(env.num_actions()), 1, 0);
  // After collecting one frame the env still holds the reset state.
  const auto& sprites = env.sprites();
  ASSERT_EQ(sprites.size(), 3u);
  auto got = ds.frame(0).to_hwc_bytes();
  auto g = got.accessor<uint8_t, 3>();
  for (int r = 0; r < 84; ++r) {
    for (int c = 0; c < 84; ++c) {
      Rgb expect = env.background(r, c);
      for (const Sprite& s : sprites)
        if (s.covers(r, c)) expect = s.color;
      for (int k = 0; k < 3; ++k)
        ASSERT_EQ(g[r][c][k], static_cast<uint8_t>(std::nearbyint(expect[k] * 255.f)))
            << r << "," << c;
    }
  }
  auto labels = ds.labels()->index({0});
  auto l = labels.accessor<uint8_t, 2>();
  for (int r = 0; r < 84; ++r)
    for (int c = 0; c < 84; ++c) {
      int owner = 0;
      for (size_t i = 0; i < sprites.size(); ++i)
        if (sprites[i].covers(r, c)) owner = static_cast<int>(i) + 1;
      ASSERT_EQ(l[r][c], owner);
    }
}

TEST(SplitDataset, DefaultSizes) {
  auto ds = FrameDataset(torch::zeros({1, 84, 84, 3}, torch::kUInt8).expand({95000, 84, 84, 3}),
                         std::vector<int64_t>(95000, 0), std::vector<int64_t>(95000, 0),
                         std::nullopt, 0, Split::kAll);
  auto s = split_dataset(ds, SplitSizes{});
  EXPECT_EQ(s.train.size(), 85000);
  EXPECT_EQ(s.val.size(), 5000);
  EXPECT_EQ(s.test.size(), 5000);
}

TEST(SplitDataset, SmallDisjoint) {
  auto ds = numbered(10);
  auto s = split_dataset(ds, {8, 1, 1});
  ASSERT_EQ(s.train.size(), 8);
  ASSERT_EQ(s.val.size(), 1);
  ASSERT_EQ(s.test.size(), 1);
  EXPECT_EQ(s.train.split(), Split::kTrain);
  EXPECT_EQ(s.test.split(), Split::kTest);
  std::set<int> seen;
  for (const FrameDataset* part : {&s.train, &s.val, &s.test})
    for (int64_t i = 0; i < part->size(); ++i)
      EXPECT_TRUE(seen.insert(part->raw_frames()[i][0][0][0].item<int>()).second);
  EXPECT_EQ(seen.size(), 10u);
}

TEST(SplitDataset, TooLarge) {
  EXPECT_THROW(split_dataset(numbered(10), {8, 2, 2}), SizeError);
}

TEST(SplitDataset, PartitionProperty) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t n = 1 + static_cast<int64_t>(rng() % 60);
    auto ds = numbered(n);
    const int64_t a = rng() % (n + 1);
    const int64_t b = rng() % (n - a + 1);
    const int64_t c = rng() % (n - a - b + 1);
    auto s = split_dataset(ds, {a, b, c});
    EXPECT_EQ(s.train.size() + s.val.size() + s.test.size(), a + b + c);
    std::set<int64_t> ids;
    int64_t total = 0;
    for (const FrameDataset* part : {&s.train, &s.val, &s.test})
      for (int64_t i = 0; i < part->size(); ++i, ++total)
        ids.insert(part->episode_id(i) * 4 + part->step(i));
    EXPECT_EQ(static_cast<int64_t>(ids.size()), total);
  }
}

TEST(Distractor, HorizontalWhiteBandOnBlack) {
  DistractorSpec spec;
  spec.mode = DistractorMode::kHorizontal;
  spec.bar_thickness = 4;
  spec.color = {1.f, 1.f, 1.f};
  std::mt19937_64 rng(5);
  auto out = apply_distractor(Frame::zeros(), spec, rng);
  EXPECT_EQ(out.mask.sum().item<int64_t>(), 4 * 84);
  auto white = (out.frame.pixels() == 1.f).all(0);
  EXPECT_TRUE(torch::equal(white, out.mask));
  auto rows = out.mask.any(1).nonzero().flatten();
  ASSERT_EQ(rows.numel(), 4);
  EXPECT_EQ(rows[3].item<int64_t>() - rows[0].item<int64_t>(), 3);
  EXPECT_TRUE(out.mask.index({rows}).all().item<bool>());
}

TEST(Distractor, BothIsUnionOfBands) {
  DistractorSpec spec;
  spec.mode = DistractorMode::kBoth;
  spec.bar_thickness = 3;
  std::mt19937_64 rng(9);
  auto out = apply_distractor(Frame::zeros(), spec, rng);
  auto full_rows = out.mask.all(1);
  auto full_cols = out.mask.all(0);
  EXPECT_EQ(full_rows.sum().item<int64_t>(), 3);
  EXPECT_EQ(full_cols.sum().item<int64_t>(), 3);
  auto expect = full_rows.unsqueeze(1) | full_cols.unsqueeze(0);
  EXPECT_TRUE(torch::equal(expect, out.mask));
}

TEST(Distractor, DeterministicForSeed) {
  auto spec = DistractorSpec::from_palette(DistractorMode::kVertical, 4);
  auto f = Frame(torch::rand({3, 84, 84}));
  std::mt19937_64 a(21), b(21);
  auto x = apply_distractor(f, spec, a);
  auto y = apply_distractor(f, spec, b);
  EXPECT_TRUE(torch::equal(x.frame.pixels(), y.frame.pixels()));
  EXPECT_TRUE(torch::equal(x.mask, y.mask));
}

TEST(Distractor, OnlyMaskedPixelsChange) {
  std::mt19937_64 rng(3);
  for (auto mode : {DistractorMode::kHorizontal, DistractorMode::kVertical,
                    DistractorMode::kBoth}) {
    for (int t = 0; t < 20; ++t) {
      auto spec = DistractorSpec::from_palette(mode, t, 1 + t % 6);
      auto f = Frame(torch::rand({3, 84, 84}));
      auto out = apply_distractor(f, spec, rng);
      auto changed = (out.frame.pixels() != f.pixels()).any(0);
      EXPECT_TRUE((changed & ~out.mask).any().item<bool>() == false);
      auto outside = ~out.mask;
      EXPECT_TRUE(torch::equal(out.frame.pixels().masked_select(outside.unsqueeze(0).expand({3, 84, 84})),
                               f.pixels().masked_select(outside.unsqueeze(0).expand({3, 84, 84}))));
    }
  }
}

TEST(Distractor, RejectsZeroThickness) {
  DistractorSpec spec;
  spec.bar_thickness = 0;
  std::mt19937_64 rng(0);
  EXPECT_THROW(apply_distractor(Frame::zeros(), spec, rng), ParameterError);
}

TEST(Distractor, BatchMatchesMasks) {
  auto batch = torch::rand({5, 3, 84, 84});
  auto orig = batch.clone();
  auto spec = DistractorSpec::from_palette(DistractorMode::kHorizontal, 1);
  std::mt19937_64 rng(0);
  auto masks = apply_distractor_batch(batch, spec, rng);
  ASSERT_EQ(masks.sizes(), (std::vector<int64_t>{5, 84, 84}));
  auto changed = (batch != orig).any(1);
  EXPECT_FALSE((changed & ~masks).any().item<bool>());
}

TEST(SpritesEnvTest, ResetDeterministic) {
  SpritesConfig c;
  c.n_rewards = 2;
  c.n_enemies = 0;
  c.seed = 42;
  SpritesEnv a(c), b(c);
  EXPECT_TRUE(torch::equal(a.reset(), b.reset()));
  a.seed(42);
  auto first = a.reset();
  a.seed(42);
  EXPECT_TRUE(torch::equal(first, a.reset()));
}

TEST(SpritesEnvTest, CollectingRewardRespawns) {
  SpritesConfig c;
  c.n_rewards = 1;
  c.n_enemies = 0;
  c.seed = 1;
  SpritesEnv env(c);
  env.reset();
  Sprite agent = env.sprites()[0];
  agent.x = 10;
  agent.y = 10;
  agent.size = 10;
  Sprite reward = env.sprites()[1];
  reward.x = 22;
  reward.y = 10;
  reward.size = 10;
  env.set_sprites({agent, reward});
  auto r = env.step(4);  // right by agent_speed
  EXPECT_EQ(r.reward, 1.0);
  EXPECT_FALSE(r.done);
  const Sprite& moved = env.sprites()[1];
  EXPECT_FALSE(moved.x == 22 && moved.y == 10);
}

TEST(SpritesEnvTest, StepAfterDone) {
  SpritesConfig c;
  c.max_steps = 2;
  c.n_enemies = 0;
  SpritesEnv env(c);
  env.reset();
  StepResult r;
  do r = env.step(0);
  while (!r.done);
  EXPECT_THROW(env.step(0), IllegalTransitionError);
}

TEST(SpritesEnvTest, BarIsFullBand) {
  for (auto orient : {BarOrientation::kHorizontal, BarOrientation::kVertical}) {
    SpritesConfig c = three_sprites(2);
    c.moving_bar = true;
    c.bar_orientation = orient;
    SpritesEnv env(c);
    env.reset();
    for (int t = 0; t < 60; ++t) {
      auto scene = *env.ground_truth();
      auto m = scene.distractor_mask;
      auto band = orient == BarOrientation::kHorizontal ? m.all(1) : m.all(0);
      auto any = orient == BarOrientation::kHorizontal ? m.any(1) : m.any(0);
      EXPECT_GE(band.sum().item<int64_t>(), 1);
      EXPECT_TRUE(torch::equal(band, any));
      if (env.step(0).done) env.reset();
    }
  }
}

TEST(SpritesEnvTest, GroundTruthMatchesRender) {
  SpritesConfig c = three_sprites(8);
  c.moving_bar = true;
  SpritesEnv env(c);
  env.reset();
  std::mt19937_64 rng(0);
  auto policy = uniform_random_policy(env.num_actions());
  for (int t = 0; t < 40; ++t) {
    auto scene = *env.ground_truth();
    ASSERT_EQ(scene.instance_masks.size(), 3u);
    auto pix = scene.frame.pixels();
    auto bar = scene.distractor_mask;
    for (size_t i = 0; i < scene.instance_masks.size(); ++i) {
      const auto& m = scene.instance_masks[i];
      EXPECT_GT(m.sum().item<int64_t>(), 0);
      for (size_t j = i + 1; j < scene.instance_masks.size(); ++j)
        EXPECT_FALSE((m & scene.instance_masks[j]).any().item<bool>());
      const Rgb col = env.sprites()[i].color;
      auto colour = torch::tensor({col[0], col[1], col[2]}).view({3, 1, 1});
      auto match = (pix == colour).all(0);
      EXPECT_FALSE((m & ~match).any().item<bool>());
      EXPECT_FALSE((m & bar).any().item<bool>());
    }
    auto r = env.step(policy(pix, rng));
    if (r.done) env.reset();
  }
}

TEST(SplitIo, RoundTrip) {
  test_support::TempDir dir;
  SpritesEnv env(three_sprites(4));
  auto ds = collect_frames(env, uniform_random_policy(5), 12, 1);
  auto s = split_dataset(ds, {8, 2, 2});
  write_split(dir.path(), s.train);
  auto back = read_split(dir.path(), Split::kTrain);
  ASSERT_EQ(back.size(), 8);
  EXPECT_TRUE(torch::equal(back.raw_frames(), s.train.raw_frames()));
  EXPECT_TRUE(torch::equal(*back.labels(), *s.train.labels()));
  EXPECT_EQ(back.episode_ids(), s.train.episode_ids());
  EXPECT_EQ(back.steps(), s.train.steps());
  EXPECT_EQ(back.n_instances(), 3);
}

TEST(EpochBatches, DeterministicPermutation) {
  auto a = epoch_batches(23, 5, 9, 2);
  auto b = epoch_batches(23, 5, 9, 2);
  EXPECT_EQ(a, b);
  std::vector<int64_t> all;
  for (auto& v : a) all.insert(all.end(), v.begin(), v.end());
  std::sort(all.begin(), all.end());
  for (int64_t i = 0; i < 23; ++i) EXPECT_EQ(all[i], i);
  EXPECT_NE(a, epoch_batches(23, 5, 9, 3));
}
