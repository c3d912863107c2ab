#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "permakey/environment.hpp"

namespace permakey {

enum class SpriteShape { kCircle, kSquare, kTriangle, kDiamond, kCross };
enum class SpriteRole { kAgent, kReward, kEnemy };
enum class BarOrientation { kHorizontal, kVertical };

using Rgb = std::array<float, 3>;

struct SpritesConfig {
  int n_rewards = 1;
  int n_enemies = 1;  // 0..2
  int min_size = 10;
  int max_size = 16;
  int agent_speed = 3;
  int enemy_speed = 2;
  bool textured_background = true;
  // Full-width (or full-height) band moving at constant velocity.
  bool moving_bar = false;
  BarOrientation bar_orientation = BarOrientation::kHorizontal;
  int bar_thickness = 4;
  int bar_speed = 2;
  Rgb bar_color{0.95f, 0.85f, 0.2f};
  int max_steps = 200;
  uint64_t seed = 0;
};

struct Sprite {
  SpriteRole role = SpriteRole::kReward;
  SpriteShape shape = SpriteShape::kCircle;
  int x = 0;  // top-left column
  int y = 0;  // top-left row
  int size = 12;
  int vx = 0;
  int vy = 0;
  Rgb color{1.f, 1.f, 1.f};

  // Whether pixel (row, col) in image coordinates is inside the sprite.
  bool covers(int row, int col) const;
};

// Desk-scale sprites world: one agent, collectible reward sprites and
// bouncing enemies over a static checkered background, optionally with a
// moving bar. Actions: 0 noop, 1 up, 2 down, 3 left, 4 right.
class SpritesEnv : public Environment {
 public:
  explicit SpritesEnv(SpritesConfig config);

  torch::Tensor reset() override;
  StepResult step(int64_t action) override;
  int64_t num_actions() const override { return 5; }
  void seed(uint64_t seed) override;
  std::optional<SpriteScene> ground_truth() const override;

  const SpritesConfig& config() const { return config_; }
  const std::vector<Sprite>& sprites() const { return sprites_; }
  int bar_position() const { return bar_pos_; }
  bool done() const { return done_; }

  // Background value at a pixel (independent of sprite state).
  Rgb background(int row, int col) const;
  Frame render() const;

  // Test hook: place sprites directly (must be in-bounds and disjoint).
  void set_sprites(std::vector<Sprite> sprites);

 private:
  bool overlaps_any(const Sprite& s, int skip_index) const;
  bool place_randomly(Sprite& s, int skip_index);
  bool bar_covers(int row, int col) const;

  SpritesConfig config_;
  std::mt19937_64 rng_;
  std::vector<Sprite> sprites_;
  int bar_pos_ = 0;
  int steps_ = 0;
  bool done_ = true;
};

}  // namespace permakey
