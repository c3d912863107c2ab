#include "permakey/sprites_env.hpp"

#include <algorithm>
#include <cmath>

#include "permakey/errors.hpp"

namespace permakey {

namespace {

constexpr int kSize = static_cast<int>(kFrameSize);
constexpr int kCheckerCell = 4;

const Rgb kBackgroundA{0.18f, 0.20f, 0.28f};
const Rgb kBackgroundB{0.26f, 0.28f, 0.36f};
const Rgb kAgentColor{0.25f, 0.90f, 0.35f};
const Rgb kRewardColor{0.95f, 0.35f, 0.30f};
const Rgb kEnemyColor{0.40f, 0.60f, 1.00f};

}  // namespace

bool Sprite::covers(int row, int col) const {
  const int r = row - y;
  const int c = col - x;
  if (r < 0 || c < 0 || r >= size || c >= size) return false;
  const double center = (size - 1) / 2.0;
  const double dr = r - center;
  const double dc = c - center;
  const double half = size / 2.0;
  switch (shape) {
    case SpriteShape::kCircle:
      return dr * dr + dc * dc <= half * half;
    case SpriteShape::kSquare:
      return true;
    case SpriteShape::kTriangle:
      // Apex at the top row, base along the bottom row.
      return std::abs(dc) <= (r + 1) * half / size;
    case SpriteShape::kDiamond:
      return std::abs(dr) + std::abs(dc) <= half;
    case SpriteShape::kCross:
      return std::abs(dr) <= size / 6.0 || std::abs(dc) <= size / 6.0;
  }
  return false;
}

SpritesEnv::SpritesEnv(SpritesConfig config)
    : config_(config), rng_(config.seed) {
  if (config_.n_enemies < 0 || config_.n_enemies > 2)
    throw ParameterError("sprites env supports 0..2 enemies");
  if (config_.n_rewards < 0)
    throw ParameterError("negative reward sprite count");
  if (config_.min_size < 3 || config_.max_size < config_.min_size ||
      config_.max_size > kSize / 2)
    throw ParameterError("invalid sprite size range");
  if (config_.bar_thickness < 1 || config_.bar_thickness > kSize)
    throw ParameterError("bar thickness out of range");
  if (config_.max_steps < 1) throw ParameterError("max_steps must be >= 1");
}

void SpritesEnv::seed(uint64_t seed) {
  config_.seed = seed;
  rng_.seed(seed);
  done_ = true;
}

bool SpritesEnv::overlaps_any(const Sprite& s, int skip_index) const {
  for (size_t i = 0; i < sprites_.size(); ++i) {
    if (static_cast<int>(i) == skip_index) continue;
    const Sprite& o = sprites_[i];
    // Sprites keep one pixel of clearance from each other.
    const bool sep_x = s.x + s.size + 1 <= o.x || o.x + o.size + 1 <= s.x;
    const bool sep_y = s.y + s.size + 1 <= o.y || o.y + o.size + 1 <= s.y;
    if (!sep_x && !sep_y) return true;
  }
  return false;
}

bool SpritesEnv::place_randomly(Sprite& s, int skip_index) {
  std::uniform_int_distribution<int> pos(0, kSize - s.size);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    s.x = pos(rng_);
    s.y = pos(rng_);
    if (!overlaps_any(s, skip_index)) return true;
  }
  return false;
}

torch::Tensor SpritesEnv::reset() {
  sprites_.clear();
  std::uniform_int_distribution<int> size_dist(config_.min_size,
                                               config_.max_size);
  std::uniform_int_distribution<int> shape_dist(1, 4);
  auto add = [&](SpriteRole role, SpriteShape shape, Rgb color) {
    Sprite s;
    s.role = role;
    s.shape = shape;
    s.size = size_dist(rng_);
    s.color = color;
    if (role == SpriteRole::kEnemy && config_.enemy_speed > 0) {
      std::uniform_int_distribution<int> v(-config_.enemy_speed,
                                           config_.enemy_speed);
      do {
        s.vx = v(rng_);
        s.vy = v(rng_);
      } while (s.vx == 0 && s.vy == 0);
    }
    sprites_.push_back(s);
    if (!place_randomly(sprites_.back(),
                        static_cast<int>(sprites_.size()) - 1))
      throw Error("sprites env: no free location for sprite");
  };
  add(SpriteRole::kAgent, SpriteShape::kCircle, kAgentColor);
  for (int i = 0; i < config_.n_rewards; ++i)
    add(SpriteRole::kReward, static_cast<SpriteShape>(shape_dist(rng_)),
        kRewardColor);
  for (int i = 0; i < config_.n_enemies; ++i)
    add(SpriteRole::kEnemy, static_cast<SpriteShape>(shape_dist(rng_)),
        kEnemyColor);
  std::uniform_int_distribution<int> bar(0, kSize - config_.bar_thickness);
  bar_pos_ = bar(rng_);
  steps_ = 0;
  done_ = false;
  return render().pixels();
}

void SpritesEnv::set_sprites(std::vector<Sprite> sprites) {
  sprites_ = std::move(sprites);
  for (size_t i = 0; i < sprites_.size(); ++i) {
    const Sprite& s = sprites_[i];
    if (s.x < 0 || s.y < 0 || s.x + s.size > kSize || s.y + s.size > kSize)
      throw ParameterError("sprite out of bounds");
    if (overlaps_any(s, static_cast<int>(i)))
      throw ParameterError("sprites overlap");
  }
  done_ = false;
  steps_ = 0;
}

StepResult SpritesEnv::step(int64_t action) {
  if (done_) throw IllegalTransitionError("step() called after episode end");
  if (action < 0 || action >= num_actions())
    throw ParameterError("invalid action " + std::to_string(action));

  double reward = 0.0;
  static constexpr int kDx[] = {0, 0, 0, -1, 1};
  static constexpr int kDy[] = {0, -1, 1, 0, 0};

  // Agent is always sprite 0.
  Sprite moved = sprites_[0];
  moved.x = std::clamp(moved.x + kDx[action] * config_.agent_speed, 0,
                       kSize - moved.size);
  moved.y = std::clamp(moved.y + kDy[action] * config_.agent_speed, 0,
                       kSize - moved.size);
  std::vector<int> hits;
  bool hit_enemy = false;
  for (size_t i = 1; i < sprites_.size(); ++i) {
    const Sprite& o = sprites_[i];
    const bool sep_x =
        moved.x + moved.size + 1 <= o.x || o.x + o.size + 1 <= moved.x;
    const bool sep_y =
        moved.y + moved.size + 1 <= o.y || o.y + o.size + 1 <= moved.y;
    if (sep_x || sep_y) continue;
    if (o.role == SpriteRole::kEnemy)
      hit_enemy = true;
    else
      hits.push_back(static_cast<int>(i));
  }
  if (hit_enemy) {
    reward -= 1.0;
    done_ = true;
  } else {
    sprites_[0] = moved;
    for (int i : hits) {
      reward += 1.0;
      if (!place_randomly(sprites_[i], i))
        throw Error("sprites env: no free location for respawn");
    }
  }

  if (!done_) {
    for (size_t i = 1; i < sprites_.size(); ++i) {
      Sprite& e = sprites_[i];
      if (e.role != SpriteRole::kEnemy) continue;
      Sprite next = e;
      if (next.x + next.vx < 0 || next.x + next.vx > kSize - next.size)
        next.vx = -next.vx;
      if (next.y + next.vy < 0 || next.y + next.vy > kSize - next.size)
        next.vy = -next.vy;
      next.x += next.vx;
      next.y += next.vy;
      const Sprite saved = e;
      e = next;
      const bool blocked = overlaps_any(e, static_cast<int>(i));
      if (!blocked) continue;
      // Restore, and check whether the blocker was the agent.
      e = saved;
      const Sprite& a = sprites_[0];
      const bool sep_x =
          next.x + next.size + 1 <= a.x || a.x + a.size + 1 <= next.x;
      const bool sep_y =
          next.y + next.size + 1 <= a.y || a.y + a.size + 1 <= next.y;
      if (!sep_x && !sep_y) {
        reward -= 1.0;
        done_ = true;
        break;
      }
      e.vx = -e.vx;
      e.vy = -e.vy;
    }
  }

  if (config_.moving_bar) {
    const int span = kSize - config_.bar_thickness + 1;
    bar_pos_ = (bar_pos_ + config_.bar_speed) % span;
  }
  if (++steps_ >= config_.max_steps) done_ = true;
  return {render().pixels(), reward, done_};
}

Rgb SpritesEnv::background(int row, int col) const {
  if (!config_.textured_background) return kBackgroundA;
  const bool odd = ((row / kCheckerCell) + (col / kCheckerCell)) % 2 == 1;
  return odd ? kBackgroundB : kBackgroundA;
}

bool SpritesEnv::bar_covers(int row, int col) const {
  if (!config_.moving_bar) return false;
  const int v =
      config_.bar_orientation == BarOrientation::kHorizontal ? row : col;
  return v >= bar_pos_ && v < bar_pos_ + config_.bar_thickness;
}

Frame SpritesEnv::render() const {
  auto img = torch::empty({kSize, kSize, 3}, torch::kFloat32);
  auto acc = img.accessor<float, 3>();
  for (int r = 0; r < kSize; ++r) {
    for (int c = 0; c < kSize; ++c) {
      Rgb color = background(r, c);
      for (const Sprite& s : sprites_)
        if (s.covers(r, c)) color = s.color;
      if (bar_covers(r, c)) color = config_.bar_color;
      for (int k = 0; k < 3; ++k) acc[r][c][k] = color[k];
    }
  }
  return Frame(img.permute({2, 0, 1}).contiguous());
}

std::optional<SpriteScene> SpritesEnv::ground_truth() const {
  SpriteScene scene;
  scene.frame = render();
  scene.distractor_mask = torch::zeros({kSize, kSize}, torch::kBool);
  auto bar = scene.distractor_mask.accessor<bool, 2>();
  for (int r = 0; r < kSize; ++r)
    for (int c = 0; c < kSize; ++c) bar[r][c] = bar_covers(r, c);
  for (const Sprite& s : sprites_) {
    auto mask = torch::zeros({kSize, kSize}, torch::kBool);
    auto m = mask.accessor<bool, 2>();
    for (int r = s.y; r < s.y + s.size; ++r)
      for (int c = s.x; c < s.x + s.size; ++c)
        m[r][c] = s.covers(r, c) && !bar[r][c];
    scene.instance_masks.push_back(mask);
  }
  return scene;
}

ActionSampler uniform_random_policy(int64_t num_actions) {
  return [num_actions](const torch::Tensor&, std::mt19937_64& rng) {
    std::uniform_int_distribution<int64_t> d(0, num_actions - 1);
    return d(rng);
  };
}

}  // namespace permakey
