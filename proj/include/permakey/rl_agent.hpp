#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "permakey/environment.hpp"
#include "permakey/keypoint_encoders.hpp"

namespace permakey {

struct AgentConfig {
  int64_t lstm_units = 128;
  int64_t batch_size = 16;
  int64_t window = 8;
  int64_t n_step = 3;
  double tau = 0.005;
  double learning_rate = 2e-4;
  double grad_clip_norm = 10.0;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  int64_t epsilon_anneal_steps = 100000;
  double gamma = 0.99;
  int64_t total_steps = 100000;
  int64_t replay_capacity = 100000;
  int64_t learning_starts = 1000;
  int64_t validation_interval = 10000;
  int64_t validation_episodes = 10;
  // Per-episode step cap for acting (0: rely on the environment).
  int64_t max_episode_steps = 0;
  bool freeze_encoder = false;
  uint64_t seed = 0;
  uint64_t train_env_seed = 1;
  uint64_t val_env_seed = 2;

  void validate() const;
  nlohmann::json to_json() const;
  static AgentConfig from_json(const nlohmann::json& j);
};

// max(end, start - (start - end) * step / anneal_steps)
double epsilon(int64_t step, const AgentConfig& config = {});

struct DrqnSpec {
  EncoderKind encoder = EncoderKind::kIdentity;
  std::vector<int64_t> obs_shape;  // per-step observation shape
  int64_t num_actions = 0;
  int64_t lstm_units = 128;

  nlohmann::json to_json() const;
  static DrqnSpec from_json(const nlohmann::json& j);
};

using LstmState = std::tuple<torch::Tensor, torch::Tensor>;

// Per-step encoder -> LSTM -> linear head to Q-values.
class DrqnNetImpl : public torch::nn::Module {
 public:
  explicit DrqnNetImpl(DrqnSpec spec);

  // obs [B, T, ...obs_shape] -> Q [B, T, A], zero initial LSTM state.
  torch::Tensor forward(const torch::Tensor& obs);
  // One step from `state` (zero when absent). obs [...obs_shape] -> Q [A].
  std::pair<torch::Tensor, LstmState> step(const torch::Tensor& obs,
                                           const std::optional<LstmState>& state);

  const DrqnSpec& spec() const { return spec_; }
  StateEncoder encoder;
  torch::nn::LSTM lstm{nullptr};
  torch::nn::Linear head{nullptr};

 private:
  torch::Tensor encode(const torch::Tensor& flat_obs);
  DrqnSpec spec_;
};
TORCH_MODULE(DrqnNet);

// Q-values over one replay window; ShapeError unless T == window.
torch::Tensor q_forward(DrqnNet& net, const torch::Tensor& obs, int64_t window);

// theta_target <- tau * theta_online + (1 - tau) * theta_target over
// parameters and floating-point buffers.
void polyak_update(torch::nn::Module& online, torch::nn::Module& target,
                   double tau);

struct NStepTargets {
  torch::Tensor targets;  // [B, T]
  torch::Tensor valid;    // [B, T] float 0/1
};

// Double-Q n-step targets per window position t:
// sum_{k<n} gamma^k r_{t+k} + gamma^n Q_target(s_{t+n}, argmax_a Q_online(s_{t+n}, a)),
// truncated at termination. Positions whose bootstrap state lies outside
// the window (or beyond the padding mask) without an earlier termination
// are invalid. rewards, dones, mask: [B, T]; q_*: [B, T, A].
NStepTargets n_step_double_q_target(const torch::Tensor& rewards,
                                    const torch::Tensor& dones,
                                    const torch::Tensor& mask,
                                    const torch::Tensor& q_online,
                                    const torch::Tensor& q_target, double gamma,
                                    int64_t n);

struct ReplayBatch {
  torch::Tensor obs;      // [B, T, ...]
  torch::Tensor actions;  // int64 [B, T]
  torch::Tensor rewards;  // [B, T]
  torch::Tensor dones;    // [B, T]
  torch::Tensor mask;     // [B, T], 0 past the end of the stored episode
  std::vector<int64_t> episode_ids;  // per row, the episode of the window
};

// FIFO transition store; samples windows of consecutive transitions from a
// single episode, starting at a uniformly drawn stored transition.
class SequenceReplay {
 public:
  SequenceReplay(int64_t capacity, int64_t window);

  void add(const torch::Tensor& obs, int64_t action, double reward, bool done,
           int64_t episode);
  int64_t size() const { return static_cast<int64_t>(items_.size()); }
  ReplayBatch sample(int64_t batch_size, std::mt19937_64& rng) const;

 private:
  struct Item {
    torch::Tensor obs;
    int64_t action;
    double reward;
    bool done;
    int64_t episode;
  };
  int64_t capacity_;
  int64_t window_;
  std::deque<Item> items_;
};

// Maps raw environment observations to the per-step agent input.
using Frontend = std::function<torch::Tensor(const torch::Tensor& observation)>;
Frontend identity_frontend();

struct PolicyCheckpoint {
  int64_t step = 0;
  double validation_mean = 0.0;
  std::vector<torch::Tensor> weights;
};

struct AgentTrainResult {
  std::vector<PolicyCheckpoint> checkpoints;  // best validation score first
  std::vector<double> episode_returns;
  int64_t steps = 0;
  int64_t updates = 0;
  double max_clipped_grad_norm = 0.0;
  double max_target_grad_norm = 0.0;
};

// Runs the agent for config.total_steps interactions with one learner update
// per step once learning_starts transitions are stored. The best-validation
// weights are loaded into `net` at the end. On an environment failure the
// online/target weights and step counter are written to `resume_file` and an
// Error is thrown; passing the same file as `resume_from` continues.
AgentTrainResult train_agent(DrqnNet& net, Environment& env,
                             Environment& val_env, const Frontend& frontend,
                             const AgentConfig& config,
                             const std::filesystem::path& resume_file = {},
                             const std::filesystem::path& resume_from = {});

// One episode; greedy when eps == 0. Returns the undiscounted return.
double run_episode(DrqnNet& net, Environment& env, const Frontend& frontend,
                   double eps, std::mt19937_64& rng, int64_t max_steps = 0);

struct ScoreSummary {
  std::vector<double> policy_medians;  // median over seeds of per-seed means
  double mean = 0.0;
  double std = 0.0;  // population std across policies
  std::string formatted() const;  // "mean (std)", one decimal
};

// scores[policy][seed][episode]
ScoreSummary summarize_scores(
    const std::vector<std::vector<std::vector<double>>>& scores);

// ProtocolError when validation or any test seed equals the training seed
// or a test seed equals the validation seed.
void check_seed_protocol(uint64_t train_seed, uint64_t val_seed,
                         const std::vector<uint64_t>& test_seeds);

using EnvFactory = std::function<std::unique_ptr<Environment>(uint64_t seed)>;

struct EvaluationResult {
  std::vector<uint64_t> seeds;
  std::vector<std::vector<std::vector<double>>> scores;
  ScoreSummary summary;
  nlohmann::json to_json() const;
};

EvaluationResult evaluate_policies(std::vector<DrqnNet>& policies,
                                   const EnvFactory& make_env,
                                   const Frontend& frontend,
                                   const std::vector<uint64_t>& test_seeds,
                                   int64_t episodes_per_seed,
                                   uint64_t train_seed, uint64_t val_seed,
                                   int64_t max_steps = 0);

// One row per (policy, seed): policy,seed,episode scores..., seed mean.
void write_score_csv(const std::filesystem::path& path,
                     const EvaluationResult& result);

void save_drqn(const std::filesystem::path& path, DrqnNet& net,
               const nlohmann::json& extra = nlohmann::json::object());
DrqnNet load_drqn(const std::filesystem::path& path);

// Five-state corridor: states 0 and 4 are terminal with rewards 0.9 and 1.0
// on entry; episodes start uniformly in {1, 2, 3}. Observations are one-hot.
// Actions: 0 left, 1 right.
class CorridorEnv : public Environment {
 public:
  explicit CorridorEnv(uint64_t seed = 0, int64_t max_steps = 20);

  torch::Tensor reset() override;
  StepResult step(int64_t action) override;
  int64_t num_actions() const override { return 2; }
  void seed(uint64_t seed) override { rng_.seed(seed); }

  static constexpr int64_t kStates = 5;
  static constexpr double kLeftReward = 0.9;
  static constexpr double kRightReward = 1.0;
  static torch::Tensor one_hot(int64_t state);
  int64_t state() const { return state_; }
  // Places the agent in `state` (non-terminal) and returns its observation.
  torch::Tensor reset_to(int64_t state);

 private:
  std::mt19937_64 rng_;
  int64_t max_steps_;
  int64_t state_ = 2;
  int64_t steps_ = 0;
  bool done_ = true;
};

}  // namespace permakey
