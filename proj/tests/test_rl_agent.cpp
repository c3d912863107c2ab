#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <string>

#include "corridor_oracle.hpp"
#include "permakey/errors.hpp"
#include "permakey/rl_agent.hpp"
#include "permakey/tensor_utils.hpp"
#include "permakey/training.hpp"
#include "test_util.hpp"

using namespace permakey;
using permakey::test_support::TempDir;

namespace {

DrqnNet corridor_net(int64_t lstm_units = 16) {
  DrqnSpec spec;
  spec.encoder = EncoderKind::kIdentity;
  spec.obs_shape = {CorridorEnv::kStates};
  spec.num_actions = 2;
  spec.lstm_units = lstm_units;
  return DrqnNet(spec);
}

AgentConfig small_config() {
  AgentConfig c;
  c.lstm_units = 16;
  c.batch_size = 8;
  c.total_steps = 600;
  c.learning_starts = 100;
  c.replay_capacity = 1000;
  c.validation_interval = 200;
  c.validation_episodes = 3;
  c.max_episode_steps = 20;
  c.epsilon_anneal_steps = 300;
  c.gamma = 0.9;
  c.learning_rate = 1e-3;
  return c;
}

// G(s, k): k-step double-Q return from position s, recursive form.
std::optional<double> recursive_target(const torch::Tensor& r,
                                       const torch::Tensor& d,
                                       const torch::Tensor& m,
                                       const torch::Tensor& boot, int64_t row,
                                       int64_t s, int64_t k, double gamma) {
  const int64_t t = r.size(1);
  if (s >= t || m[row][s].item<double>() == 0.0) return std::nullopt;
  if (k == 0) return boot[row][s].item<double>();
  const double reward = r[row][s].item<double>();
  if (d[row][s].item<double>() != 0.0) return reward;
  auto rest = recursive_target(r, d, m, boot, row, s + 1, k - 1, gamma);
  if (!rest) return std::nullopt;
  return reward + gamma * *rest;
}

class FailingEnv : public Environment {
 public:
  FailingEnv(int64_t fail_at) : fail_at_(fail_at) {}
  torch::Tensor reset() override { return inner_.reset(); }
  StepResult step(int64_t action) override {
    if (calls_++ == fail_at_) throw std::runtime_error("emulator crashed");
    return inner_.step(action);
  }
  int64_t num_actions() const override { return 2; }
  void seed(uint64_t seed) override { inner_.seed(seed); }

 private:
  CorridorEnv inner_;
  int64_t fail_at_;
  int64_t calls_ = 0;
};

}  // namespace

TEST(Epsilon, LinearAnnealThenFlat) {
  EXPECT_DOUBLE_EQ(epsilon(0), 1.0);
  EXPECT_DOUBLE_EQ(epsilon(50000), 0.55);
  EXPECT_DOUBLE_EQ(epsilon(100000), 0.1);
  EXPECT_DOUBLE_EQ(epsilon(250000), 0.1);
  EXPECT_THROW(epsilon(-1), PreconditionError);
}

TEST(Polyak, FixedPointWhenEqual) {
  auto online = corridor_net();
  auto target = corridor_net();
  polyak_update(*online, *target, 1.0);
  auto before = snapshot_parameters(*target);
  polyak_update(*online, *target, 0.005);
  auto after = snapshot_parameters(*target);
  for (size_t i = 0; i < before.size(); ++i)
    EXPECT_TRUE(torch::allclose(before[i], after[i], 0.0, 1e-7));
}

TEST(Polyak, SingleStepAndGeometricResidual) {
  torch::nn::Linear online(3, 2), target(3, 2);
  {
    torch::NoGradGuard g;
    for (auto& p : online->parameters()) p.fill_(1.0);
    for (auto& p : target->parameters()) p.zero_();
  }
  polyak_update(*online, *target, 0.005);
  for (auto& p : target->parameters())
    EXPECT_TRUE(torch::allclose(p, torch::full_like(p, 0.005), 0.0, 1e-9));
  for (int i = 1; i < 200; ++i) polyak_update(*online, *target, 0.005);
  const double residual = std::pow(1.0 - 0.005, 200);
  for (auto& p : target->parameters())
    EXPECT_TRUE(torch::allclose(p, torch::full_like(p, 1.0 - residual), 0.0, 1e-5));
}

TEST(Polyak, StructureMismatchThrows) {
  torch::nn::Linear a(3, 2), b(4, 2);
  EXPECT_THROW(polyak_update(*a, *b, 0.5), ShapeError);
}

TEST(NStepTarget, TerminationTruncatesReturn) {
  auto r = torch::tensor({{1.0, 1.0, 1.0, 0.0}});
  auto d = torch::tensor({{0.0, 0.0, 1.0, 0.0}});
  auto m = torch::tensor({{1.0, 1.0, 1.0, 0.0}});
  auto q = torch::full({1, 4, 2}, 100.0);
  auto out = n_step_double_q_target(r, d, m, q, q, 0.5, 3);
  EXPECT_DOUBLE_EQ(out.targets[0][0].item<double>(), 1.75);
  EXPECT_EQ(out.valid[0][0].item<double>(), 1.0);
  EXPECT_DOUBLE_EQ(out.targets[0][2].item<double>(), 1.0);
  EXPECT_EQ(out.valid[0][3].item<double>(), 0.0);
}

TEST(NStepTarget, BootstrapFromTargetNetwork) {
  auto r = torch::zeros({1, 4}, torch::kDouble);
  auto d = torch::zeros({1, 4}, torch::kDouble);
  auto m = torch::ones({1, 4}, torch::kDouble);
  auto q = torch::full({1, 4, 2}, 4.0, torch::kDouble);
  auto out = n_step_double_q_target(r, d, m, q, q, 0.5, 3);
  EXPECT_DOUBLE_EQ(out.targets[0][0].item<double>(), 0.5);
  for (int64_t s = 1; s < 4; ++s) EXPECT_EQ(out.valid[0][s].item<double>(), 0.0);
}

TEST(NStepTarget, OnlineSelectsTargetEvaluates) {
  auto r = torch::tensor({{1.0, 0.0, 0.0}}, torch::kDouble);
  auto d = torch::zeros({1, 3}, torch::kDouble);
  auto m = torch::ones({1, 3}, torch::kDouble);
  auto q_online = torch::zeros({1, 3, 2}, torch::kDouble);
  auto q_target = torch::zeros({1, 3, 2}, torch::kDouble);
  q_online[0][1] = torch::tensor({1.0, 2.0}, torch::kDouble);
  q_target[0][1] = torch::tensor({10.0, 4.0}, torch::kDouble);
  auto out = n_step_double_q_target(r, d, m, q_online, q_target, 0.5, 1);
  EXPECT_DOUBLE_EQ(out.targets[0][0].item<double>(), 3.0);
}

TEST(NStepTarget, OneStepIsStandardDoubleQ) {
  torch::manual_seed(3);
  auto r = torch::randn({4, 6}, torch::kDouble);
  auto d = (torch::rand({4, 6}, torch::kDouble) < 0.2).to(torch::kDouble);
  auto m = torch::ones({4, 6}, torch::kDouble);
  auto qo = torch::randn({4, 6, 3}, torch::kDouble);
  auto qt = torch::randn({4, 6, 3}, torch::kDouble);
  auto out = n_step_double_q_target(r, d, m, qo, qt, 0.9, 1);
  for (int64_t b = 0; b < 4; ++b)
    for (int64_t s = 0; s + 1 < 6; ++s) {
      const int64_t a = qo[b][s + 1].argmax().item<int64_t>();
      const double expect = r[b][s].item<double>() +
                            (1.0 - d[b][s].item<double>()) * 0.9 *
                                qt[b][s + 1][a].item<double>();
      EXPECT_NEAR(out.targets[b][s].item<double>(), expect, 1e-12);
    }
}

TEST(NStepTarget, MatchesRecursiveDefinition) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    torch::manual_seed(trial);
    const int64_t b = 3, t = 8, n = 1 + trial % 4;
    auto r = torch::randn({b, t}, torch::kDouble);
    auto d = (torch::rand({b, t}, torch::kDouble) < 0.15).to(torch::kDouble);
    auto m = torch::ones({b, t}, torch::kDouble);
    for (int64_t i = 0; i < b; ++i) {
      const int64_t len = std::uniform_int_distribution<int64_t>(1, t)(rng);
      m[i].slice(0, len).zero_();
    }
    auto qo = torch::randn({b, t, 4}, torch::kDouble);
    auto qt = torch::randn({b, t, 4}, torch::kDouble);
    auto boot = qt.gather(-1, qo.argmax(-1, true)).squeeze(-1);
    auto out = n_step_double_q_target(r, d, m, qo, qt, 0.9, n);
    for (int64_t i = 0; i < b; ++i)
      for (int64_t s = 0; s < t; ++s) {
        auto ref = recursive_target(r, d, m, boot, i, s, n, 0.9);
        ASSERT_EQ(out.valid[i][s].item<double>(), ref ? 1.0 : 0.0)
            << "trial " << trial << " row " << i << " pos " << s;
        if (ref) EXPECT_NEAR(out.targets[i][s].item<double>(), *ref, 1e-12);
      }
  }
}

TEST(NStepTarget, RejectsBadInputs) {
  auto r = torch::zeros({1, 3});
  auto q = torch::zeros({1, 3, 2});
  EXPECT_THROW(n_step_double_q_target(r, r, r, q, q, 0.9, 0), ParameterError);
  EXPECT_THROW(n_step_double_q_target(r, r, torch::zeros({1, 4}), q, q, 0.9, 1),
               ShapeError);
}

TEST(QNetwork, WindowShapes) {
  auto net = corridor_net();
  auto obs = torch::rand({4, 8, CorridorEnv::kStates});
  EXPECT_EQ(q_forward(net, obs, 8).sizes(), (std::vector<int64_t>{4, 8, 2}));
  EXPECT_THROW(q_forward(net, torch::rand({4, 7, CorridorEnv::kStates}), 8),
               ShapeError);
}

TEST(QNetwork, ZeroWeightsGiveZeroQ) {
  auto net = corridor_net();
  {
    torch::NoGradGuard g;
    for (auto& p : net->parameters()) p.zero_();
  }
  auto q = q_forward(net, torch::rand({2, 8, CorridorEnv::kStates}), 8);
  EXPECT_EQ(q.abs().max().item<double>(), 0.0);
}

TEST(QNetwork, StepMatchesSequenceForward) {
  auto net = corridor_net();
  net->eval();
  auto obs = torch::rand({1, 5, CorridorEnv::kStates});
  auto full = net->forward(obs);
  std::optional<LstmState> state;
  for (int64_t t = 0; t < 5; ++t) {
    auto [q, next] = net->step(obs[0][t], state);
    state = next;
    EXPECT_TRUE(torch::allclose(q, full[0][t], 1e-5, 1e-6));
  }
}

TEST(Replay, WindowsStayInsideOneEpisode) {
  SequenceReplay replay(60, 8);
  std::mt19937_64 rng(4);
  int64_t episode = 0;
  for (int64_t total = 0; total < 200; ++episode) {
    const int64_t len = 1 + static_cast<int64_t>(rng() % 12);
    const bool terminal = rng() % 2 == 0;
    for (int64_t s = 0; s < len; ++s, ++total)
      replay.add(torch::tensor({static_cast<float>(episode), static_cast<float>(s)}),
                 0, 0.0, terminal && s == len - 1, episode);
  }
  for (int rep = 0; rep < 20; ++rep) {
    auto batch = replay.sample(32, rng);
    for (int64_t i = 0; i < 32; ++i) {
      bool ended = false;
      for (int64_t k = 0; k < 8; ++k) {
        const bool valid = batch.mask[i][k].item<float>() != 0.f;
        if (k == 0) ASSERT_TRUE(valid);
        if (ended || !valid) {
          ended = true;
          EXPECT_FALSE(valid);
          continue;
        }
        EXPECT_EQ(batch.obs[i][k][0].item<float>(), batch.episode_ids[i]);
        if (k > 0)
          EXPECT_EQ(batch.obs[i][k][1].item<float>(),
                    batch.obs[i][k - 1][1].item<float>() + 1.f);
        if (batch.dones[i][k].item<float>() != 0.f) ended = true;
      }
    }
  }
}

TEST(Replay, EmptyThrows) {
  SequenceReplay replay(10, 4);
  std::mt19937_64 rng(0);
  EXPECT_THROW(replay.sample(1, rng), PreconditionError);
}

TEST(Rollout, GreedyIsDeterministicPerSeed) {
  auto net = corridor_net();
  std::mt19937_64 rng_a(0), rng_b(99);
  CorridorEnv a(5), b(5);
  for (int e = 0; e < 10; ++e)
    EXPECT_EQ(run_episode(net, a, identity_frontend(), 0.0, rng_a, 20),
              run_episode(net, b, identity_frontend(), 0.0, rng_b, 20));
}

TEST(Corridor, TerminalRewardsAndStepAfterDone) {
  CorridorEnv env(0);
  env.reset_to(1);
  auto r = env.step(0);
  EXPECT_TRUE(r.done);
  EXPECT_DOUBLE_EQ(r.reward, 0.9);
  EXPECT_THROW(env.step(0), IllegalTransitionError);
  env.reset_to(3);
  r = env.step(1);
  EXPECT_DOUBLE_EQ(r.reward, 1.0);
  EXPECT_THROW(env.reset_to(0), PreconditionError);
}

TEST(Corridor, ValueIterationPolicy) {
  auto policy = permakey::test_support::corridor_optimal_policy(0.9);
  EXPECT_EQ(policy[0], 0);
  EXPECT_EQ(policy[1], 1);
  EXPECT_EQ(policy[2], 1);
  auto q = permakey::test_support::corridor_q(0.9);
  EXPECT_NEAR(q[1][0], 0.9, 1e-12);
  EXPECT_NEAR(q[1][1], 0.81, 1e-12);
}

TEST(Scores, AllEqualEpisodes) {
  std::vector<std::vector<std::vector<double>>> scores(
      5, std::vector<std::vector<double>>(10, std::vector<double>(10, 5.0)));
  auto s = summarize_scores(scores);
  EXPECT_DOUBLE_EQ(s.mean, 5.0);
  EXPECT_DOUBLE_EQ(s.std, 0.0);
  EXPECT_EQ(s.formatted(), "5.0 (0.0)");
}

TEST(Scores, MedianOfSeedMeans) {
  std::vector<std::vector<double>> policy;
  for (int v = 1; v <= 10; ++v) policy.push_back({v - 1.0, v + 1.0});
  auto s = summarize_scores({policy});
  EXPECT_DOUBLE_EQ(s.policy_medians[0], 5.5);
  EXPECT_EQ(s.formatted(), "5.5 (0.0)");
}

TEST(Scores, PopulationStdAcrossPolicies) {
  auto s = summarize_scores({{{2.0}}, {{4.0}}, {{9.0}}});
  EXPECT_DOUBLE_EQ(s.mean, 5.0);
  EXPECT_NEAR(s.std, std::sqrt((9.0 + 1.0 + 16.0) / 3.0), 1e-12);
  EXPECT_EQ(s.formatted(), "5.0 (2.9)");
  EXPECT_THROW(summarize_scores({}), PreconditionError);
  EXPECT_THROW(summarize_scores({{{}}}), PreconditionError);
}

TEST(SeedProtocol, CollisionsThrow) {
  EXPECT_NO_THROW(check_seed_protocol(1, 2, {3, 4}));
  EXPECT_THROW(check_seed_protocol(1, 1, {3}), ProtocolError);
  EXPECT_THROW(check_seed_protocol(1, 2, {3, 1}), ProtocolError);
  EXPECT_THROW(check_seed_protocol(1, 2, {2}), ProtocolError);
  AgentConfig c;
  c.val_env_seed = c.train_env_seed;
  EXPECT_THROW(c.validate(), ProtocolError);
}

TEST(AgentConfig, JsonRoundTripAndValidation) {
  auto c = small_config();
  c.n_step = 5;
  c.freeze_encoder = true;
  auto back = AgentConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Evaluate, DeterministicAndWritesCsv) {
  std::vector<DrqnNet> policies{corridor_net(), corridor_net()};
  EnvFactory make = [](uint64_t seed) {
    return std::make_unique<CorridorEnv>(seed);
  };
  auto a = evaluate_policies(policies, make, identity_frontend(), {11, 12, 13}, 4,
                             1, 2, 20);
  auto b = evaluate_policies(policies, make, identity_frontend(), {11, 12, 13}, 4,
                             1, 2, 20);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(a.scores.size(), 2u);
  EXPECT_EQ(a.scores[0].size(), 3u);
  EXPECT_EQ(a.scores[0][0].size(), 4u);
  EXPECT_THROW(evaluate_policies(policies, make, identity_frontend(), {1}, 1, 1, 2),
               ProtocolError);

  TempDir dir;
  write_score_csv(dir / "scores.csv", a);
  std::ifstream is(dir / "scores.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 1u + 6u + 1u);
  EXPECT_EQ(lines.front(), "policy,seed,episode_scores,seed_mean");
  EXPECT_EQ(lines.back(), "summary,,," + a.summary.formatted());
}

TEST(Train, ClipsGradientsAndNeverTrainsTarget) {
  auto cfg = small_config();
  cfg.grad_clip_norm = 0.05;
  auto net = corridor_net();
  CorridorEnv env, val_env;
  auto res = train_agent(net, env, val_env, identity_frontend(), cfg);
  EXPECT_EQ(res.steps, 600);
  EXPECT_EQ(res.updates, 600 - 100 + 1);
  EXPECT_GT(res.max_clipped_grad_norm, 0.0);
  EXPECT_LE(res.max_clipped_grad_norm, 0.05 + 1e-6);
  EXPECT_EQ(res.max_target_grad_norm, 0.0);
  ASSERT_EQ(res.checkpoints.size(), 3u);
  for (size_t i = 1; i < res.checkpoints.size(); ++i)
    EXPECT_GE(res.checkpoints[i - 1].validation_mean,
              res.checkpoints[i].validation_mean);
  auto final_weights = snapshot_parameters(*net);
  const auto& best = res.checkpoints.front().weights;
  ASSERT_EQ(final_weights.size(), best.size());
  for (size_t i = 0; i < best.size(); ++i)
    EXPECT_TRUE(torch::equal(final_weights[i], best[i]));
}

TEST(Train, DefaultClipBound) {
  auto cfg = small_config();
  cfg.total_steps = 300;
  auto net = corridor_net();
  CorridorEnv env, val_env;
  auto res = train_agent(net, env, val_env, identity_frontend(), cfg);
  EXPECT_LE(res.max_clipped_grad_norm, 10.0 + 1e-6);
}

TEST(Train, EnvironmentFailureIsResumable) {
  TempDir dir;
  auto cfg = small_config();
  cfg.total_steps = 300;
  auto net = corridor_net();
  FailingEnv env(150);
  CorridorEnv val_env;
  EXPECT_THROW(train_agent(net, env, val_env, identity_frontend(), cfg,
                           dir / "resume.pt"),
               Error);
  ASSERT_TRUE(std::filesystem::exists(dir / "resume.pt"));
  auto meta = read_checkpoint_config(dir / "resume.pt");
  EXPECT_EQ(meta.at("kind"), "drqn_resume");
  EXPECT_EQ(meta.at("step").get<int64_t>(), 150);

  auto resumed = corridor_net();
  CorridorEnv env2;
  auto res = train_agent(resumed, env2, val_env, identity_frontend(), cfg, {},
                         dir / "resume.pt");
  EXPECT_EQ(res.steps, 300);
  EXPECT_EQ(res.updates, 300 - 150 - 100 + 1);
}

TEST(DrqnCheckpoint, RoundTrip) {
  TempDir dir;
  auto net = corridor_net();
  save_drqn(dir / "agent.pt", net, {{"note", "x"}});
  auto back = load_drqn(dir / "agent.pt");
  EXPECT_EQ(back->spec().to_json(), net->spec().to_json());
  auto a = snapshot_parameters(*net), b = snapshot_parameters(*back);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(torch::equal(a[i], b[i]));
  save_checkpoint(dir / "other.pt", *net, {{"kind", "vae"}});
  EXPECT_THROW(load_drqn(dir / "other.pt"), IoError);
}
