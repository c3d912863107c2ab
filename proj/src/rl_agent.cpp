#include "permakey/rl_agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "permakey/errors.hpp"
#include "permakey/tensor_utils.hpp"
#include "permakey/training.hpp"

namespace permakey {

void AgentConfig::validate() const {
  if (lstm_units < 1 || batch_size < 1 || window < 1 || n_step < 1 ||
      total_steps < 0 || validation_episodes < 1 || validation_interval < 1 ||
      epsilon_anneal_steps < 1)
    throw ConfigError("agent config sizes must be positive");
  if (replay_capacity < window)
    throw ConfigError("replay capacity " + std::to_string(replay_capacity) +
                      " is smaller than one window of " + std::to_string(window));
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must be in (0, 1]");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
  if (!(learning_rate > 0.0) || !(grad_clip_norm > 0.0))
    throw ConfigError("learning rate and clip norm must be positive");
  if (train_env_seed == val_env_seed)
    throw ProtocolError("validation env seed equals the training env seed");
}

nlohmann::json AgentConfig::to_json() const {
  return {{"lstm_units", lstm_units},
          {"batch_size", batch_size},
          {"window", window},
          {"n_step", n_step},
          {"tau", tau},
          {"learning_rate", learning_rate},
          {"grad_clip_norm", grad_clip_norm},
          {"epsilon_start", epsilon_start},
          {"epsilon_end", epsilon_end},
          {"epsilon_anneal_steps", epsilon_anneal_steps},
          {"gamma", gamma},
          {"total_steps", total_steps},
          {"replay_capacity", replay_capacity},
          {"learning_starts", learning_starts},
          {"validation_interval", validation_interval},
          {"validation_episodes", validation_episodes},
          {"max_episode_steps", max_episode_steps},
          {"freeze_encoder", freeze_encoder},
          {"seed", seed},
          {"train_env_seed", train_env_seed},
          {"val_env_seed", val_env_seed}};
}

AgentConfig AgentConfig::from_json(const nlohmann::json& j) {
  AgentConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("lstm_units", c.lstm_units);
  get("batch_size", c.batch_size);
  get("window", c.window);
  get("n_step", c.n_step);
  get("tau", c.tau);
  get("learning_rate", c.learning_rate);
  get("grad_clip_norm", c.grad_clip_norm);
  get("epsilon_start", c.epsilon_start);
  get("epsilon_end", c.epsilon_end);
  get("epsilon_anneal_steps", c.epsilon_anneal_steps);
  get("gamma", c.gamma);
  get("total_steps", c.total_steps);
  get("replay_capacity", c.replay_capacity);
  get("learning_starts", c.learning_starts);
  get("validation_interval", c.validation_interval);
  get("validation_episodes", c.validation_episodes);
  get("max_episode_steps", c.max_episode_steps);
  get("freeze_encoder", c.freeze_encoder);
  get("seed", c.seed);
  get("train_env_seed", c.train_env_seed);
  get("val_env_seed", c.val_env_seed);
  return c;
}

double epsilon(int64_t step, const AgentConfig& config) {
  if (step < 0) throw PreconditionError("step must be >= 0");
  const double frac = static_cast<double>(step) /
                      static_cast<double>(config.epsilon_anneal_steps);
  return std::max(config.epsilon_end,
                  config.epsilon_start -
                      (config.epsilon_start - config.epsilon_end) * frac);
}

nlohmann::json DrqnSpec::to_json() const {
  return {{"encoder", to_string(encoder)},
          {"obs_shape", obs_shape},
          {"num_actions", num_actions},
          {"lstm_units", lstm_units}};
}

DrqnSpec DrqnSpec::from_json(const nlohmann::json& j) {
  DrqnSpec s;
  s.encoder = encoder_kind_from_string(j.at("encoder").get<std::string>());
  s.obs_shape = j.at("obs_shape").get<std::vector<int64_t>>();
  s.num_actions = j.at("num_actions").get<int64_t>();
  s.lstm_units = j.at("lstm_units").get<int64_t>();
  return s;
}

DrqnNetImpl::DrqnNetImpl(DrqnSpec spec) : spec_(std::move(spec)) {
  if (spec_.num_actions < 1) throw ConfigError("agent needs >= 1 action");
  encoder = register_module("encoder",
                            make_state_encoder(spec_.encoder, spec_.obs_shape));
  lstm = register_module(
      "lstm", torch::nn::LSTM(torch::nn::LSTMOptions(encoder->output_dim(),
                                                     spec_.lstm_units)
                                  .batch_first(true)));
  head = register_module("head",
                         torch::nn::Linear(spec_.lstm_units, spec_.num_actions));
}

torch::Tensor DrqnNetImpl::encode(const torch::Tensor& flat_obs) {
  return encoder->forward(flat_obs);
}

torch::Tensor DrqnNetImpl::forward(const torch::Tensor& obs) {
  const int64_t obs_rank = static_cast<int64_t>(spec_.obs_shape.size());
  if (obs.dim() != obs_rank + 2)
    throw ShapeError("Q-network expects [B, T, ...obs], got " +
                     shape_string(obs.sizes()));
  const int64_t b = obs.size(0), t = obs.size(1);
  auto z = encode(obs.flatten(0, 1)).view({b, t, -1});
  auto out = std::get<0>(lstm->forward(z));
  return head->forward(out);
}

std::pair<torch::Tensor, LstmState> DrqnNetImpl::step(
    const torch::Tensor& obs, const std::optional<LstmState>& state) {
  auto z = encode(obs.unsqueeze(0)).view({1, 1, -1});
  auto [out, next] = state ? lstm->forward(z, *state) : lstm->forward(z);
  return {head->forward(out).view({-1}), next};
}

torch::Tensor q_forward(DrqnNet& net, const torch::Tensor& obs, int64_t window) {
  if (obs.dim() < 2 || obs.size(1) != window)
    throw ShapeError("replay window must have length " + std::to_string(window) +
                     ", got " + shape_string(obs.sizes()));
  return net->forward(obs);
}

void polyak_update(torch::nn::Module& online, torch::nn::Module& target,
                   double tau) {
  torch::NoGradGuard no_grad;
  auto blend = [&](const auto& src, const auto& dst) {
    if (src.size() != dst.size())
      throw ShapeError("online and target networks differ in structure");
    for (const auto& item : dst) {
      const auto* s = src.find(item.key());
      if (!s) throw ShapeError("target tensor '" + item.key() + "' has no online peer");
      if (s->sizes() != item.value().sizes())
        throw ShapeError("shape mismatch for '" + item.key() + "': " +
                         shape_string(s->sizes()) + " vs " +
                         shape_string(item.value().sizes()));
      if (!item.value().is_floating_point()) continue;
      item.value().mul_(1.0 - tau).add_(*s, tau);
    }
  };
  blend(online.named_parameters(true), target.named_parameters(true));
  blend(online.named_buffers(true), target.named_buffers(true));
}

NStepTargets n_step_double_q_target(const torch::Tensor& rewards,
                                    const torch::Tensor& dones,
                                    const torch::Tensor& mask,
                                    const torch::Tensor& q_online,
                                    const torch::Tensor& q_target, double gamma,
                                    int64_t n) {
  if (n < 1) throw ParameterError("n-step horizon must be >= 1");
  if (rewards.dim() != 2 || dones.sizes() != rewards.sizes() ||
      mask.sizes() != rewards.sizes() || q_online.dim() != 3 ||
      q_online.sizes() != q_target.sizes() ||
      q_online.size(0) != rewards.size(0) || q_online.size(1) != rewards.size(1))
    throw ShapeError("n-step target inputs are misaligned");
  const int64_t b = rewards.size(0), t = rewards.size(1);
  auto r = rewards.to(torch::kDouble).contiguous();
  auto d = dones.to(torch::kDouble).contiguous();
  auto m = mask.to(torch::kDouble).contiguous();
  auto best = q_online.argmax(-1).contiguous();
  auto boot = q_target.gather(-1, best.unsqueeze(-1)).squeeze(-1)
                  .to(torch::kDouble).contiguous();
  auto targets = torch::zeros({b, t}, torch::kDouble);
  auto valid = torch::zeros({b, t}, torch::kDouble);
  auto ra = r.accessor<double, 2>(), da = d.accessor<double, 2>(),
       ma = m.accessor<double, 2>(), ba = boot.accessor<double, 2>();
  auto ta = targets.accessor<double, 2>(), va = valid.accessor<double, 2>();
  for (int64_t i = 0; i < b; ++i) {
    for (int64_t s = 0; s < t; ++s) {
      if (ma[i][s] == 0.0) continue;
      double g = 0.0, discount = 1.0;
      bool terminated = false, ok = true;
      for (int64_t k = 0; k < n; ++k) {
        const int64_t idx = s + k;
        if (idx >= t || ma[i][idx] == 0.0) {
          ok = false;
          break;
        }
        g += discount * ra[i][idx];
        discount *= gamma;
        if (da[i][idx] != 0.0) {
          terminated = true;
          break;
        }
      }
      if (!ok) continue;
      if (!terminated) {
        const int64_t idx = s + n;
        if (idx >= t || ma[i][idx] == 0.0) continue;
        g += discount * ba[i][idx];
      }
      ta[i][s] = g;
      va[i][s] = 1.0;
    }
  }
  return {targets.to(q_online.scalar_type()), valid.to(q_online.scalar_type())};
}

SequenceReplay::SequenceReplay(int64_t capacity, int64_t window)
    : capacity_(capacity), window_(window) {
  if (capacity < 1 || window < 1) throw ConfigError("replay sizes must be positive");
}

void SequenceReplay::add(const torch::Tensor& obs, int64_t action,
                         double reward, bool done, int64_t episode) {
  items_.push_back({obs.detach(), action, reward, done, episode});
  while (static_cast<int64_t>(items_.size()) > capacity_) items_.pop_front();
}

ReplayBatch SequenceReplay::sample(int64_t batch_size,
                                   std::mt19937_64& rng) const {
  if (items_.empty()) throw PreconditionError("replay is empty");
  const auto obs_shape = items_.front().obs.sizes().vec();
  std::vector<int64_t> full{batch_size, window_};
  full.insert(full.end(), obs_shape.begin(), obs_shape.end());
  ReplayBatch out;
  out.obs = torch::zeros(full, items_.front().obs.options());
  out.actions = torch::zeros({batch_size, window_}, torch::kLong);
  out.rewards = torch::zeros({batch_size, window_});
  out.dones = torch::zeros({batch_size, window_});
  out.mask = torch::zeros({batch_size, window_});
  auto act = out.actions.accessor<int64_t, 2>();
  auto rew = out.rewards.accessor<float, 2>();
  auto don = out.dones.accessor<float, 2>();
  auto msk = out.mask.accessor<float, 2>();
  std::uniform_int_distribution<size_t> pick(0, items_.size() - 1);
  for (int64_t i = 0; i < batch_size; ++i) {
    const size_t start = pick(rng);
    const int64_t episode = items_[start].episode;
    out.episode_ids.push_back(episode);
    for (int64_t k = 0; k < window_; ++k) {
      const size_t idx = start + static_cast<size_t>(k);
      if (idx >= items_.size() || items_[idx].episode != episode) break;
      const auto& it = items_[idx];
      out.obs[i][k].copy_(it.obs);
      act[i][k] = it.action;
      rew[i][k] = static_cast<float>(it.reward);
      don[i][k] = it.done ? 1.f : 0.f;
      msk[i][k] = 1.f;
      if (it.done) break;
    }
  }
  return out;
}

Frontend identity_frontend() {
  return [](const torch::Tensor& obs) { return obs; };
}

namespace {

int64_t greedy_action(const torch::Tensor& q) {
  return q.argmax().item<int64_t>();
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) throw PreconditionError("median of an empty list");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Saves/loads online and target networks plus counters in one archive.
struct ResumeState : torch::nn::Module {
  ResumeState(DrqnNet online, DrqnNet target) {
    register_module("online", online);
    register_module("target", target);
  }
};

}  // namespace

double run_episode(DrqnNet& net, Environment& env, const Frontend& frontend,
                   double eps, std::mt19937_64& rng, int64_t max_steps) {
  torch::NoGradGuard no_grad;
  net->eval();
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int64_t> any(0, env.num_actions() - 1);
  auto obs = frontend(env.reset());
  std::optional<LstmState> state;
  double total = 0.0;
  for (int64_t t = 0; max_steps <= 0 || t < max_steps; ++t) {
    auto [q, next] = net->step(obs, state);
    state = next;
    const int64_t a = (eps > 0.0 && coin(rng) < eps) ? any(rng) : greedy_action(q);
    auto res = env.step(a);
    total += res.reward;
    if (res.done) break;
    obs = frontend(res.observation);
  }
  return total;
}

AgentTrainResult train_agent(DrqnNet& net, Environment& env,
                             Environment& val_env, const Frontend& frontend,
                             const AgentConfig& config,
                             const std::filesystem::path& resume_file,
                             const std::filesystem::path& resume_from) {
  config.validate();
  torch::manual_seed(config.seed);
  std::mt19937_64 rng(config.seed);
  DrqnNet target(net->spec());
  polyak_update(*net, *target, 1.0);
  for (auto& p : target->parameters()) p.set_requires_grad(false);

  AgentTrainResult result;
  int64_t start_step = 0;
  if (!resume_from.empty()) {
    ResumeState state(net, target);
    load_checkpoint_weights(resume_from, state);
    start_step = read_checkpoint_config(resume_from).at("step").get<int64_t>();
  }

  std::vector<torch::Tensor> trainable;
  for (const auto& item : net->named_parameters(true)) {
    if (config.freeze_encoder && item.key().starts_with("encoder.")) {
      item.value().set_requires_grad(false);
      continue;
    }
    trainable.push_back(item.value());
  }
  torch::optim::Adam optimizer(
      trainable, torch::optim::AdamOptions(config.learning_rate));

  env.seed(config.train_env_seed);
  val_env.seed(config.val_env_seed);
  SequenceReplay replay(config.replay_capacity, config.window);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<int64_t> any(0, env.num_actions() - 1);

  int64_t step = start_step;
  auto fail = [&](const std::exception& e) -> void {
    if (!resume_file.empty()) {
      ResumeState state(net, target);
      save_checkpoint(resume_file, state,
                      {{"kind", "drqn_resume"},
                       {"step", step},
                       {"spec", net->spec().to_json()},
                       {"config", config.to_json()}});
      throw Error("environment failure at step " + std::to_string(step) +
                  " (" + e.what() + "); resumable state written to " +
                  resume_file.string());
    }
    throw Error("environment failure at step " + std::to_string(step) + " (" +
                e.what() + ")");
  };

  auto validate_now = [&](int64_t at_step) {
    std::mt19937_64 val_rng(config.val_env_seed);
    std::vector<double> returns;
    for (int64_t e = 0; e < config.validation_episodes; ++e)
      returns.push_back(run_episode(net, val_env, frontend, 0.0, val_rng,
                                    config.max_episode_steps));
    PolicyCheckpoint ckpt{at_step, mean_of(returns), snapshot_parameters(*net)};
    result.checkpoints.push_back(std::move(ckpt));
    std::stable_sort(result.checkpoints.begin(), result.checkpoints.end(),
                     [](const auto& a, const auto& b) {
                       return a.validation_mean > b.validation_mean;
                     });
  };

  int64_t episode = 0;
  torch::Tensor obs;
  std::optional<LstmState> lstm_state;
  double episode_return = 0.0;
  int64_t episode_steps = 0;
  auto begin_episode = [&] {
    try {
      obs = frontend(env.reset());
    } catch (const std::exception& e) {
      fail(e);
    }
    lstm_state.reset();
    episode_return = 0.0;
    episode_steps = 0;
  };
  begin_episode();

  for (; step < config.total_steps; ++step) {
    int64_t action;
    {
      torch::NoGradGuard no_grad;
      net->eval();
      auto [q, next] = net->step(obs, lstm_state);
      lstm_state = next;
      action = coin(rng) < epsilon(step, config) ? any(rng) : greedy_action(q);
    }
    StepResult res;
    try {
      res = env.step(action);
    } catch (const std::exception& e) {
      fail(e);
    }
    ++episode_steps;
    const bool capped =
        config.max_episode_steps > 0 && episode_steps >= config.max_episode_steps;
    replay.add(obs, action, res.reward, res.done, episode);
    episode_return += res.reward;
    if (res.done || capped) {
      result.episode_returns.push_back(episode_return);
      ++episode;
      begin_episode();
    } else {
      try {
        obs = frontend(res.observation);
      } catch (const std::exception& e) {
        fail(e);
      }
    }

    if (replay.size() >= std::max(config.learning_starts, config.batch_size)) {
      net->train();
      auto batch = replay.sample(config.batch_size, rng);
      auto q = q_forward(net, batch.obs, config.window);
      NStepTargets tgt;
      {
        torch::NoGradGuard no_grad;
        tgt = n_step_double_q_target(batch.rewards, batch.dones, batch.mask,
                                     q.detach(), target->forward(batch.obs),
                                     config.gamma, config.n_step);
      }
      auto q_sa = q.gather(-1, batch.actions.unsqueeze(-1)).squeeze(-1);
      auto denom = tgt.valid.sum().clamp_min(1.0);
      auto loss = ((q_sa - tgt.targets).pow(2) * tgt.valid).sum() / denom;
      optimizer.zero_grad();
      loss.backward();
      torch::nn::utils::clip_grad_norm_(trainable, config.grad_clip_norm);
      double sq = 0.0;
      for (const auto& p : trainable)
        if (p.grad().defined()) sq += p.grad().pow(2).sum().item<double>();
      result.max_clipped_grad_norm =
          std::max(result.max_clipped_grad_norm, std::sqrt(sq));
      optimizer.step();
      for (const auto& p : target->parameters())
        if (p.grad().defined())
          result.max_target_grad_norm = std::max(
              result.max_target_grad_norm, p.grad().norm().item<double>());
      polyak_update(*net, *target, config.tau);
      ++result.updates;
    }
    if ((step + 1) % config.validation_interval == 0) validate_now(step + 1);
  }
  result.steps = step;
  if (result.checkpoints.empty() || step % config.validation_interval != 0)
    validate_now(step);
  {
    torch::NoGradGuard no_grad;
    auto params = net->named_parameters(true);
    auto buffers = net->named_buffers(true);
    const auto& best = result.checkpoints.front().weights;
    size_t i = 0;
    for (auto& item : params) item.value().copy_(best.at(i++));
    for (auto& item : buffers) item.value().copy_(best.at(i++));
  }
  net->eval();
  return result;
}

std::string ScoreSummary::formatted() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << mean << " (" << std << ")";
  return os.str();
}

ScoreSummary summarize_scores(
    const std::vector<std::vector<std::vector<double>>>& scores) {
  if (scores.empty()) throw PreconditionError("no policies to summarize");
  ScoreSummary s;
  for (const auto& policy : scores) {
    if (policy.empty()) throw PreconditionError("policy has no seeds");
    std::vector<double> seed_means;
    for (const auto& episodes : policy) {
      if (episodes.empty()) throw PreconditionError("seed has no episodes");
      seed_means.push_back(mean_of(episodes));
    }
    s.policy_medians.push_back(median_of(seed_means));
  }
  s.mean = mean_of(s.policy_medians);
  double var = 0.0;
  for (double m : s.policy_medians) var += (m - s.mean) * (m - s.mean);
  s.std = std::sqrt(var / static_cast<double>(s.policy_medians.size()));
  return s;
}

void check_seed_protocol(uint64_t train_seed, uint64_t val_seed,
                         const std::vector<uint64_t>& test_seeds) {
  if (val_seed == train_seed)
    throw ProtocolError("validation seed " + std::to_string(val_seed) +
                        " equals the training seed");
  for (uint64_t s : test_seeds) {
    if (s == train_seed)
      throw ProtocolError("test seed " + std::to_string(s) +
                          " equals the training seed");
    if (s == val_seed)
      throw ProtocolError("test seed " + std::to_string(s) +
                          " equals the validation seed");
  }
}

nlohmann::json EvaluationResult::to_json() const {
  return {{"seeds", seeds},
          {"scores", scores},
          {"policy_medians", summary.policy_medians},
          {"mean", summary.mean},
          {"std", summary.std},
          {"formatted", summary.formatted()}};
}

EvaluationResult evaluate_policies(std::vector<DrqnNet>& policies,
                                   const EnvFactory& make_env,
                                   const Frontend& frontend,
                                   const std::vector<uint64_t>& test_seeds,
                                   int64_t episodes_per_seed,
                                   uint64_t train_seed, uint64_t val_seed,
                                   int64_t max_steps) {
  check_seed_protocol(train_seed, val_seed, test_seeds);
  if (episodes_per_seed < 1) throw ParameterError("need >= 1 episode per seed");
  EvaluationResult out;
  out.seeds = test_seeds;
  for (auto& policy : policies) {
    std::vector<std::vector<double>> per_seed;
    for (uint64_t seed : test_seeds) {
      auto env = make_env(seed);
      std::mt19937_64 rng(seed);
      std::vector<double> returns;
      for (int64_t e = 0; e < episodes_per_seed; ++e)
        returns.push_back(run_episode(policy, *env, frontend, 0.0, rng, max_steps));
      per_seed.push_back(std::move(returns));
    }
    out.scores.push_back(std::move(per_seed));
  }
  out.summary = summarize_scores(out.scores);
  return out;
}

void write_score_csv(const std::filesystem::path& path,
                     const EvaluationResult& result) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "policy,seed,episode_scores,seed_mean\n";
  for (size_t p = 0; p < result.scores.size(); ++p) {
    for (size_t s = 0; s < result.scores[p].size(); ++s) {
      const auto& eps = result.scores[p][s];
      os << p << ',' << result.seeds.at(s) << ',';
      for (size_t e = 0; e < eps.size(); ++e) os << (e ? ";" : "") << eps[e];
      os << ',' << mean_of(eps) << '\n';
    }
  }
  os << "summary,,," << result.summary.formatted() << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

void save_drqn(const std::filesystem::path& path, DrqnNet& net,
               const nlohmann::json& extra) {
  nlohmann::json cfg = {{"kind", "drqn"}, {"spec", net->spec().to_json()}};
  cfg["extra"] = extra;
  save_checkpoint(path, *net, cfg);
}

DrqnNet load_drqn(const std::filesystem::path& path) {
  auto cfg = read_checkpoint_config(path);
  if (cfg.value("kind", "") != "drqn")
    throw IoError(path.string() + " is not an agent checkpoint");
  DrqnNet net(DrqnSpec::from_json(cfg.at("spec")));
  load_checkpoint_weights(path, *net);
  net->eval();
  return net;
}

CorridorEnv::CorridorEnv(uint64_t seed, int64_t max_steps)
    : rng_(seed), max_steps_(max_steps) {}

torch::Tensor CorridorEnv::one_hot(int64_t state) {
  auto v = torch::zeros({kStates});
  v[state] = 1.0;
  return v;
}

torch::Tensor CorridorEnv::reset() {
  return reset_to(std::uniform_int_distribution<int64_t>(1, kStates - 2)(rng_));
}

torch::Tensor CorridorEnv::reset_to(int64_t state) {
  if (state <= 0 || state >= kStates - 1)
    throw PreconditionError("corridor episodes start in a non-terminal state");
  state_ = state;
  steps_ = 0;
  done_ = false;
  return one_hot(state_);
}

StepResult CorridorEnv::step(int64_t action) {
  if (done_) throw IllegalTransitionError("step after the episode ended");
  if (action < 0 || action > 1) throw PreconditionError("corridor action must be 0 or 1");
  state_ += action == 0 ? -1 : 1;
  ++steps_;
  StepResult r;
  r.observation = one_hot(state_);
  if (state_ == 0) r.reward = kLeftReward;
  if (state_ == kStates - 1) r.reward = kRightReward;
  r.done = state_ == 0 || state_ == kStates - 1 || steps_ >= max_steps_;
  done_ = r.done;
  return r;
}

}  // namespace permakey
