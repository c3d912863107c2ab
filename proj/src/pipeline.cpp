#include "permakey/pipeline.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <sstream>

#include "permakey/errors.hpp"
#include "permakey/frontend.hpp"
#include "permakey/lspn.hpp"
#include "permakey/pointnet.hpp"
#include "permakey/rl_agent.hpp"
#include "permakey/sprites_env.hpp"
#include "permakey/transporter.hpp"
#include "permakey/vae.hpp"

#ifndef PERMAKEY_GIT_REVISION
#define PERMAKEY_GIT_REVISION "unknown"
#endif

namespace fs = std::filesystem;

namespace permakey {

const char* git_revision() { return PERMAKEY_GIT_REVISION; }

nlohmann::json StageRecord::to_json() const {
  return {{"name", name},       {"key", key},
          {"cached", cached},   {"seconds", seconds},
          {"dir", dir.string()}, {"outputs_digest", outputs_digest},
          {"metrics", metrics}};
}

StageCache::StageCache(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_);
}

namespace {

constexpr const char* kRecordFile = "stage.json";

nlohmann::json hash_outputs(const fs::path& dir) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().filename() == kRecordFile) continue;
    out[fs::relative(entry.path(), dir).generic_string()] = sha256_file(entry.path());
  }
  return out;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  return nlohmann::json::parse(is);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << j.dump(2) << "\n";
  if (!os) throw IoError("cannot write " + path.string());
}

}  // namespace

StageRecord StageCache::run(const std::string& name,
                            const std::string& config_subset,
                            const std::vector<const StageRecord*>& upstream,
                            const Body& body) {
  std::string material = name + "\n" + config_subset;
  for (const auto* u : upstream) material += u->name + ":" + u->outputs_digest + "\n";
  StageRecord rec;
  rec.name = name;
  rec.key = sha256_hex(material);
  rec.dir = root_ / (name + "-" + rec.key.substr(0, 16));
  const fs::path record_path = rec.dir / kRecordFile;
  if (fs::exists(record_path)) {
    try {
      auto stored = read_json(record_path);
      if (stored.at("key") == rec.key && stored.at("outputs") == hash_outputs(rec.dir)) {
        rec.cached = true;
        rec.metrics = stored.at("metrics");
        rec.outputs_digest = stored.at("outputs_digest").get<std::string>();
        std::cerr << "[stage] " << name << ": cached\n";
        return rec;
      }
    } catch (const nlohmann::json::exception&) {
    }
  }
  fs::remove_all(rec.dir);
  fs::create_directories(rec.dir);
  std::cerr << "[stage] " << name << ": running\n";
  const auto t0 = std::chrono::steady_clock::now();
  rec.metrics = body(rec.dir);
  rec.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  auto outputs = hash_outputs(rec.dir);
  rec.outputs_digest = sha256_hex(outputs.dump());
  write_json(record_path, {{"key", rec.key},
                           {"outputs", outputs},
                           {"outputs_digest", rec.outputs_digest},
                           {"metrics", rec.metrics},
                           {"seconds", rec.seconds}});
  return rec;
}

const StageRecord& RunResult::stage(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return s;
  throw PreconditionError("run has no stage '" + name + "'");
}

bool RunResult::has_stage(const std::string& name) const {
  for (const auto& s : stages)
    if (s.name == name) return true;
  return false;
}

void save_tensor(const fs::path& path, const torch::Tensor& t) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  torch::save(t.contiguous(), path.string());
}

torch::Tensor load_tensor(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing tensor file " + path.string());
  torch::Tensor t;
  torch::load(t, path.string());
  return t;
}

void write_keypoints(const fs::path& dir, const FrameDataset& ds,
                     const torch::Tensor& centers, double sigma, bool write_masks) {
  if (centers.dim() != 3 || centers.size(0) != ds.size() || centers.size(2) != 2)
    throw ShapeError("centers must be [N, K, 2] for the N dataset frames");
  fs::create_directories(dir);
  std::ofstream os(dir / "keypoints.jsonl");
  auto c = centers.to(torch::kDouble).contiguous();
  auto acc = c.accessor<double, 3>();
  for (int64_t i = 0; i < c.size(0); ++i) {
    nlohmann::json pts = nlohmann::json::array();
    for (int64_t k = 0; k < c.size(1); ++k) pts.push_back({acc[i][k][0], acc[i][k][1]});
    os << nlohmann::json{{"frame_id", i},
                         {"episode", ds.episode_id(i)},
                         {"step", ds.step(i)},
                         {"centers", pts}}
              .dump()
       << "\n";
  }
  if (!os) throw IoError("failed writing keypoint records in " + dir.string());
  save_tensor(dir / "centers.pt", centers.to(torch::kFloat));
  if (write_masks)
    save_tensor(dir / "masks.pt",
                gaussian_maps(centers.to(torch::kFloat), sigma, kFrameSize, kFrameSize));
}

torch::Tensor read_keypoint_centers(const fs::path& dir) {
  return load_tensor(dir / "centers.pt");
}

nlohmann::json KeypointMetrics::to_json() const {
  return {{"coverage_mean", coverage.mean},
          {"coverage_std", coverage.std},
          {"capture_rate_mean", capture.mean},
          {"frames_with_bar_keypoint", frames_with_bar_keypoint},
          {"frames", coverage.per_frame.size()}};
}

KeypointMetrics keypoint_metrics(const FrameDataset& ds, const torch::Tensor& centers,
                                 double sigma, double threshold) {
  if (!ds.has_ground_truth())
    throw PreconditionError("keypoint metrics need ground-truth scenes");
  if (centers.size(0) != ds.size()) throw ShapeError("one center set per frame required");
  std::vector<double> cov, cap;
  int64_t with_bar = 0;
  for (int64_t i = 0; i < ds.size(); ++i) {
    const auto scene = ds.scene(i);
    cov.push_back(keypoint_coverage(centers[i], sigma, scene, threshold).fraction());
    const double rate =
        distractor_capture_rate(centers[i], sigma, scene.distractor_mask, threshold);
    cap.push_back(rate);
    if (rate > 0.0) ++with_bar;
  }
  KeypointMetrics m;
  m.coverage = summarize_fractions(std::move(cov));
  m.capture = summarize_fractions(std::move(cap));
  m.frames_with_bar_keypoint =
      ds.size() ? static_cast<double>(with_bar) / static_cast<double>(ds.size()) : 0.0;
  return m;
}

namespace {

nlohmann::json history_json(const TrainHistory& h) { return h.to_json(); }

std::unique_ptr<Environment> make_env(const ExperimentConfig& c, uint64_t seed) {
  const auto& env = c.get_string("env");
  if (env == "corridor") return std::make_unique<CorridorEnv>(seed);
  auto s = sprites_from(c);
  s.seed = seed;
  return std::make_unique<SpritesEnv>(s);
}

struct KeypointModelPaths {
  bool permakey = true;
  fs::path vae, lspn, pointnet, transporter;
};

Frontend frontend_for(const ExperimentConfig& c, const KeypointModelPaths& paths,
                      EncoderKind kind) {
  if (kind == EncoderKind::kIdentity) return identity_frontend();
  if (paths.permakey) {
    PermaKeyModels m;
    m.vae = load_vae(paths.vae);
    m.lspn = load_lspn(paths.lspn);
    m.pointnet = load_pointnet(paths.pointnet);
    m.feature_layer = c.get_int("feature_layer");
    return permakey_frontend(m, kind);
  }
  return transporter_frontend(load_transporter(paths.transporter), kind);
}

}  // namespace

RunResult run_pipeline(const ExperimentConfig& config, const fs::path& run_dir,
                       const PipelineOptions& options) {
  config.validate();
  fs::create_directories(run_dir);
  config.save(run_dir / "config.txt");
  fs::remove(run_dir / "FAILED.json");
  StageCache cache(options.cache_dir.empty() ? run_dir / "cache" : options.cache_dir);
  RunResult result;
  result.run_dir = run_dir;
  std::string current = "validate";

  auto manifest = [&] {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : result.stages) stages.push_back(s.to_json());
    return nlohmann::json{
        {"config_hash", config.hash()},
        {"git_revision", git_revision()},
        {"seeds",
         {{"data", config.get_int("seed.data")},
          {"model", config.get_int("seed.model")},
          {"train_env", config.get_int("seed.train_env")},
          {"val_env", config.get_int("seed.val_env")},
          {"test_env", config.get_int_list("seed.test_env")}}},
        {"cache_dir", cache.root().string()},
        {"stages", stages}};
  };

  try {
    auto add = [&](StageRecord r) -> const StageRecord& {
      result.stages.push_back(std::move(r));
      return result.stages.back();
    };
    result.stages.reserve(16);
    auto idx = [&](const std::string& name) { return &result.stage(name); };

    const bool visual = config.get_string("env") != "corridor";
    const bool permakey = config.get_string("method") == "permakey";
    KeypointModelPaths paths;
    paths.permakey = permakey;
    std::vector<std::string> model_stages;

    if (visual) {
      current = "collect";
      add(cache.run("collect", config.subset({"env", "sprites", "bar", "data", "seed.data"}),
                    {}, [&](const fs::path& dir) {
                      auto env = make_env(config, static_cast<uint64_t>(config.get_int("seed.data")));
                      SplitSizes sizes{config.get_int("data.train"), config.get_int("data.val"),
                                       config.get_int("data.test")};
                      auto all = collect_frames(*env, uniform_random_policy(env->num_actions()),
                                                sizes.train + sizes.val + sizes.test,
                                                static_cast<uint64_t>(config.get_int("seed.data")));
                      auto splits = split_dataset(all, sizes);
                      write_split(dir / "data", splits.train);
                      write_split(dir / "data", splits.val);
                      write_split(dir / "data", splits.test);
                      return nlohmann::json{{"frames", all.size()}};
                    }));
      const fs::path data = idx("collect")->dir / "data";
      auto load = [&](Split s) { return read_split(data, s); };

      if (permakey) {
        current = "train_vae";
        add(cache.run("train_vae", config.subset({"vae", "seed.model"}), {idx("collect")},
                      [&](const fs::path& dir) {
                        torch::manual_seed(config.get_int("seed.model"));
                        Vae vae(vae_from(config));
                        auto r = train_vae(vae, load(Split::kTrain), load(Split::kVal),
                                           schedule_from(config, "vae"));
                        save_vae(dir / "vae.pt", vae);
                        return nlohmann::json{{"history", history_json(r.history)},
                                              {"train_pixel_mse", r.train_pixel_mse}};
                      }));
        paths.vae = idx("train_vae")->dir / "vae.pt";

        current = "train_lspn";
        add(cache.run("train_lspn", config.subset({"layers", "patch", "lspn", "seed.model"}),
                      {idx("collect"), idx("train_vae")}, [&](const fs::path& dir) {
                        torch::manual_seed(config.get_int("seed.model") + 1);
                        Vae vae = load_vae(paths.vae);
                        auto lcfg = lspn_from(config);
                        std::vector<int64_t> channels;
                        for (int64_t l : lcfg.layers)
                          channels.push_back(vae->config().encoder.filters.at(l));
                        LspnBank bank(lcfg, channels);
                        auto r = train_lspn(bank, vae, load(Split::kTrain), load(Split::kVal),
                                            schedule_from(config, "lspn"));
                        save_lspn(dir / "lspn.pt", bank);
                        nlohmann::json h = nlohmann::json::array();
                        for (const auto& x : r.histories) h.push_back(history_json(x));
                        return nlohmann::json{{"histories", h}};
                      }));
        paths.lspn = idx("train_lspn")->dir / "lspn.pt";

        current = "emit_maps";
        add(cache.run("emit_maps", "", {idx("collect"), idx("train_vae"), idx("train_lspn")},
                      [&](const fs::path& dir) {
                        Vae vae = load_vae(paths.vae);
                        LspnBank bank = load_lspn(paths.lspn);
                        for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
                          save_tensor(dir / ("maps_" + to_string(s) + ".pt"),
                                      compute_fused_maps(vae, bank, load(s)));
                        return nlohmann::json::object();
                      }));
        const fs::path maps_dir = idx("emit_maps")->dir;

        current = "train_pointnet";
        add(cache.run("train_pointnet", config.subset({"k", "sigma", "pointnet", "seed.model"}),
                      {idx("emit_maps")}, [&](const fs::path& dir) {
                        torch::manual_seed(config.get_int("seed.model") + 2);
                        auto pcfg = pointnet_from(config);
                        PointNet net(pcfg);
                        auto train = load_tensor(maps_dir / "maps_train.pt");
                        auto val = load_tensor(maps_dir / "maps_val.pt");
                        auto h = train_pointnet(net, train, val, schedule_from(config, "pointnet"));
                        save_pointnet(dir / "pointnet.pt", net);
                        const double test_loss =
                            evaluate_pointnet(net, load_tensor(maps_dir / "maps_test.pt"));
                        return nlohmann::json{{"history", history_json(h)},
                                              {"test_loss", test_loss}};
                      }));
        paths.pointnet = idx("train_pointnet")->dir / "pointnet.pt";

        current = "emit_keypoints";
        add(cache.run("emit_keypoints", "", {idx("collect"), idx("emit_maps"), idx("train_pointnet")},
                      [&](const fs::path& dir) {
                        PointNet net = load_pointnet(paths.pointnet);
                        auto centers = infer_centers(net, load_tensor(maps_dir / "maps_test.pt"));
                        write_keypoints(dir, load(Split::kTest), centers,
                                        net->config().sigma, false);
                        return nlohmann::json{{"frames", centers.size(0)}};
                      }));
        model_stages = {"train_vae", "train_lspn", "train_pointnet"};
      } else {
        current = "train_transporter";
        add(cache.run("train_transporter",
                      config.subset({"k", "sigma", "transporter", "seed.model"}),
                      {idx("collect")}, [&](const fs::path& dir) {
                        torch::manual_seed(config.get_int("seed.model") + 3);
                        Transporter net(transporter_from(config));
                        auto h = train_transporter(net, load(Split::kTrain), load(Split::kVal),
                                                   schedule_from(config, "transporter"));
                        save_transporter(dir / "transporter.pt", net);
                        return nlohmann::json{{"history", history_json(h)}};
                      }));
        paths.transporter = idx("train_transporter")->dir / "transporter.pt";

        current = "emit_keypoints";
        add(cache.run("emit_keypoints", "", {idx("collect"), idx("train_transporter")},
                      [&](const fs::path& dir) {
                        Transporter net = load_transporter(paths.transporter);
                        auto test = load(Split::kTest);
                        auto centers = transporter_centers(net, test.all_frames());
                        write_keypoints(dir, test, centers, net->config().sigma, false);
                        return nlohmann::json{{"frames", centers.size(0)}};
                      }));
        model_stages = {"train_transporter"};
      }

      current = "metrics";
      add(cache.run("metrics", config.subset({"metrics", "sigma"}),
                    {idx("collect"), idx("emit_keypoints")}, [&](const fs::path& dir) {
                      auto test = load(Split::kTest);
                      auto m = keypoint_metrics(test, read_keypoint_centers(idx("emit_keypoints")->dir),
                                                config.get_double("sigma"),
                                                config.get_double("metrics.threshold"));
                      write_json(dir / "report.json", m.to_json());
                      return m.to_json();
                    }));
    }

    if (config.get_int("agent.steps") > 0) {
      const auto kind = visual ? encoder_kind_from_string(config.get_string("encoder"))
                               : EncoderKind::kIdentity;
      std::vector<const StageRecord*> ups;
      for (const auto& s : model_stages) ups.push_back(idx(s));
      const std::vector<std::string> agent_keys = {"agent", "encoder", "feature_layer",
                                                   "seed.model", "seed.train_env",
                                                   "seed.val_env", "env", "sprites", "bar"};
      current = "train_agent";
      add(cache.run("train_agent", config.subset(agent_keys), ups, [&](const fs::path& dir) {
        auto frontend = frontend_for(config, paths, kind);
        nlohmann::json per_policy = nlohmann::json::array();
        for (int64_t p = 0; p < config.get_int("agent.policies"); ++p) {
          auto acfg = agent_from(config, p);
          torch::manual_seed(acfg.seed);
          auto env = make_env(config, acfg.train_env_seed);
          auto val_env = make_env(config, acfg.val_env_seed);
          DrqnSpec spec;
          spec.encoder = kind;
          spec.obs_shape = frontend(env->reset()).sizes().vec();
          spec.num_actions = env->num_actions();
          spec.lstm_units = acfg.lstm_units;
          DrqnNet net(spec);
          auto r = train_agent(net, *env, *val_env, frontend, acfg,
                               dir / ("resume_" + std::to_string(p) + ".pt"));
          save_drqn(dir / ("policy_" + std::to_string(p) + ".pt"), net,
                    {{"validation_mean", r.checkpoints.front().validation_mean},
                     {"step", r.checkpoints.front().step}});
          per_policy.push_back({{"validation_mean", r.checkpoints.front().validation_mean},
                                {"best_step", r.checkpoints.front().step},
                                {"episodes", r.episode_returns.size()}});
        }
        return nlohmann::json{{"policies", per_policy}};
      }));

      current = "evaluate";
      add(cache.run("evaluate", config.subset({"agent.eval_episodes", "agent.max_episode_steps",
                                               "seed.test_env"}),
                    {idx("train_agent")}, [&](const fs::path& dir) {
                      auto frontend = frontend_for(config, paths, kind);
                      std::vector<DrqnNet> policies;
                      for (int64_t p = 0; p < config.get_int("agent.policies"); ++p)
                        policies.push_back(load_drqn(idx("train_agent")->dir /
                                                     ("policy_" + std::to_string(p) + ".pt")));
                      auto res = evaluate_policies(
                          policies, [&](uint64_t seed) { return make_env(config, seed); },
                          frontend, test_seeds_from(config),
                          config.get_int("agent.eval_episodes"),
                          static_cast<uint64_t>(config.get_int("seed.train_env")),
                          static_cast<uint64_t>(config.get_int("seed.val_env")),
                          config.get_int("agent.max_episode_steps"));
                      write_score_csv(dir / "scores.csv", res);
                      write_json(dir / "evaluation.json", res.to_json());
                      return nlohmann::json{{"summary", res.summary.formatted()},
                                            {"mean", res.summary.mean},
                                            {"std", res.summary.std}};
                    }));
    }
  } catch (const std::exception& e) {
    write_json(run_dir / "FAILED.json",
               {{"stage", current}, {"error", e.what()}, {"completed", manifest()["stages"]}});
    throw;
  }
  result.manifest = manifest();
  write_json(run_dir / "manifest.json", result.manifest);
  return result;
}

SweepSpec parse_vary(const std::string& vary) {
  const auto eq = vary.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == vary.size())
    throw ConfigError("--vary expects key=v1,v2,... got '" + vary + "'");
  SweepSpec spec;
  spec.key = vary.substr(0, eq);
  const auto& field = schema_field(spec.key);
  const char sep = field.type == ValueType::kIntList ? '|' : ',';
  std::stringstream ss(vary.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, sep)) {
    parse_value(field, item);
    spec.values.push_back(item);
  }
  if (spec.values.empty()) throw ConfigError("--vary has no values");
  return spec;
}

nlohmann::json sweep(const ExperimentConfig& base, const SweepSpec& spec,
                     const fs::path& out_dir) {
  std::vector<ExperimentConfig> variants;
  for (const auto& v : spec.values) {
    ExperimentConfig c = base;
    c.set(spec.key, v);
    c.validate();
    variants.push_back(std::move(c));
  }
  nlohmann::json table = nlohmann::json::array();
  PipelineOptions opts;
  opts.cache_dir = out_dir / "cache";
  for (size_t i = 0; i < variants.size(); ++i) {
    const auto name = spec.key + "=" + spec.values[i];
    auto r = run_pipeline(variants[i], out_dir / name, opts);
    nlohmann::json row = {{"run", name}, {"dir", (out_dir / name).string()}};
    for (const auto& s : r.stages) row["stages"][s.name] = s.metrics;
    table.push_back(row);
  }
  write_json(out_dir / "sweep.json", table);
  return table;
}

}  // namespace permakey
