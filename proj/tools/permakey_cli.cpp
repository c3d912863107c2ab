#include <CLI11.hpp>
#include <torch/torch.h>

#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "permakey/config.hpp"
#include "permakey/dataset.hpp"
#include "permakey/errors.hpp"
#include "permakey/evaluation.hpp"
#include "permakey/frontend.hpp"
#include "permakey/lspn.hpp"
#include "permakey/pipeline.hpp"
#include "permakey/pointnet.hpp"
#include "permakey/rl_agent.hpp"
#include "permakey/sprites_env.hpp"
#include "permakey/transporter.hpp"
#include "permakey/vae.hpp"

namespace fs = std::filesystem;
using namespace permakey;

namespace {

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", file, "key = value experiment config");
    app->add_option("--set", overrides, "override, e.g. --set k=6");
  }
  ExperimentConfig load() const {
    ExperimentConfig c = file.empty() ? ExperimentConfig{} : ExperimentConfig::load(file);
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value");
      c.set(o.substr(0, eq), o.substr(eq + 1));
    }
    return c;
  }
};

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << j.dump(2) << "\n";
  if (!os) throw IoError("cannot write " + path.string());
}

std::vector<int64_t> parse_int_list(const std::string& text) {
  return std::get<std::vector<int64_t>>(parse_value(schema_field("layers"), text));
}

Frontend load_frontend(const fs::path& keypoints, EncoderKind kind, int64_t feature_layer) {
  if (kind == EncoderKind::kIdentity) return identity_frontend();
  if (fs::is_directory(keypoints)) {
    PermaKeyModels m;
    m.vae = load_vae(keypoints / "vae.pt");
    m.lspn = load_lspn(keypoints / "lspn.pt");
    m.pointnet = load_pointnet(keypoints / "pointnet.pt");
    m.feature_layer = feature_layer;
    return permakey_frontend(m, kind);
  }
  return transporter_frontend(load_transporter(keypoints), kind);
}

std::unique_ptr<Environment> env_from_name(const std::string& name, const ExperimentConfig& c,
                                           uint64_t seed) {
  if (name == "corridor") return std::make_unique<CorridorEnv>(seed);
  if (name == "sprites" || name == "sprites_bar") {
    auto cfg = c;
    cfg.set("env", name);
    auto s = sprites_from(cfg);
    s.seed = seed;
    return std::make_unique<SpritesEnv>(s);
  }
  if (name.starts_with("gym:"))
    throw ConfigError("environment '" + name + "' is not available in this build");
  throw ConfigError("unknown env '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keypoint discovery, baselines and recurrent Q-learning on sprites worlds"};
  app.require_subcommand(1);

  // collect
  auto* collect = app.add_subcommand("collect", "Roll out a random policy and store frames");
  std::string c_env = "sprites", c_out;
  int64_t c_train = 2000, c_val = 200, c_test = 200;
  uint64_t c_seed = 0;
  ConfigArgs c_cfg;
  collect->add_option("--env", c_env, "sprites | sprites_bar");
  collect->add_option("--out", c_out, "dataset root")->required();
  collect->add_option("--train", c_train);
  collect->add_option("--val", c_val);
  collect->add_option("--test", c_test);
  collect->add_option("--seed", c_seed);
  c_cfg.attach(collect);
  collect->callback([&] {
    auto c = c_cfg.load();
    auto env = env_from_name(c_env, c, c_seed);
    auto all = collect_frames(*env, uniform_random_policy(env->num_actions()),
                              c_train + c_val + c_test, c_seed);
    auto splits = split_dataset(all, {c_train, c_val, c_test});
    for (const auto* ds : {&splits.train, &splits.val, &splits.test}) write_split(c_out, *ds);
    std::cout << "wrote " << all.size() << " frames to " << c_out << "\n";
  });

  // augment
  auto* augment = app.add_subcommand("augment", "Superimpose distractor bars on a dataset");
  std::string a_data, a_out, a_mode = "h";
  uint64_t a_seed = 0;
  int a_thickness = 4;
  augment->add_option("--data", a_data)->required();
  augment->add_option("--out", a_out)->required();
  augment->add_option("--mode", a_mode, "h | v | both");
  augment->add_option("--thickness", a_thickness);
  augment->add_option("--seed", a_seed);
  augment->callback([&] {
    DistractorMode mode = a_mode == "v" ? DistractorMode::kVertical
                          : a_mode == "both" ? DistractorMode::kBoth
                                             : DistractorMode::kHorizontal;
    if (a_mode != "h" && a_mode != "v" && a_mode != "both")
      throw ConfigError("--mode must be h, v or both");
    auto spec = DistractorSpec::from_palette(mode, a_seed, a_thickness);
    std::mt19937_64 rng(a_seed);
    for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
      auto ds = read_split(a_data, s);
      auto frames = ds.raw_frames().clone();
      std::optional<torch::Tensor> labels;
      if (ds.labels()) labels = ds.labels()->clone();
      for (int64_t i = 0; i < ds.size(); ++i) {
        auto d = apply_distractor(ds.frame(i), spec, rng);
        frames[i].copy_(d.frame.to_hwc_bytes());
        if (labels) (*labels)[i].masked_fill_(d.mask, kDistractorLabel);
      }
      write_split(a_out, FrameDataset(frames, ds.episode_ids(), ds.steps(), labels,
                                      ds.n_instances(), s));
    }
    std::cout << "wrote augmented dataset to " << a_out << "\n";
  });

  // train-vae
  auto* tvae = app.add_subcommand("train-vae", "Train the convolutional VAE");
  std::string v_data, v_out;
  int64_t v_epochs = -1;
  ConfigArgs v_cfg;
  tvae->add_option("--data", v_data)->required();
  tvae->add_option("--out", v_out)->required();
  tvae->add_option("--epochs", v_epochs);
  v_cfg.attach(tvae);
  tvae->callback([&] {
    auto c = v_cfg.load();
    if (v_epochs >= 0) c.set_value("vae.epochs", v_epochs);
    torch::manual_seed(c.get_int("seed.model"));
    Vae vae(vae_from(c));
    auto r = train_vae(vae, read_split(v_data, Split::kTrain), read_split(v_data, Split::kVal),
                       schedule_from(c, "vae"));
    save_vae(v_out, vae);
    std::cout << r.history.to_json().dump() << "\n";
  });

  // train-lspn
  auto* tlspn = app.add_subcommand("train-lspn", "Train per-layer local spatial predictors");
  std::string l_data, l_vae, l_out, l_layers;
  ConfigArgs l_cfg;
  tlspn->add_option("--data", l_data)->required();
  tlspn->add_option("--vae", l_vae)->required();
  tlspn->add_option("--out", l_out)->required();
  tlspn->add_option("--layers", l_layers, "comma-separated VAE layers");
  l_cfg.attach(tlspn);
  tlspn->callback([&] {
    auto c = l_cfg.load();
    if (!l_layers.empty()) c.set("layers", l_layers);
    torch::manual_seed(c.get_int("seed.model") + 1);
    Vae vae = load_vae(l_vae);
    auto lcfg = lspn_from(c);
    std::vector<int64_t> channels;
    for (int64_t l : lcfg.layers) channels.push_back(vae->config().encoder.filters.at(l));
    LspnBank bank(lcfg, channels);
    auto r = train_lspn(bank, vae, read_split(l_data, Split::kTrain),
                        read_split(l_data, Split::kVal), schedule_from(c, "lspn"));
    save_lspn(l_out, bank);
    for (const auto& h : r.histories) std::cout << h.to_json().dump() << "\n";
  });

  // emit-error-maps
  auto* emaps = app.add_subcommand("emit-error-maps", "Write fused predictability maps");
  std::string m_data, m_vae, m_lspn, m_out;
  emaps->add_option("--data", m_data)->required();
  emaps->add_option("--vae", m_vae)->required();
  emaps->add_option("--lspn", m_lspn)->required();
  emaps->add_option("--out", m_out)->required();
  emaps->callback([&] {
    Vae vae = load_vae(m_vae);
    LspnBank bank = load_lspn(m_lspn);
    for (Split s : {Split::kTrain, Split::kVal, Split::kTest})
      save_tensor(fs::path(m_out) / ("maps_" + to_string(s) + ".pt"),
                  compute_fused_maps(vae, bank, read_split(m_data, s)));
    std::cout << "wrote maps to " << m_out << "\n";
  });

  // train-pointnet
  auto* tpn = app.add_subcommand("train-pointnet", "Train the keypoint bottleneck on error maps");
  std::string p_maps, p_out;
  int64_t p_k = -1;
  ConfigArgs p_cfg;
  tpn->add_option("--maps", p_maps)->required();
  tpn->add_option("--out", p_out)->required();
  tpn->add_option("--k", p_k);
  p_cfg.attach(tpn);
  tpn->callback([&] {
    auto c = p_cfg.load();
    if (p_k > 0) c.set_value("k", p_k);
    auto train = load_tensor(fs::path(p_maps) / "maps_train.pt");
    auto val = load_tensor(fs::path(p_maps) / "maps_val.pt");
    auto pcfg = pointnet_from(c);
    pcfg.in_channels = train.size(1);
    torch::manual_seed(c.get_int("seed.model") + 2);
    PointNet net(pcfg);
    auto h = train_pointnet(net, train, val, schedule_from(c, "pointnet"));
    save_pointnet(p_out, net);
    std::cout << h.to_json().dump() << "\n";
  });

  // emit-keypoints
  auto* ekp = app.add_subcommand("emit-keypoints", "Write per-frame keypoint records");
  std::string k_frames, k_out, k_split = "test", k_models, k_transporter;
  bool k_masks = false;
  ekp->add_option("--frames", k_frames, "dataset root")->required();
  ekp->add_option("--out", k_out)->required();
  ekp->add_option("--split", k_split);
  ekp->add_option("--models", k_models, "directory with vae.pt, lspn.pt, pointnet.pt");
  ekp->add_option("--transporter", k_transporter, "Transporter checkpoint");
  ekp->add_flag("--masks", k_masks, "also write [N, K, 84, 84] masks");
  ekp->callback([&] {
    auto ds = read_split(k_frames, split_from_string(k_split));
    torch::Tensor centers;
    double sigma = 0.1;
    if (!k_transporter.empty()) {
      auto t = load_transporter(k_transporter);
      centers = transporter_centers(t, ds.all_frames());
      sigma = t->config().sigma;
    } else if (!k_models.empty()) {
      PermaKeyModels m{load_vae(fs::path(k_models) / "vae.pt"),
                       load_lspn(fs::path(k_models) / "lspn.pt"),
                       load_pointnet(fs::path(k_models) / "pointnet.pt")};
      std::vector<torch::Tensor> parts;
      for (int64_t i = 0; i < ds.size(); i += 64) {
        std::vector<int64_t> idx;
        for (int64_t j = i; j < std::min(ds.size(), i + 64); ++j) idx.push_back(j);
        parts.push_back(permakey_centers(m, ds.batch(idx)));
      }
      centers = torch::cat(parts, 0);
      sigma = m.pointnet->config().sigma;
    } else {
      throw ConfigError("pass --models or --transporter");
    }
    write_keypoints(k_out, ds, centers, sigma, k_masks);
    std::cout << "wrote keypoints for " << ds.size() << " frames to " << k_out << "\n";
  });

  // train-transporter
  auto* ttr = app.add_subcommand("train-transporter", "Train the Transporter baseline");
  std::string t_data, t_out;
  int64_t t_k = -1;
  ConfigArgs t_cfg;
  ttr->add_option("--data", t_data)->required();
  ttr->add_option("--out", t_out)->required();
  ttr->add_option("--k", t_k);
  t_cfg.attach(ttr);
  ttr->callback([&] {
    auto c = t_cfg.load();
    if (t_k > 0) c.set_value("k", t_k);
    torch::manual_seed(c.get_int("seed.model") + 3);
    Transporter net(transporter_from(c));
    auto h = train_transporter(net, read_split(t_data, Split::kTrain),
                               read_split(t_data, Split::kVal), schedule_from(c, "transporter"));
    save_transporter(t_out, net);
    std::cout << h.to_json().dump() << "\n";
  });

  // train-agent
  auto* tag = app.add_subcommand("train-agent", "Train a recurrent Q-learning agent");
  std::string g_env = "sprites", g_encoder = "cnn", g_keypoints, g_out;
  int64_t g_steps = -1;
  ConfigArgs g_cfg;
  tag->add_option("--env", g_env, "sprites | sprites_bar | corridor");
  tag->add_option("--encoder", g_encoder, "cnn | gnn (identity for corridor)");
  tag->add_option("--keypoints", g_keypoints,
                  "PermaKey model directory or Transporter checkpoint");
  tag->add_option("--steps", g_steps);
  tag->add_option("--out", g_out)->required();
  g_cfg.attach(tag);
  tag->callback([&] {
    auto c = g_cfg.load();
    if (g_steps >= 0) c.set_value("agent.steps", g_steps);
    auto acfg = agent_from(c, 0);
    const auto kind = g_env == "corridor" ? EncoderKind::kIdentity
                                          : encoder_kind_from_string(g_encoder);
    if (kind != EncoderKind::kIdentity && g_keypoints.empty())
      throw ConfigError("--keypoints is required for visual environments");
    auto frontend = load_frontend(g_keypoints, kind, c.get_int("feature_layer"));
    auto env = env_from_name(g_env, c, acfg.train_env_seed);
    auto val_env = env_from_name(g_env, c, acfg.val_env_seed);
    DrqnSpec spec{kind, frontend(env->reset()).sizes().vec(), env->num_actions(),
                  acfg.lstm_units};
    torch::manual_seed(acfg.seed);
    DrqnNet net(spec);
    auto r = train_agent(net, *env, *val_env, frontend, acfg, fs::path(g_out).string() + ".resume");
    save_drqn(g_out, net,
              {{"env", g_env},
               {"keypoints", g_keypoints},
               {"validation_mean", r.checkpoints.front().validation_mean},
               {"step", r.checkpoints.front().step},
               {"train_env_seed", acfg.train_env_seed},
               {"val_env_seed", acfg.val_env_seed},
               {"agent", acfg.to_json()}});
    std::cout << "best validation mean " << r.checkpoints.front().validation_mean
              << " at step " << r.checkpoints.front().step << "\n";
  });

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score policies on held-out seeds");
  std::vector<std::string> e_policies;
  std::string e_env = "sprites", e_keypoints, e_out = "evaluation";
  int64_t e_seeds = 10, e_episodes = 10, e_first_seed = 1001;
  uint64_t e_train_seed = 1, e_val_seed = 2;
  ConfigArgs e_cfg;
  eval->add_option("--policies", e_policies)->required();
  eval->add_option("--env", e_env);
  eval->add_option("--keypoints", e_keypoints);
  eval->add_option("--seeds", e_seeds);
  eval->add_option("--first-seed", e_first_seed);
  eval->add_option("--episodes", e_episodes);
  eval->add_option("--train-seed", e_train_seed);
  eval->add_option("--val-seed", e_val_seed);
  eval->add_option("--out", e_out, "output directory");
  e_cfg.attach(eval);
  eval->callback([&] {
    auto c = e_cfg.load();
    std::vector<DrqnNet> policies;
    nlohmann::json checksums = nlohmann::json::object();
    for (const auto& p : e_policies) {
      policies.push_back(load_drqn(p));
      checksums[p] = sha256_file(p);
    }
    const auto kind = policies.front()->spec().encoder;
    auto frontend = load_frontend(e_keypoints, kind, c.get_int("feature_layer"));
    std::vector<uint64_t> seeds;
    for (int64_t i = 0; i < e_seeds; ++i) seeds.push_back(static_cast<uint64_t>(e_first_seed + i));
    auto res = evaluate_policies(
        policies, [&](uint64_t s) { return env_from_name(e_env, c, s); }, frontend, seeds,
        e_episodes, e_train_seed, e_val_seed, c.get_int("agent.max_episode_steps"));
    write_score_csv(fs::path(e_out) / "scores.csv", res);
    write_json_file(fs::path(e_out) / "manifest.json",
                    {{"git_revision", git_revision()},
                     {"env", e_env},
                     {"train_seed", e_train_seed},
                     {"val_seed", e_val_seed},
                     {"test_seeds", seeds},
                     {"episodes_per_seed", e_episodes},
                     {"policy_checksums", checksums},
                     {"config", c.serialize()},
                     {"result", res.to_json()}});
    std::cout << res.summary.formatted() << "\n";
  });

  // metrics
  auto* met = app.add_subcommand("metrics", "Keypoint coverage, capture rate and stability");
  std::vector<std::string> s_kps;
  std::string s_scenes, s_split = "test", s_out = "report.json";
  double s_sigma = 0.1, s_threshold = kDefaultCoverageThreshold;
  met->add_option("--kps", s_kps, "keypoint record directories (>= 2 adds stability)")->required();
  met->add_option("--scenes", s_scenes, "dataset root with labels")->required();
  met->add_option("--split", s_split);
  met->add_option("--sigma", s_sigma);
  met->add_option("--threshold", s_threshold);
  met->add_option("--out", s_out);
  met->callback([&] {
    auto ds = read_split(s_scenes, split_from_string(s_split));
    nlohmann::json report = {{"runs", nlohmann::json::array()}};
    std::vector<torch::Tensor> runs;
    for (const auto& k : s_kps) {
      auto centers = read_keypoint_centers(k);
      runs.push_back(centers);
      auto m = keypoint_metrics(ds, centers, s_sigma, s_threshold);
      auto row = m.to_json();
      row["kps"] = k;
      report["runs"].push_back(row);
    }
    if (runs.size() >= 2) report["stability"] = stability_across_seeds(runs).to_json();
    write_json_file(s_out, report);
    std::cout << report.dump(2) << "\n";
  });

  // figures
  auto* fig = app.add_subcommand("figures", "Render keypoint / error-map overlays");
  std::string f_style = "fig2", f_data, f_split = "test", f_kps, f_maps, f_out;
  int64_t f_frames = 6, f_scale = 2;
  fig->add_option("--style", f_style, "fig2 (frames, keypoints, per-layer maps)");
  fig->add_option("--data", f_data)->required();
  fig->add_option("--split", f_split);
  fig->add_option("--kps", f_kps, "keypoint record directory");
  fig->add_option("--maps", f_maps, "fused map tensor file for the same split");
  fig->add_option("--frames", f_frames);
  fig->add_option("--scale", f_scale);
  fig->add_option("--out", f_out)->required();
  fig->callback([&] {
    if (f_style != "fig2") throw ConfigError("unknown figure style '" + f_style + "'");
    auto ds = read_split(f_data, split_from_string(f_split));
    const int64_t n = std::min(f_frames, ds.size());
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::optional<torch::Tensor> centers, maps;
    if (!f_kps.empty()) centers = read_keypoint_centers(f_kps).slice(0, 0, n);
    if (!f_maps.empty()) maps = load_tensor(f_maps).slice(0, 0, n);
    write_png(f_out, render_overlay(ds.batch(idx), centers, maps, f_scale));
    std::cout << "wrote " << f_out << "\n";
  });

  // run
  auto* run = app.add_subcommand("run", "Run the full cached pipeline from a config");
  ConfigArgs r_cfg;
  std::string r_out = "runs/default", r_cache;
  r_cfg.attach(run);
  run->add_option("--out", r_out, "run directory");
  run->add_option("--cache", r_cache, "shared artifact cache");
  run->callback([&] {
    auto c = r_cfg.load();
    auto r = run_pipeline(c, r_out, {r_cache});
    std::cout << r.manifest.dump(2) << "\n";
  });

  // sweep
  auto* sw = app.add_subcommand("sweep", "Run the pipeline over a grid of one key");
  ConfigArgs w_cfg;
  std::string w_vary, w_out = "runs/sweep";
  w_cfg.attach(sw);
  sw->add_option("--vary", w_vary, "k=5,7,10 or layers=0|0,1|2,3|0,1,2,3")->required();
  sw->add_option("--out", w_out);
  sw->callback([&] {
    auto table = sweep(w_cfg.load(), parse_vary(w_vary), w_out);
    std::cout << table.dump(2) << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
