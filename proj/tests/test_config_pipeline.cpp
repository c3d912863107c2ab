#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "permakey/config.hpp"
#include "permakey/errors.hpp"
#include "permakey/pipeline.hpp"
#include "permakey/sprites_env.hpp"
#include "test_util.hpp"

using namespace permakey;
using permakey::test_support::TempDir;

namespace {

ExperimentConfig tiny_permakey() {
  return ExperimentConfig::parse(R"(
# smallest end-to-end keypoint run
env = sprites
method = permakey
k = 2
layers = 0
data.train = 24
data.val = 8
data.test = 8
vae.filters = 4,4,4,4
vae.latent = 8
vae.epochs = 1
vae.batch = 8
lspn.hidden = 8
lspn.cells_per_image = 16
lspn.epochs = 1
lspn.batch = 8
pointnet.filters = 4,4,4,4
pointnet.epochs = 1
pointnet.batch = 8
agent.steps = 0
)");
}

ExperimentConfig tiny_corridor() {
  return ExperimentConfig::parse(R"(
env = corridor
agent.steps = 150
agent.policies = 2
agent.lstm_units = 8
agent.batch = 4
agent.learning_starts = 50
agent.validation_interval = 75
agent.validation_episodes = 2
agent.max_episode_steps = 20
agent.eval_episodes = 2
seed.test_env = 11,12
)");
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, DefaultsRoundTrip) {
  ExperimentConfig c;
  auto back = ExperimentConfig::parse(c.serialize());
  EXPECT_EQ(back, c);
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_EQ(c.get_int("k"), 10);
  EXPECT_EQ(c.get_int_list("layers"), (std::vector<int64_t>{0, 1}));
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, FileRoundTrip) {
  TempDir dir;
  auto c = tiny_permakey();
  c.save(dir / "run.cfg");
  EXPECT_EQ(ExperimentConfig::load(dir / "run.cfg"), c);
  EXPECT_THROW(ExperimentConfig::load(dir / "missing.cfg"), IoError);
}

TEST(Config, ParseErrors) {
  EXPECT_THROW(ExperimentConfig::parse("nonsense = 1"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("k = 3\nk = 4"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("k = three"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("k"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("method = magic"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("sigma = wide"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("agent.freeze_encoder = maybe"), ConfigError);
  ExperimentConfig c;
  EXPECT_THROW(c.get_double("k"), ConfigError);
  EXPECT_THROW(c.set_value("k", std::string("x")), ConfigError);
}

TEST(Config, ValidationRejectsBadRuns) {
  auto gym = ExperimentConfig::parse("env = gym:MsPacman");
  EXPECT_THROW(gym.validate(), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("env = atlantis").validate(), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("seed.val_env = 1").validate(), ProtocolError);
  EXPECT_THROW(ExperimentConfig::parse("seed.test_env = 5,1").validate(), ProtocolError);
  EXPECT_THROW(ExperimentConfig::parse("seed.test_env = 2").validate(), ProtocolError);
  EXPECT_THROW(ExperimentConfig::parse("seed.test_env = 7,7").validate(), ProtocolError);
  EXPECT_THROW(ExperimentConfig::parse("k = 0").validate(), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("layers = 0,4").validate(), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("vae.filters = 4,4").validate(), ConfigError);
}

TEST(Config, SubsetMatchesWholeKeysOnly) {
  ExperimentConfig c;
  const auto s = c.subset({"k", "sigma"});
  EXPECT_EQ(s, "k = 10\nsigma = " + format_value(c.values().at("sigma")) + "\n");
  EXPECT_EQ(c.subset({"seed.data"}), "seed.data = 0\n");
}

TEST(Config, TypedViews) {
  auto c = tiny_permakey();
  EXPECT_EQ(vae_from(c).encoder.filters, (std::vector<int64_t>{4, 4, 4, 4}));
  EXPECT_EQ(pointnet_from(c).num_keypoints, 2);
  auto a = agent_from(c, 2);
  EXPECT_EQ(a.seed, 2u);
  EXPECT_EQ(a.train_env_seed, 1u);
  EXPECT_EQ(test_seeds_from(c).size(), 10u);
}

TEST(Sha256, KnownDigest) {
  EXPECT_EQ(sha256_hex("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(StageCache, HitMissAndTamper) {
  TempDir dir;
  StageCache cache(dir / "cache");
  int calls = 0;
  auto body = [&](const std::filesystem::path& d) {
    ++calls;
    std::ofstream(d / "out.txt") << "payload";
    return nlohmann::json{{"calls", calls}};
  };
  auto a = cache.run("s", "x = 1\n", {}, body);
  EXPECT_FALSE(a.cached);
  auto b = cache.run("s", "x = 1\n", {}, body);
  EXPECT_TRUE(b.cached);
  EXPECT_EQ(calls, 1);
  EXPECT_EQ(b.outputs_digest, a.outputs_digest);
  EXPECT_EQ(b.metrics.at("calls"), 1);

  auto c = cache.run("s", "x = 2\n", {}, body);
  EXPECT_FALSE(c.cached);
  EXPECT_NE(c.dir, a.dir);

  std::ofstream(a.dir / "out.txt") << "tampered";
  auto d = cache.run("s", "x = 1\n", {}, body);
  EXPECT_FALSE(d.cached);
  EXPECT_EQ(calls, 3);

  StageRecord up;
  up.name = "up";
  up.outputs_digest = "aaaa";
  auto e = cache.run("s", "x = 1\n", {&up}, body);
  EXPECT_FALSE(e.cached);
  up.outputs_digest = "bbbb";
  auto f = cache.run("s", "x = 1\n", {&up}, body);
  EXPECT_FALSE(f.cached);
  EXPECT_NE(e.key, f.key);
}

TEST(Pipeline, ChangingOnlyKReusesUpstreamStages) {
  TempDir dir;
  PipelineOptions opts;
  opts.cache_dir = dir / "cache";
  auto c = tiny_permakey();
  auto first = run_pipeline(c, dir / "a", opts);
  for (const auto* name : {"collect", "train_vae", "train_lspn", "emit_maps",
                           "train_pointnet", "emit_keypoints", "metrics"}) {
    ASSERT_TRUE(first.has_stage(name)) << name;
    EXPECT_FALSE(first.stage(name).cached) << name;
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "a" / "config.txt"));
  EXPECT_EQ(first.manifest.at("config_hash"), c.hash());
  auto centers = read_keypoint_centers(first.stage("emit_keypoints").dir);
  EXPECT_EQ(centers.sizes(), (std::vector<int64_t>{8, 2, 2}));

  auto again = run_pipeline(c, dir / "a", opts);
  for (const auto& s : again.stages) EXPECT_TRUE(s.cached) << s.name;

  c.set("k", "3");
  auto changed = run_pipeline(c, dir / "b", opts);
  for (const auto* name : {"collect", "train_vae", "train_lspn", "emit_maps"})
    EXPECT_TRUE(changed.stage(name).cached) << name;
  for (const auto* name : {"train_pointnet", "emit_keypoints", "metrics"})
    EXPECT_FALSE(changed.stage(name).cached) << name;
}

TEST(Pipeline, SeedCollisionFailsBeforeAnyStage) {
  TempDir dir;
  auto c = tiny_permakey();
  c.set("seed.test_env", "1");
  EXPECT_THROW(run_pipeline(c, dir / "run"), ProtocolError);
  EXPECT_FALSE(std::filesystem::exists(dir / "run" / "cache"));
}

TEST(Pipeline, CorridorAgentAndEvaluation) {
  TempDir dir;
  auto r = run_pipeline(tiny_corridor(), dir / "run");
  ASSERT_TRUE(r.has_stage("train_agent"));
  ASSERT_TRUE(r.has_stage("evaluate"));
  EXPECT_FALSE(r.has_stage("collect"));
  const auto& m = r.stage("evaluate").metrics;
  EXPECT_TRUE(m.contains("summary"));
  const auto csv = slurp(r.stage("evaluate").dir / "scores.csv");
  EXPECT_NE(csv.find("policy,seed,episode_scores,seed_mean"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(r.stage("train_agent").dir / "policy_1.pt"));
}

TEST(Pipeline, StageFailureWritesFailedRecord) {
  TempDir dir;
  auto c = tiny_corridor();
  c.set("agent.replay", "2");
  EXPECT_THROW(run_pipeline(c, dir / "run"), ConfigError);
  ASSERT_TRUE(std::filesystem::exists(dir / "run" / "FAILED.json"));
  auto failed = nlohmann::json::parse(slurp(dir / "run" / "FAILED.json"));
  EXPECT_EQ(failed.at("stage"), "train_agent");
  EXPECT_NE(failed.at("error").get<std::string>().find("replay"), std::string::npos);
}

TEST(Sweep, ParseVary) {
  auto k = parse_vary("k=5,7,10");
  EXPECT_EQ(k.key, "k");
  EXPECT_EQ(k.values, (std::vector<std::string>{"5", "7", "10"}));
  auto layers = parse_vary("layers=0|0,1|2,3");
  EXPECT_EQ(layers.values, (std::vector<std::string>{"0", "0,1", "2,3"}));
  EXPECT_THROW(parse_vary("k"), ConfigError);
  EXPECT_THROW(parse_vary("k="), ConfigError);
  EXPECT_THROW(parse_vary("bogus=1"), ConfigError);
  EXPECT_THROW(parse_vary("k=1,x"), ConfigError);
}

TEST(Sweep, OneRunPerValue) {
  TempDir dir;
  auto table = sweep(tiny_corridor(), parse_vary("agent.lstm_units=4,6"), dir.path());
  ASSERT_EQ(table.size(), 2u);
  EXPECT_EQ(table[0].at("run"), "agent.lstm_units=4");
  EXPECT_TRUE(table[1].at("stages").contains("evaluate"));
  EXPECT_TRUE(std::filesystem::exists(dir / "agent.lstm_units=6" / "manifest.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "sweep.json"));
}

TEST(KeypointRecords, RoundTrip) {
  TempDir dir;
  SpritesConfig sc;
  sc.seed = 3;
  SpritesEnv env(sc);
  auto ds = collect_frames(env, uniform_random_policy(env.num_actions()), 5, 3);
  auto centers = torch::rand({5, 3, 2}) * 2 - 1;
  write_keypoints(dir / "kp", ds, centers, 0.1, true);
  EXPECT_TRUE(torch::allclose(read_keypoint_centers(dir / "kp"), centers));
  EXPECT_EQ(load_tensor(dir / "kp" / "masks.pt").sizes(),
            (std::vector<int64_t>{5, 3, 84, 84}));
  std::ifstream is(dir / "kp" / "keypoints.jsonl");
  std::string line;
  int64_t rows = 0;
  while (std::getline(is, line)) {
    auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("frame_id"), rows);
    EXPECT_EQ(j.at("centers").size(), 3u);
    ++rows;
  }
  EXPECT_EQ(rows, 5);
  EXPECT_THROW(write_keypoints(dir / "bad", ds, torch::zeros({4, 3, 2}), 0.1, false),
               ShapeError);
}
