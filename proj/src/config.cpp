#include "permakey/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <set>
#include <sstream>

#include "permakey/errors.hpp"

namespace permakey {

namespace {

using V = ValueType;
using IL = std::vector<int64_t>;

std::vector<ConfigField> build_schema() {
  std::vector<ConfigField> s = {
      {"env", V::kString, std::string("sprites"), {}, "sprites | sprites_bar | corridor"},
      {"method", V::kString, std::string("permakey"), {"permakey", "transporter"}, "keypoint method"},
      {"k", V::kInt, int64_t{10}, {}, "number of keypoints"},
      {"sigma", V::kDouble, 0.1, {}, "Gaussian window width (normalized units)"},
      {"layers", V::kIntList, IL{0, 1}, {}, "VAE layers with an LSPN"},
      {"patch", V::kInt, int64_t{2}, {}, "LSP patch side"},
      {"encoder", V::kString, std::string("cnn"), {"cnn", "gnn"}, "agent keypoint encoder"},
      {"feature_layer", V::kInt, int64_t{2}, {}, "VAE layer pooled under keypoint masks"},
      {"sprites.n_rewards", V::kInt, int64_t{1}, {}, ""},
      {"sprites.n_enemies", V::kInt, int64_t{1}, {}, ""},
      {"sprites.min_size", V::kInt, int64_t{10}, {}, ""},
      {"sprites.max_size", V::kInt, int64_t{16}, {}, ""},
      {"sprites.textured", V::kBool, true, {}, ""},
      {"sprites.max_steps", V::kInt, int64_t{200}, {}, ""},
      {"bar.orientation", V::kString, std::string("horizontal"), {"horizontal", "vertical"}, ""},
      {"bar.thickness", V::kInt, int64_t{4}, {}, ""},
      {"bar.speed", V::kInt, int64_t{2}, {}, ""},
      {"data.train", V::kInt, int64_t{85000}, {}, "training frames"},
      {"data.val", V::kInt, int64_t{5000}, {}, "validation frames"},
      {"data.test", V::kInt, int64_t{5000}, {}, "test frames"},
      {"vae.filters", V::kIntList, IL{32, 64, 64, 128}, {}, "VAE / PointNet encoder widths"},
      {"vae.latent", V::kInt, int64_t{128}, {}, "VAE latent size"},
      {"lspn.hidden", V::kIntList, IL{512, 256}, {}, "LSPN hidden widths"},
      {"lspn.cells_per_image", V::kInt, int64_t{0}, {}, "sampled LSP cells per image (0: all)"},
      {"pointnet.filters", V::kIntList, IL{32, 64, 64, 128}, {}, "PointNet encoder widths"},
      {"pointnet.regressor_gain", V::kDouble, 3.0, {}, "init scale of the heatmap regressor"},
      {"transporter.filters", V::kIntList, IL{16, 16, 32, 32}, {}, "Transporter widths"},
      {"transporter.min_offset", V::kInt, int64_t{1}, {}, ""},
      {"transporter.max_offset", V::kInt, int64_t{20}, {}, ""},
      {"metrics.threshold", V::kDouble, std::exp(-0.5), {}, "coverage threshold"},
      {"agent.steps", V::kInt, int64_t{100000}, {}, "interactions per policy (0: skip RL)"},
      {"agent.policies", V::kInt, int64_t{3}, {}, "independently trained policies"},
      {"agent.eval_episodes", V::kInt, int64_t{10}, {}, "episodes per test seed"},
      {"agent.gamma", V::kDouble, 0.99, {}, ""},
      {"agent.lstm_units", V::kInt, int64_t{128}, {}, ""},
      {"agent.batch", V::kInt, int64_t{16}, {}, ""},
      {"agent.window", V::kInt, int64_t{8}, {}, ""},
      {"agent.n_step", V::kInt, int64_t{3}, {}, ""},
      {"agent.tau", V::kDouble, 0.005, {}, ""},
      {"agent.lr", V::kDouble, 2e-4, {}, ""},
      {"agent.grad_clip", V::kDouble, 10.0, {}, ""},
      {"agent.epsilon_start", V::kDouble, 1.0, {}, ""},
      {"agent.epsilon_end", V::kDouble, 0.1, {}, ""},
      {"agent.epsilon_steps", V::kInt, int64_t{100000}, {}, ""},
      {"agent.replay", V::kInt, int64_t{100000}, {}, ""},
      {"agent.learning_starts", V::kInt, int64_t{1000}, {}, ""},
      {"agent.validation_interval", V::kInt, int64_t{10000}, {}, ""},
      {"agent.validation_episodes", V::kInt, int64_t{10}, {}, ""},
      {"agent.max_episode_steps", V::kInt, int64_t{0}, {}, ""},
      {"agent.freeze_encoder", V::kBool, false, {}, ""},
      {"seed.data", V::kInt, int64_t{0}, {}, ""},
      {"seed.model", V::kInt, int64_t{0}, {}, ""},
      {"seed.train_env", V::kInt, int64_t{1}, {}, ""},
      {"seed.val_env", V::kInt, int64_t{2}, {}, ""},
      {"seed.test_env", V::kIntList,
       IL{1001, 1002, 1003, 1004, 1005, 1006, 1007, 1008, 1009, 1010}, {}, ""},
  };
  struct Opt {
    const char* prefix;
    double decay_rate;
    int64_t decay_steps, batch, patience;
  };
  for (const Opt& o : {Opt{"vae", 0.85, 10000, 32, 10}, Opt{"lspn", 0.85, 10000, 32, 10},
                       Opt{"pointnet", 0.85, 10000, 32, 10},
                       Opt{"transporter", 0.9, 30000, 64, 5}}) {
    const std::string p = o.prefix;
    s.push_back({p + ".lr", V::kDouble, 2e-4, {}, ""});
    s.push_back({p + ".decay_rate", V::kDouble, o.decay_rate, {}, ""});
    s.push_back({p + ".decay_steps", V::kInt, o.decay_steps, {}, ""});
    s.push_back({p + ".batch", V::kInt, o.batch, {}, ""});
    s.push_back({p + ".epochs", V::kInt, int64_t{100}, {}, ""});
    s.push_back({p + ".patience", V::kInt, o.patience, {}, ""});
    s.push_back({p + ".max_batches", V::kInt, int64_t{0}, {}, "minibatches per epoch cap (0: all)"});
  }
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

int64_t parse_int(const std::string& key, const std::string& text) {
  int64_t v = 0;
  const auto t = trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError("'" + key + "' expects an integer, got '" + text + "'");
  return v;
}

}  // namespace

const std::vector<ConfigField>& config_schema() {
  static const std::vector<ConfigField> schema = build_schema();
  return schema;
}

const ConfigField& schema_field(const std::string& key) {
  for (const auto& f : config_schema())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string format_value(const ConfigValue& value) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, bool>) {
          return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, int64_t>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, double>) {
          char buf[64];
          auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
          return std::string(buf, ptr);
        } else if constexpr (std::is_same_v<T, std::string>) {
          return v;
        } else {
          std::string out;
          for (size_t i = 0; i < v.size(); ++i)
            out += (i ? "," : "") + std::to_string(v[i]);
          return out;
        }
      },
      value);
}

ConfigValue parse_value(const ConfigField& field, const std::string& raw) {
  const std::string text = trim(raw);
  switch (field.type) {
    case V::kBool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw ConfigError("'" + field.key + "' expects true/false, got '" + raw + "'");
    case V::kInt:
      return parse_int(field.key, text);
    case V::kDouble: {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc() || ptr != text.data() + text.size() || text.empty())
        throw ConfigError("'" + field.key + "' expects a number, got '" + raw + "'");
      return v;
    }
    case V::kString:
      if (!field.choices.empty() &&
          std::find(field.choices.begin(), field.choices.end(), text) ==
              field.choices.end())
        throw ConfigError("'" + field.key + "' must be one of its choices, got '" +
                          raw + "'");
      return text;
    case V::kIntList: {
      std::vector<int64_t> out;
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) out.push_back(parse_int(field.key, item));
      if (out.empty()) throw ConfigError("'" + field.key + "' expects a list");
      return out;
    }
  }
  throw ConfigError("bad schema type");
}

ExperimentConfig::ExperimentConfig() {
  for (const auto& f : config_schema()) values_[f.key] = f.default_value;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  std::set<std::string> seen;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(t.substr(0, eq));
    if (!seen.insert(key).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    c.set(key, t.substr(eq + 1));
  }
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + format_value(v) + "\n";
  return out;
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  os << serialize();
  if (!os) throw IoError("cannot write config " + path.string());
}

void ExperimentConfig::set(const std::string& key, const std::string& text) {
  values_[key] = parse_value(schema_field(key), text);
}

void ExperimentConfig::set_value(const std::string& key, ConfigValue value) {
  const auto& f = schema_field(key);
  if (value.index() != f.default_value.index())
    throw ConfigError("'" + key + "' assigned a value of the wrong type");
  values_[key] = std::move(value);
}

namespace {

template <typename T>
const T& typed(const std::map<std::string, ConfigValue>& values,
               const std::string& key) {
  const auto it = values.find(key);
  if (it == values.end()) throw ConfigError("unknown config key '" + key + "'");
  if (const auto* v = std::get_if<T>(&it->second)) return *v;
  throw ConfigError("config key '" + key + "' has another type");
}

}  // namespace

bool ExperimentConfig::get_bool(const std::string& key) const {
  return typed<bool>(values_, key);
}
int64_t ExperimentConfig::get_int(const std::string& key) const {
  return typed<int64_t>(values_, key);
}
double ExperimentConfig::get_double(const std::string& key) const {
  return typed<double>(values_, key);
}
const std::string& ExperimentConfig::get_string(const std::string& key) const {
  return typed<std::string>(values_, key);
}
const std::vector<int64_t>& ExperimentConfig::get_int_list(const std::string& key) const {
  return typed<std::vector<int64_t>>(values_, key);
}

void ExperimentConfig::validate() const {
  const auto& env = get_string("env");
  if (env.starts_with("gym:"))
    throw ConfigError("environment '" + env + "' is not available in this build");
  if (env != "sprites" && env != "sprites_bar" && env != "corridor")
    throw ConfigError("unknown env '" + env + "'");
  const auto train = get_int("seed.train_env");
  const auto val = get_int("seed.val_env");
  if (val == train)
    throw ProtocolError("seed.val_env equals seed.train_env (" + std::to_string(val) + ")");
  std::set<int64_t> tests;
  for (int64_t s : get_int_list("seed.test_env")) {
    if (s == train || s == val)
      throw ProtocolError("test seed " + std::to_string(s) +
                          " collides with the training or validation seed");
    if (!tests.insert(s).second)
      throw ProtocolError("duplicate test seed " + std::to_string(s));
  }
  if (get_int("k") < 1) throw ConfigError("k must be >= 1");
  if (!(get_double("sigma") > 0.0)) throw ConfigError("sigma must be > 0");
  if (get_int("patch") < 1) throw ConfigError("patch must be >= 1");
  for (int64_t l : get_int_list("layers"))
    if (l < 0 || l >= static_cast<int64_t>(get_int_list("vae.filters").size()))
      throw ConfigError("layer " + std::to_string(l) + " does not exist");
  for (const char* key : {"data.train", "data.val", "data.test"})
    if (get_int(key) < 1) throw ConfigError(std::string(key) + " must be >= 1");
  if (get_int_list("vae.filters").size() != 4 || get_int_list("pointnet.filters").size() != 4 ||
      get_int_list("transporter.filters").size() != 4)
    throw ConfigError("encoder width lists need 4 entries");
}

std::string ExperimentConfig::subset(const std::vector<std::string>& prefixes) const {
  std::string out;
  for (const auto& [k, v] : values_)
    for (const auto& p : prefixes)
      if (k == p || k.starts_with(p + ".")) {
        out += k + " = " + format_value(v) + "\n";
        break;
      }
  return out;
}

std::string ExperimentConfig::hash() const { return sha256_hex(serialize()); }

OptimSchedule schedule_from(const ExperimentConfig& c, const std::string& p) {
  OptimSchedule s;
  s.learning_rate = c.get_double(p + ".lr");
  s.decay_rate = c.get_double(p + ".decay_rate");
  s.decay_steps = c.get_int(p + ".decay_steps");
  s.batch_size = c.get_int(p + ".batch");
  s.epochs = c.get_int(p + ".epochs");
  s.patience = c.get_int(p + ".patience");
  s.max_batches_per_epoch = c.get_int(p + ".max_batches");
  s.seed = static_cast<uint64_t>(c.get_int("seed.model"));
  return s;
}

SpritesConfig sprites_from(const ExperimentConfig& c) {
  SpritesConfig s;
  s.n_rewards = static_cast<int>(c.get_int("sprites.n_rewards"));
  s.n_enemies = static_cast<int>(c.get_int("sprites.n_enemies"));
  s.min_size = static_cast<int>(c.get_int("sprites.min_size"));
  s.max_size = static_cast<int>(c.get_int("sprites.max_size"));
  s.textured_background = c.get_bool("sprites.textured");
  s.max_steps = static_cast<int>(c.get_int("sprites.max_steps"));
  s.moving_bar = c.get_string("env") == "sprites_bar";
  s.bar_orientation = c.get_string("bar.orientation") == "vertical"
                          ? BarOrientation::kVertical
                          : BarOrientation::kHorizontal;
  s.bar_thickness = static_cast<int>(c.get_int("bar.thickness"));
  s.bar_speed = static_cast<int>(c.get_int("bar.speed"));
  s.seed = static_cast<uint64_t>(c.get_int("seed.data"));
  return s;
}

VaeConfig vae_from(const ExperimentConfig& c) {
  VaeConfig v;
  v.encoder.filters = c.get_int_list("vae.filters");
  v.latent_dim = c.get_int("vae.latent");
  return v;
}

LspnConfig lspn_from(const ExperimentConfig& c) {
  LspnConfig l;
  l.layers = c.get_int_list("layers");
  l.patch = c.get_int("patch");
  l.hidden = c.get_int_list("lspn.hidden");
  l.cells_per_image = c.get_int("lspn.cells_per_image");
  return l;
}

PointNetConfig pointnet_from(const ExperimentConfig& c) {
  PointNetConfig p;
  p.in_channels = static_cast<int64_t>(c.get_int_list("layers").size());
  p.encoder.filters = c.get_int_list("pointnet.filters");
  p.num_keypoints = c.get_int("k");
  p.sigma = c.get_double("sigma");
  p.regressor_gain = c.get_double("pointnet.regressor_gain");
  return p;
}

TransporterConfig transporter_from(const ExperimentConfig& c) {
  TransporterConfig t;
  t.features.filters = c.get_int_list("transporter.filters");
  t.num_keypoints = c.get_int("k");
  t.sigma = c.get_double("sigma");
  t.min_offset = c.get_int("transporter.min_offset");
  t.max_offset = c.get_int("transporter.max_offset");
  return t;
}

AgentConfig agent_from(const ExperimentConfig& c, int64_t policy_index) {
  AgentConfig a;
  a.lstm_units = c.get_int("agent.lstm_units");
  a.batch_size = c.get_int("agent.batch");
  a.window = c.get_int("agent.window");
  a.n_step = c.get_int("agent.n_step");
  a.tau = c.get_double("agent.tau");
  a.learning_rate = c.get_double("agent.lr");
  a.grad_clip_norm = c.get_double("agent.grad_clip");
  a.epsilon_start = c.get_double("agent.epsilon_start");
  a.epsilon_end = c.get_double("agent.epsilon_end");
  a.epsilon_anneal_steps = c.get_int("agent.epsilon_steps");
  a.gamma = c.get_double("agent.gamma");
  a.total_steps = c.get_int("agent.steps");
  a.replay_capacity = c.get_int("agent.replay");
  a.learning_starts = c.get_int("agent.learning_starts");
  a.validation_interval = c.get_int("agent.validation_interval");
  a.validation_episodes = c.get_int("agent.validation_episodes");
  a.max_episode_steps = c.get_int("agent.max_episode_steps");
  a.freeze_encoder = c.get_bool("agent.freeze_encoder");
  a.seed = static_cast<uint64_t>(c.get_int("seed.model") + policy_index);
  a.train_env_seed = static_cast<uint64_t>(c.get_int("seed.train_env"));
  a.val_env_seed = static_cast<uint64_t>(c.get_int("seed.val_env"));
  return a;
}

std::vector<uint64_t> test_seeds_from(const ExperimentConfig& c) {
  std::vector<uint64_t> out;
  for (int64_t s : c.get_int_list("seed.test_env")) out.push_back(static_cast<uint64_t>(s));
  return out;
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                            EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 init failed");
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() > 0)
      EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<size_t>(is.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i)
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

}  // namespace permakey
