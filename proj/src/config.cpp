#include "pansharp/config.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace pansharp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("key '" + key + "': cannot parse '" + v + "' as a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true or false, got '" + v + "'");
}

struct Field {
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field field(T RunConfig::*m) {
  Field f;
  f.set = [m](RunConfig& c, const std::string& k, const std::string& v) {
    if constexpr (std::is_same_v<T, bool>) {
      c.*m = parse_bool(k, v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      c.*m = v;
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      c.*m = v;
    } else {
      c.*m = parse_number<T>(k, v);
    }
  };
  f.get = [m](const RunConfig& c) -> std::string {
    if constexpr (std::is_same_v<T, bool>) {
      return c.*m ? "true" : "false";
    } else if constexpr (std::is_same_v<T, std::string>) {
      return c.*m;
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      return (c.*m).string();
    } else if constexpr (std::is_floating_point_v<T>) {
      return fmt(c.*m);
    } else {
      return std::to_string(c.*m);
    }
  };
  return f;
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table{
      {"profile", field(&RunConfig::profile)},
      {"train_data", field(&RunConfig::train_data)},
      {"test_data", field(&RunConfig::test_data)},
      {"ratio", field(&RunConfig::ratio)},
      {"bands", field(&RunConfig::bands)},
      {"stages", field(&RunConfig::stages)},
      {"features", field(&RunConfig::features)},
      {"encoder_blocks", field(&RunConfig::encoder_blocks)},
      {"share_stage_weights", field(&RunConfig::share_stage_weights)},
      {"cmae_decoder_blocks", field(&RunConfig::cmae_decoder_blocks)},
      {"cmae_patch", field(&RunConfig::cmae_patch)},
      {"cmae_mask_ratio", field(&RunConfig::cmae_mask_ratio)},
      {"cmae_steps", field(&RunConfig::cmae_steps)},
      {"cmae_lr", field(&RunConfig::cmae_lr)},
      {"tmae_patch", field(&RunConfig::tmae_patch)},
      {"tmae_band_group", field(&RunConfig::tmae_band_group)},
      {"tmae_dim", field(&RunConfig::tmae_dim)},
      {"tmae_encoder_layers", field(&RunConfig::tmae_encoder_layers)},
      {"tmae_decoder_layers", field(&RunConfig::tmae_decoder_layers)},
      {"tmae_heads", field(&RunConfig::tmae_heads)},
      {"tmae_mask_ratio", field(&RunConfig::tmae_mask_ratio)},
      {"tmae_steps", field(&RunConfig::tmae_steps)},
      {"tmae_lr", field(&RunConfig::tmae_lr)},
      {"optimizer", field(&RunConfig::optimizer)},
      {"lr", field(&RunConfig::lr)},
      {"batch", field(&RunConfig::batch)},
      {"epochs", field(&RunConfig::epochs)},
      {"max_steps", field(&RunConfig::max_steps)},
      {"decay_epoch", field(&RunConfig::decay_epoch)},
      {"decay_factor", field(&RunConfig::decay_factor)},
      {"lambda", field(&RunConfig::lambda)},
      {"encoder_lr_mult", field(&RunConfig::encoder_lr_mult)},
      {"seed", field(&RunConfig::seed)},
      {"disable_mae_prior", field(&RunConfig::disable_mae_prior)},
      {"disable_mae_loss", field(&RunConfig::disable_mae_loss)},
  };
  return table;
}

std::uint64_t derive_seed(std::uint64_t seed, int tag) { return mask_seed(seed, tag, 0); }

}  // namespace

RunConfig RunConfig::preset(const std::string& profile) {
  RunConfig c;
  if (profile == "paper") return c;
  if (profile != "desk") throw ConfigError("unknown profile '" + profile + "', expected paper or desk");
  c.profile = "desk";
  c.features = 16;
  c.cmae_steps = 200;
  c.tmae_steps = 200;
  c.epochs = 32;
  c.max_steps = 500;
  c.decay_epoch = 25;
  return c;
}

RunConfig RunConfig::parse(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (!fields().count(key)) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("line " + std::to_string(lineno) + ": repeated key '" + key + "'");
    entries.emplace_back(key, value);
  }
  std::string profile = "paper";
  for (const auto& [k, v] : entries)
    if (k == "profile") profile = v;
  RunConfig c = preset(profile);
  for (const auto& [k, v] : entries)
    if (k != "profile") c.set(k, v);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown key '" + key + "'");
  if (key == "profile") throw ConfigError("profile can only be chosen when parsing");
  it->second.set(*this, key, value);
}

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(ratio >= 2, "ratio must be >= 2");
  need(bands >= 2, "bands must be >= 2");
  need(stages >= 0 && stages <= 6, "stages must lie in 0..6");
  need(features >= 1 && encoder_blocks >= 1 && cmae_decoder_blocks >= 1, "model widths and depths must be positive");
  need(cmae_patch >= 1 && tmae_patch >= 1, "MAE patch sizes must be positive");
  need(cmae_mask_ratio > 0 && cmae_mask_ratio <= 1, "cmae_mask_ratio must lie in (0, 1]");
  need(tmae_mask_ratio > 0 && tmae_mask_ratio <= 1, "tmae_mask_ratio must lie in (0, 1]");
  need(cmae_steps >= 0 && tmae_steps >= 0, "pretraining step counts must be >= 0");
  need(cmae_lr > 0 && tmae_lr > 0 && lr > 0, "learning rates must be positive");
  need(optimizer == "adam", "only the adam optimizer is supported, got '" + optimizer + "'");
  need(batch >= 1, "batch must be >= 1");
  need(epochs >= 1, "epochs must be >= 1");
  need(max_steps >= 0, "max_steps must be >= 0");
  need(decay_epoch >= 1 && decay_factor > 0 && decay_factor <= 1, "decay schedule must have epoch >= 1, factor in (0, 1]");
  need(lambda >= 0, "lambda must be >= 0");
  need(encoder_lr_mult >= 0, "encoder_lr_mult must be >= 0");
  try {
    token_mae().validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + "=" + f.get(*this) + "\n";
  return out;
}

std::string RunConfig::hash() const {
  std::string text;
  for (const auto& [k, f] : fields())
    if (k != "train_data" && k != "test_data") text += k + "=" + f.get(*this) + "\n";
  return sha256_hex(text);
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> out = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return out;
}

UnfoldingConfig RunConfig::unfolding() const {
  UnfoldingConfig u;
  u.channels = bands;
  u.ratio = ratio;
  u.stages = stages;
  u.features = features;
  u.encoder_blocks = encoder_blocks;
  u.share_stage_weights = share_stage_weights;
  u.seed = derive_seed(seed, 3);
  return u;
}

ConvMAEConfig RunConfig::conv_mae() const {
  ConvMAEConfig m;
  m.channels = bands;
  m.features = features;
  m.encoder_blocks = encoder_blocks;
  m.decoder_blocks = cmae_decoder_blocks;
  m.patch = cmae_patch;
  m.mask_ratio = cmae_mask_ratio;
  m.seed = derive_seed(seed, 1);
  return m;
}

TokenMAEConfig RunConfig::token_mae() const {
  TokenMAEConfig t;
  t.channels = bands;
  t.patch = tmae_patch;
  t.band_group = tmae_band_group;
  t.dim = tmae_dim;
  t.encoder_layers = tmae_encoder_layers;
  t.decoder_layers = tmae_decoder_layers;
  t.heads = tmae_heads;
  t.mask_ratio = tmae_mask_ratio;
  t.seed = derive_seed(seed, 2);
  return t;
}

StepSchedule RunConfig::schedule() const {
  StepSchedule s;
  s.base_lr = lr;
  s.milestones = {decay_epoch};
  s.factor = decay_factor;
  return s;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw IoError("SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return sha256_hex(ss.str());
}

}  // namespace pansharp
