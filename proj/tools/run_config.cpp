#include "run_config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "imt/config.hpp"
#include "imt/error.hpp"

namespace imt::cli {

const std::vector<std::string>& RunConfig::model_keys() {
  static const std::vector<std::string> keys{"num_blocks", "num_heads", "model_dim", "ff_dim", "dropout", "max_len"};
  return keys;
}

const std::vector<std::string>& RunConfig::training_keys() {
  static const std::vector<std::string> keys{
      "learning_rate", "beta1", "beta2",      "eps",        "batch_size", "max_steps", "eval_interval",
      "patience",      "min_improvement",     "distance",   "w_xx",       "w_yy",      "w_xy",
      "w_yx",          "w_d",                 "dvq",        "dvq_tables", "dvq_codes", "dvq_beta",
      "seed"};
  return keys;
}

RunConfig::RunConfig(std::set<std::string> path_keys, std::map<std::string, std::string> defaults)
    : path_keys_(std::move(path_keys)) {
  // Model and training defaults come from their own types.
  for (const auto& [k, v] : cfg::parse_key_values(nn::ModelConfig{}.to_text()))
    if (k != "vocab_size") values_[k] = v;
  for (const auto& [k, v] : cfg::parse_key_values(train::TrainingConfig{}.to_text())) values_[k] = v;
  values_["name"] = "run";
  values_["runs_dir"] = "runs";
  for (auto& [k, v] : defaults) values_[k] = v;
}

bool RunConfig::known(const std::string& key) const {
  return values_.count(key) != 0 || path_keys_.count(key) != 0;
}

void RunConfig::set(const std::string& key, const std::string& value, bool from_flag) {
  if (!known(key)) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
  if (!from_flag && flagged_.count(key)) return;
  values_[key] = value;
  if (from_flag) flagged_.insert(key);
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  for (const auto& [k, v] : cfg::parse_key_values(ss.str())) set(k, v, false);
}

void RunConfig::override_with(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw Error(ErrorCode::InvalidConfig, "expected key=value, got '" + assignment + "'");
  override_with(cfg::trim(assignment.substr(0, eq)), cfg::trim(assignment.substr(eq + 1)));
}

void RunConfig::override_with(const std::string& key, const std::string& value) { set(key, value, true); }

void RunConfig::apply_seed_env() {
  if (flagged_.count("seed")) return;
  if (const char* env = std::getenv("IMT_SEED"); env != nullptr && *env != '\0') values_["seed"] = env;
}

std::optional<std::string> RunConfig::find(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end() || it->second.empty()) return std::nullopt;
  return it->second;
}

std::string RunConfig::get(const std::string& key) const {
  auto v = find(key);
  if (!v) throw Error(ErrorCode::InvalidConfig, "missing required key '" + key + "'");
  return *v;
}

std::filesystem::path RunConfig::path(const std::string& key) const { return get(key); }

nn::ModelConfig RunConfig::model_config(std::int32_t vocab_size) const {
  std::string text;
  for (const auto& k : model_keys()) text += k + " = " + get(k) + "\n";
  text += "vocab_size = " + std::to_string(vocab_size) + "\n";
  try {
    return nn::ModelConfig::from_text(text);
  } catch (const std::invalid_argument&) {
    throw Error(ErrorCode::InvalidConfig, "model settings must be numeric");
  }
}

train::TrainingConfig RunConfig::training_config() const {
  std::string text;
  for (const auto& k : training_keys()) text += k + " = " + get(k) + "\n";
  train::TrainingConfig c;
  c.apply_text(text);
  c.validate();
  return c;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace imt::cli
