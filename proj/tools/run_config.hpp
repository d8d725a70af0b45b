#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "imt/training.hpp"
#include "imt/transformer.hpp"

namespace imt::cli {

/// Flat `key = value` settings for one command: file first, then explicit
/// overrides, then IMT_SEED for the seed unless a flag already set it.
class RunConfig {
 public:
  RunConfig(std::set<std::string> path_keys, std::map<std::string, std::string> defaults);

  void load_file(const std::filesystem::path& path);
  /// `key=value` from the command line; these win over the file.
  void override_with(const std::string& assignment);
  void override_with(const std::string& key, const std::string& value);
  void apply_seed_env();

  std::string get(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;
  std::filesystem::path path(const std::string& key) const;

  nn::ModelConfig model_config(std::int32_t vocab_size) const;
  train::TrainingConfig training_config() const;

  /// Every resolved value, sorted by key.
  std::string to_text() const;

  static const std::vector<std::string>& model_keys();
  static const std::vector<std::string>& training_keys();

 private:
  void set(const std::string& key, const std::string& value, bool from_flag);
  bool known(const std::string& key) const;

  std::set<std::string> path_keys_;
  std::map<std::string, std::string> values_;
  std::set<std::string> flagged_;
};

}  // namespace imt::cli
