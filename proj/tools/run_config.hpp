#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stemgan/losses.hpp"
#include "stemgan/model.hpp"
#include "stemgan/pipeline.hpp"
#include "stemgan/synth.hpp"
#include "stemgan/trainer.hpp"

namespace stemgan::cli {

// Every recognised key with its default, as dotted section.key paths.
KeyValues default_run_config();

// Effective configuration of one invocation: defaults, then the config file,
// then command-line overrides. Unknown keys and invalid values throw ConfigError.
class RunConfig {
 public:
  static RunConfig resolve(const std::optional<std::filesystem::path>& file,
                           const std::vector<std::pair<std::string, std::string>>& overrides);

  const KeyValues& values() const { return values_; }
  const std::string& get(const std::string& key) const;
  double real(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  bool flag(const std::string& key) const;

  ModelConfig model() const;
  TrainConfig train() const;
  LossWeights loss() const;
  double lambda_d() const { return real("loss.lambda_d"); }
  SynthConfig synth() const;
  LoaderConfig loader() const;

  std::filesystem::path output_dir() const { return get("output.dir"); }
  std::filesystem::path manifest_path() const;
  std::filesystem::path data_root() const;
  std::filesystem::path train_dir() const { return output_dir() / "train"; }
  std::filesystem::path scores_dir() const { return output_dir() / "scores"; }
  std::filesystem::path report_dir() const { return output_dir() / "report"; }
  std::filesystem::path checkpoint_dir() const;

  std::string hash_hex() const;
  void write_resolved(const std::filesystem::path& file) const;

 private:
  void validate() const;
  KeyValues values_;
};

// YAML mapping flattened to dotted keys (nested maps only; scalars as text).
KeyValues flatten_yaml_file(const std::filesystem::path& file);

}  // namespace stemgan::cli
