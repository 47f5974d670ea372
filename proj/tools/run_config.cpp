#include "run_config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <yaml-cpp/yaml.h>

#include "stemgan/error.hpp"
#include "stemgan/scoring.hpp"

namespace stemgan::cli {

namespace fs = std::filesystem;

namespace {

void flatten(const YAML::Node& node, const std::string& prefix, KeyValues& out, const fs::path& file) {
  switch (node.Type()) {
    case YAML::NodeType::Map:
      for (const auto& item : node) {
        const std::string key = item.first.as<std::string>();
        if (key.empty() || key.find('.') != std::string::npos) {
          throw ConfigError(file.string() + ": bad key '" + key + "'");
        }
        flatten(item.second, prefix.empty() ? key : prefix + "." + key, out, file);
      }
      break;
    case YAML::NodeType::Scalar:
      out[prefix] = node.Scalar();
      break;
    case YAML::NodeType::Null:
      out[prefix] = "";
      break;
    default:
      throw ConfigError(file.string() + ": '" + prefix + "' must be a scalar or a mapping");
  }
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Keys whose section is parsed by the trainer's own key/value readers.
KeyValues section(const KeyValues& kv, const std::string& prefix) {
  KeyValues out;
  for (const auto& [k, v] : kv) {
    if (k.rfind(prefix, 0) == 0) out[k] = v;
  }
  return out;
}

// Turns library parse/validation failures into configuration errors.
template <class F>
auto as_config_error(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace

KeyValues default_run_config() {
  KeyValues kv;
  put(kv, ModelConfig{});
  put(kv, TrainConfig{});
  put(kv, LossWeights{});
  kv["loss.lambda_d"] = format_real(kDefaultLambdaD);

  kv["dataset.preset"] = "custom";
  kv["dataset.root"] = "";
  kv["dataset.manifest"] = "";
  kv["dataset.fps"] = "0";
  kv["dataset.window"] = "5";
  kv["dataset.stride"] = "1";
  kv["dataset.materialize"] = "false";

  kv["output.dir"] = "runs/default";

  kv["score.checkpoint"] = "last";
  kv["score.batch_size"] = "8";
  kv["score.num_thresholds"] = std::to_string(kDefaultThresholds);

  kv["report.plots"] = "true";

  kv["transfer.from"] = "";
  kv["transfer.learning_rate"] = format_real(kTransferLearningRate);

  const LoaderConfig lc;
  kv["io.caching"] = "true";
  kv["io.prefetching"] = "true";
  kv["io.parallelizing"] = "true";
  kv["io.workers"] = "2";
  kv["io.buffer_capacity"] = std::to_string(lc.buffer_capacity);
  kv["io.duration"] = "3";
  kv["io.runs"] = "3";
  kv["io.sweep"] = "cumulative";

  const SynthConfig sc;
  kv["synth.frame_size"] = std::to_string(sc.frame_size);
  kv["synth.object_size"] = std::to_string(sc.object_size);
  kv["synth.shape"] = to_string(sc.shape);
  kv["synth.speed_x"] = std::to_string(sc.speed_x);
  kv["synth.speed_y"] = std::to_string(sc.speed_y);
  kv["synth.train_clips"] = std::to_string(sc.train_clips);
  kv["synth.train_clip_length"] = std::to_string(sc.train_clip_length);
  kv["synth.test_clips"] = std::to_string(sc.test_clips);
  kv["synth.test_clip_length"] = std::to_string(sc.test_clip_length);
  kv["synth.anomaly_start"] = std::to_string(sc.anomaly_start);
  kv["synth.anomaly_length"] = std::to_string(sc.anomaly_length);
  kv["synth.speed_factor"] = std::to_string(sc.speed_factor);
  kv["synth.bounce"] = sc.bounce ? "true" : "false";
  kv["synth.seed"] = std::to_string(sc.seed);
  return kv;
}

KeyValues flatten_yaml_file(const fs::path& file) {
  YAML::Node root;
  try {
    root = YAML::LoadFile(file.string());
  } catch (const YAML::BadFile&) {
    throw ConfigError("cannot read config file '" + file.string() + "'");
  } catch (const YAML::Exception& e) {
    throw ConfigError("config file '" + file.string() + "': " + e.what());
  }
  KeyValues out;
  if (root.IsNull()) return out;
  if (!root.IsMap()) throw ConfigError("config file '" + file.string() + "' must be a mapping of sections");
  flatten(root, "", out, file);
  return out;
}

RunConfig RunConfig::resolve(const std::optional<fs::path>& file,
                             const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig rc;
  rc.values_ = default_run_config();
  std::vector<std::string> unknown;
  auto apply = [&](const std::string& key, const std::string& value) {
    auto it = rc.values_.find(key);
    if (it == rc.values_.end()) {
      unknown.push_back(key);
    } else {
      it->second = value;
    }
  };
  if (file) {
    for (const auto& [k, v] : flatten_yaml_file(*file)) apply(k, v);
  }
  for (const auto& [k, v] : overrides) apply(k, v);
  if (!unknown.empty()) {
    std::string list;
    for (const std::string& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config key" + std::string(unknown.size() > 1 ? "s: " : ": ") + list);
  }
  rc.validate();
  return rc;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::logic_error("run config has no key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const {
  const std::string& s = get(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size() && std::isfinite(v)) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "': expected a real number, got '" + s + "'");
}

std::size_t RunConfig::count(const std::string& key) const {
  const std::string& s = get(key);
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("'" + key + "': expected a non-negative integer, got '" + s + "'");
  }
  try {
    return std::stoull(s);
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "': integer out of range '" + s + "'");
  }
}

bool RunConfig::flag(const std::string& key) const {
  const std::string s = lower(get(key));
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw ConfigError("'" + key + "': expected true or false, got '" + get(key) + "'");
}

ModelConfig RunConfig::model() const {
  return as_config_error([&] {
    ModelConfig m = model_config_from(section(values_, "model."));
    m.validate();
    return m;
  });
}

TrainConfig RunConfig::train() const {
  return as_config_error([&] {
    TrainConfig t = train_config_from(section(values_, "train."));
    t.validate();
    return t;
  });
}

LossWeights RunConfig::loss() const {
  return as_config_error([&] {
    KeyValues kv = section(values_, "loss.");
    kv.erase("loss.lambda_d");
    LossWeights w = loss_weights_from(kv);
    w.validate();
    return w;
  });
}

SynthConfig RunConfig::synth() const {
  auto signed_int = [&](const std::string& key) {
    const std::string& s = get(key);
    try {
      std::size_t used = 0;
      const long v = std::stol(s, &used);
      if (used == s.size()) return static_cast<int>(v);
    } catch (const std::exception&) {
    }
    throw ConfigError("'" + key + "': expected an integer, got '" + s + "'");
  };
  SynthConfig c;
  c.frame_size = count("synth.frame_size");
  c.object_size = count("synth.object_size");
  c.shape = as_config_error([&] { return parse_synth_shape(get("synth.shape")); });
  c.speed_x = signed_int("synth.speed_x");
  c.speed_y = signed_int("synth.speed_y");
  c.train_clips = count("synth.train_clips");
  c.train_clip_length = count("synth.train_clip_length");
  c.test_clips = count("synth.test_clips");
  c.test_clip_length = count("synth.test_clip_length");
  c.anomaly_start = count("synth.anomaly_start");
  c.anomaly_length = count("synth.anomaly_length");
  c.speed_factor = signed_int("synth.speed_factor");
  c.bounce = flag("synth.bounce");
  c.seed = count("synth.seed");
  as_config_error([&] {
    c.validate();
    return 0;
  });
  return c;
}

LoaderConfig RunConfig::loader() const {
  LoaderConfig lc;
  lc.caching = flag("io.caching");
  lc.prefetching = flag("io.prefetching");
  lc.parallelizing = flag("io.parallelizing");
  lc.worker_count = count("io.workers");
  lc.buffer_capacity = count("io.buffer_capacity");
  lc.window_total = count("dataset.window");
  lc.stride = count("dataset.stride");
  lc.frame_size = count("model.frame_size");
  as_config_error([&] {
    lc.validate();
    return 0;
  });
  return lc;
}

fs::path RunConfig::manifest_path() const {
  const std::string& m = get("dataset.manifest");
  return m.empty() ? output_dir() / "manifest.csv" : fs::path(m);
}

fs::path RunConfig::data_root() const {
  const std::string& r = get("dataset.root");
  return r.empty() ? output_dir() / "data" : fs::path(r);
}

fs::path RunConfig::checkpoint_dir() const {
  const std::string& c = get("score.checkpoint");
  if (c == "last") return train_dir() / "checkpoint";
  if (c == "best") return train_dir() / "best";
  return c;
}

std::string RunConfig::hash_hex() const {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(config_hash(values_)));
  return buf;
}

void RunConfig::write_resolved(const fs::path& file) const {
  std::error_code ec;
  if (file.has_parent_path()) fs::create_directories(file.parent_path(), ec);
  std::ofstream os(file);
  if (!os) throw IoError("cannot write '" + file.string() + "'");
  os << to_text(values_);
  if (!os) throw IoError("failed writing '" + file.string() + "'");
}

void RunConfig::validate() const {
  const ModelConfig m = model();
  train();
  loss();
  loader();
  synth();
  const double ld = lambda_d();
  if (ld < 0.0) throw ConfigError("'loss.lambda_d' must be non-negative");
  if (get("output.dir").empty()) throw ConfigError("'output.dir' must not be empty");
  const std::size_t window = count("dataset.window");
  if (window != m.generator.input_frames + 1) {
    throw ConfigError("dataset.window (" + std::to_string(window) + ") must equal model.input_frames + 1 (" +
                      std::to_string(m.generator.input_frames + 1) + ")");
  }
  if (real("dataset.fps") < 0.0) throw ConfigError("'dataset.fps' must be non-negative (0 = preset default)");
  flag("dataset.materialize");
  flag("report.plots");
  if (count("score.batch_size") == 0) throw ConfigError("'score.batch_size' must be positive");
  if (count("score.num_thresholds") < 2) throw ConfigError("'score.num_thresholds' must be at least 2");
  if (!(real("transfer.learning_rate") > 0.0)) throw ConfigError("'transfer.learning_rate' must be positive");
  if (!(real("io.duration") > 0.0)) throw ConfigError("'io.duration' must be positive");
  if (count("io.runs") == 0) throw ConfigError("'io.runs' must be positive");
  const std::string sweep = get("io.sweep");
  if (sweep != "cumulative" && sweep != "all") throw ConfigError("'io.sweep' must be cumulative or all");
}

}  // namespace stemgan::cli
