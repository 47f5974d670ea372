#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stemgan/data_io.hpp"
#include "stemgan/losses.hpp"
#include "stemgan/model.hpp"
#include "stemgan/pipeline.hpp"

namespace stemgan {

struct TrainConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t d_steps_per_g = 5;
  std::size_t max_epochs = 60;
  double mse_stop = 0.001;
  double d_score_target = 0.5;
  double d_score_tolerance = 0.05;
  // Generator steps in the moving average of the critic's fake score.
  std::size_t d_score_window = 100;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline constexpr double kTransferLearningRate = 1e-4;

// Sorted key=value pairs; the text form of configs in checkpoints and
// resolved_config.txt. Reals are written with 17 significant digits.
using KeyValues = std::map<std::string, std::string>;

std::string format_real(double v);
void put(KeyValues& kv, const ModelConfig& m);
void put(KeyValues& kv, const TrainConfig& t);
void put(KeyValues& kv, const LossWeights& w);
ModelConfig model_config_from(const KeyValues& kv);
TrainConfig train_config_from(const KeyValues& kv);
LossWeights loss_weights_from(const KeyValues& kv);
std::string to_text(const KeyValues& kv);
KeyValues parse_key_values(const std::string& text);
std::uint64_t config_hash(const KeyValues& kv);

// Adaptive-moment optimiser over a fixed, named parameter list. No weight decay.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, nn::Parameter*>> params, double lr, double beta1, double beta2,
       double epsilon);

  void step();
  void reset();
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  std::size_t steps() const { return t_; }

  // Moment tensors by parameter name, for checkpointing.
  void visit(nn::StateVisitor& v);
  void set_steps(std::size_t t) { t_ = t; }

 private:
  std::vector<std::pair<std::string, nn::Parameter*>> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double g_loss = 0.0;
  double d_loss = 0.0;
  double d_score_fake = 0.0;  // mean critic score on generated frames
  double train_mse = 0.0;     // mean per-pixel squared prediction error
  std::size_t d_steps = 0;
  std::size_t g_steps = 0;
};

enum class StopReason { MaxEpochs, Converged, Callback };
std::string to_string(StopReason r);

struct FitResult {
  std::vector<EpochMetrics> history;
  StopReason reason = StopReason::MaxEpochs;
  std::size_t total_d_steps = 0;
  std::size_t total_g_steps = 0;
};

// Return true to stop after this epoch.
using EpochCallback = std::function<bool(const EpochMetrics&)>;

struct FitOptions {
  LoaderConfig loader;
  // When set: metrics.csv, train_steps.csv, checkpoint/ (last epoch) and
  // best/ (lowest train_mse) are written here.
  std::optional<std::filesystem::path> output_dir;
  EpochCallback on_epoch;
};

// Generator + critic + their optimisers: one training run.
class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig train, LossWeights loss);
  Trainer(Trainer&&) noexcept;
  Trainer& operator=(Trainer&&) noexcept;
  ~Trainer();

  // One critic update on the batch; the generator runs frozen to produce the
  // fakes and its weights are asserted unchanged.
  double train_step_discriminator(const std::vector<FrameWindow>& batch);
  // One generator update; the critic runs frozen and is asserted unchanged.
  // A non-finite loss or gradient aborts either step with NumericalError and
  // leaves both networks as they were.
  double train_step_generator(const std::vector<FrameWindow>& batch);

  FitResult fit(const DatasetManifest& manifest, const FitOptions& options = {});
  FitResult fit(const std::vector<FrameWindow>& windows, const FitOptions& options = {});

  // generator.bin, discriminator.bin, meta.txt
  void save(const std::filesystem::path& dir) const;
  static Trainer load(const std::filesystem::path& dir);

  // Warm start: copy both networks from `base`, fresh optimiser state, learning
  // rate 1e-4 unless overridden. Throws ValidationError when architectures differ.
  static Trainer transfer_init(const Trainer& base, const ModelConfig& model, TrainConfig train, LossWeights loss,
                               std::optional<double> learning_rate = std::nullopt);

  Generator& generator();
  Discriminator& discriminator();
  const ModelConfig& model_config() const;
  const TrainConfig& train_config() const;
  const LossWeights& loss_weights() const;
  std::size_t epoch() const;
  double learning_rate() const;
  const std::map<std::string, double>& metrics() const;

 private:
  struct State;
  explicit Trainer(std::unique_ptr<State> s);
  std::unique_ptr<State> s_;
};

// Batch tensors from windows: inputs N x T x 3 x H x W, targets N x 3 x H x W.
std::pair<Tensor, Tensor> batch_tensors(const std::vector<FrameWindow>& batch);

void write_metrics_csv(const std::vector<EpochMetrics>& history, const std::filesystem::path& file);

}  // namespace stemgan
