#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stemgan/frame.hpp"
#include "stemgan/nn/layers.hpp"
#include "stemgan/nn/temporal_shift.hpp"

namespace stemgan {

struct GeneratorConfig {
  // Stage i of the backbone has round(base_width * 2^i * width_scale) channels.
  double width_scale = 1.0;
  std::size_t base_width = 32;
  std::size_t encoder_stages = 4;
  std::size_t decoder_stages = 4;
  std::size_t blocks_per_stage = 1;
  nn::Rational shift_fraction{1, 8};
  std::size_t attention_reduction = 16;
  // Conditioning frames per window.
  std::size_t input_frames = 4;

  std::vector<std::size_t> stage_widths() const;
  void validate() const;
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct DiscriminatorConfig {
  double width_scale = 1.0;
  std::size_t base_width = 64;
  // Stride-2 convolutions; the patch grid is (input / 2^stages) per side.
  std::size_t stages = 4;

  std::vector<std::size_t> widths() const;
  void validate() const;
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

struct ModelConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  std::size_t frame_size = 160;

  void validate() const;
  // True when weights from one config load into the other.
  bool architecture_compatible(const ModelConfig& other) const {
    return generator == other.generator && discriminator == other.discriminator;
  }
};

// Critic output for one frame: an N_p x N_p grid of sigmoid scores.
struct PatchScoreGrid {
  Tensor scores;  // N_p x N_p
  std::size_t side() const { return scores.dim(0); }
  double mean() const { return scores.mean(); }
};

struct EncoderOutput {
  // N x 2TC x h x w: channels [0, TC) are the spatial stream (per-frame
  // features stacked along channels), [TC, 2TC) the temporally shifted stream.
  Tensor map;
  // One per decoder stage, finest first: skips[0] is full resolution.
  std::vector<Tensor> skips;
};

// Stack conditioning frames into a 1 x T x C x H x W tensor.
Tensor stack_frames(const std::vector<const Frame*>& frames);

// Two-stream encoder: shared wide residual backbone per frame, then a spatial
// stream (frames stacked on channels) and a temporal-shift stream.
class Encoder {
 public:
  Encoder(const GeneratorConfig& config, std::mt19937_64& rng);

  EncoderOutput forward(const Tensor& inputs);
  // Returns a zero tensor shaped like the inputs: the stem does not propagate
  // gradients back to raw frames.
  Tensor backward(const Tensor& grad_map, const std::vector<Tensor>& grad_skips);
  void visit(const std::string& prefix, nn::StateVisitor& v);
  void set_mode(nn::Mode m);

  std::size_t map_channels() const;
  std::vector<std::size_t> skip_channels() const;

 private:
  GeneratorConfig config_;
  std::vector<std::size_t> widths_;
  nn::Sequential stem_;
  std::vector<nn::Sequential> stages_;
  Shape input_shape_;
  Shape final_shape_;  // N x T x C x h x w of the last stage
};

// 1x1 reduction, then per stage [deconv -> batch norm -> ReLU -> channel
// attention] concatenated with the paired skip, then a 3x3 head with tanh.
class Decoder {
 public:
  Decoder(const GeneratorConfig& config, std::mt19937_64& rng);

  Tensor forward(const Tensor& map, const std::vector<Tensor>& skips);
  // Gradients w.r.t. (map, skips).
  std::pair<Tensor, std::vector<Tensor>> backward(const Tensor& grad_out);
  void visit(const std::string& prefix, nn::StateVisitor& v);
  void set_mode(nn::Mode m);

 private:
  GeneratorConfig config_;
  std::vector<std::size_t> skip_channels_;
  std::vector<std::size_t> block_out_;
  nn::Conv2d reduce_;
  std::vector<nn::Sequential> blocks_;
  nn::Sequential head_;
};

class Generator {
 public:
  Generator(const GeneratorConfig& config, std::uint64_t seed);

  // inputs: N x T x 3 x H x W in [-1, 1]; returns N x 3 x H x W in [-1, 1].
  Tensor forward(const Tensor& inputs);
  Tensor backward(const Tensor& grad_out);

  EncoderOutput encode(const Tensor& inputs) { return encoder_.forward(inputs); }
  Tensor decode(const Tensor& map, const std::vector<Tensor>& skips) { return decoder_.forward(map, skips); }

  // Inference on a single window (uses the current mode).
  Frame generate(const std::vector<const Frame*>& inputs);

  void visit(const std::string& prefix, nn::StateVisitor& v);
  void set_mode(nn::Mode m);
  std::vector<nn::Parameter*> parameters();
  void zero_grad();
  const GeneratorConfig& config() const { return config_; }

 private:
  GeneratorConfig config_;
  std::mt19937_64 rng_;
  Encoder encoder_;
  Decoder decoder_;
};

// Patch critic: stride-2 [conv -> batch norm -> leaky ReLU] stack (no norm on
// the first layer), a 3x3 score conv and a sigmoid.
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& config, std::uint64_t seed);

  // frames: N x 3 x H x W; returns N x 1 x g x g scores in (0, 1).
  Tensor forward(const Tensor& frames);
  Tensor backward(const Tensor& grad_out);

  PatchScoreGrid discriminate(const Frame& frame);
  std::size_t grid_side(std::size_t input_side) const;

  void visit(const std::string& prefix, nn::StateVisitor& v) { net_.visit(prefix, v); }
  void set_mode(nn::Mode m) { net_.set_mode(m); }
  std::vector<nn::Parameter*> parameters() { return nn::collect_parameters(net_); }
  void zero_grad() { nn::zero_grad(net_); }
  const DiscriminatorConfig& config() const { return config_; }

 private:
  DiscriminatorConfig config_;
  std::mt19937_64 rng_;
  nn::Sequential net_;
};

// Fingerprint of every parameter and running statistic.
std::uint64_t state_hash(Generator& g);
std::uint64_t state_hash(Discriminator& d);

}  // namespace stemgan
