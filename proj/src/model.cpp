#include "stemgan/model.hpp"

#include <cmath>
#include <cstring>

#include "stemgan/error.hpp"

namespace stemgan {

using nn::ConvGeometry;
using nn::LayerPtr;

namespace {

std::size_t scaled(std::size_t base, std::size_t stage, double scale) {
  const double w = static_cast<double>(base << stage) * scale;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(w)));
}

constexpr ConvGeometry kSame3{3, 1, 1};
constexpr ConvGeometry kDown3{3, 2, 1};
constexpr ConvGeometry kUp4{4, 2, 1};
constexpr ConvGeometry kDown4{4, 2, 1};

// Reinterpret N*T x C x h x w as N x T*C x h x w (same memory order).
Tensor fold_time(const Tensor& t, std::size_t frames) {
  return t.reshaped({t.dim(0) / frames, frames * t.dim(1), t.dim(2), t.dim(3)});
}

Tensor unfold_time(const Tensor& t, std::size_t frames) {
  return t.reshaped({t.dim(0) * frames, t.dim(1) / frames, t.dim(2), t.dim(3)});
}

class HashVisitor : public nn::StateVisitor {
 public:
  std::uint64_t h = 1469598103934665603ull;
  void parameter(const std::string& name, nn::Parameter& p) override { mix(name, p.value); }
  void buffer(const std::string& name, Tensor& t) override { mix(name, t); }

 private:
  void mix(const std::string& name, const Tensor& t) {
    h = fnv1a(name.data(), name.size(), h);
    h = fnv1a(t.data(), t.size() * sizeof(double), h);
  }
};

}  // namespace

// ---------------------------------------------------------------- configs

std::vector<std::size_t> GeneratorConfig::stage_widths() const {
  std::vector<std::size_t> w;
  for (std::size_t i = 0; i < encoder_stages; ++i) w.push_back(scaled(base_width, i, width_scale));
  return w;
}

void GeneratorConfig::validate() const {
  if (!(width_scale > 0.0)) throw ValidationError("model.width_scale must be positive");
  if (base_width == 0) throw ValidationError("model.base_width must be positive");
  if (encoder_stages == 0) throw ValidationError("model.encoder_stages must be at least 1");
  if (decoder_stages != encoder_stages) {
    throw ValidationError("model.decoder_stages (" + std::to_string(decoder_stages) +
                          ") must equal model.encoder_stages (" + std::to_string(encoder_stages) + ")");
  }
  if (input_frames == 0) throw ValidationError("at least one conditioning frame is required");
  if (attention_reduction == 0) throw ValidationError("model.attention_reduction must be positive");
  for (std::size_t w : stage_widths()) {
    nn::shifted_channel_count(w, shift_fraction);
    if (w < attention_reduction || w % attention_reduction != 0) {
      throw ValidationError("stage width " + std::to_string(w) + " incompatible with attention reduction " +
                            std::to_string(attention_reduction));
    }
  }
}

std::vector<std::size_t> DiscriminatorConfig::widths() const {
  std::vector<std::size_t> w;
  for (std::size_t i = 0; i < stages; ++i) w.push_back(scaled(base_width, std::min<std::size_t>(i, 3), width_scale));
  return w;
}

void DiscriminatorConfig::validate() const {
  if (!(width_scale > 0.0)) throw ValidationError("model.disc_width_scale must be positive");
  if (base_width == 0 || stages == 0) throw ValidationError("discriminator needs positive width and stages");
}

void ModelConfig::validate() const {
  generator.validate();
  discriminator.validate();
  const std::size_t g_div = std::size_t{1} << generator.encoder_stages;
  if (frame_size == 0 || frame_size % g_div != 0) {
    throw ValidationError("frame size " + std::to_string(frame_size) + " not divisible by 2^encoder_stages");
  }
  const std::size_t d_div = std::size_t{1} << discriminator.stages;
  if (frame_size % d_div != 0 || frame_size / d_div < 4) {
    throw ValidationError("frame size " + std::to_string(frame_size) + " too small for a 4x4 critic grid");
  }
}

Tensor stack_frames(const std::vector<const Frame*>& frames) {
  if (frames.empty()) throw ArgumentError("no conditioning frames");
  const Shape& s = frames.front()->tensor().shape();
  Tensor out({1, frames.size(), s[0], s[1], s[2]});
  const std::size_t chunk = shape_size(s);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t]->tensor().shape() != s) {
      throw ArgumentError("conditioning frames differ in size: " + shape_string(frames[t]->tensor().shape()) +
                          " vs " + shape_string(s));
    }
    std::memcpy(out.data() + t * chunk, frames[t]->tensor().data(), chunk * sizeof(double));
  }
  return out;
}

// ---------------------------------------------------------------- Encoder

Encoder::Encoder(const GeneratorConfig& config, std::mt19937_64& rng)
    : config_(config), widths_(config.stage_widths()) {
  config_.validate();
  auto stem_conv = std::make_unique<nn::Conv2d>(3, widths_[0], kSame3, rng);
  stem_conv->set_input_grad(false);  // nothing upstream of the raw frames
  stem_.add(std::move(stem_conv));
  stem_.add(std::make_unique<nn::BatchNorm2d>(widths_[0]));
  stem_.add(std::make_unique<nn::ReLU>());
  std::size_t in = widths_[0];
  for (std::size_t s = 0; s < config_.encoder_stages; ++s) {
    const std::size_t out = widths_[s];
    nn::Sequential stage;
    stage.add(std::make_unique<nn::Conv2d>(in, out, kDown3, rng));
    stage.add(std::make_unique<nn::BatchNorm2d>(out));
    stage.add(std::make_unique<nn::ReLU>());
    for (std::size_t b = 0; b < config_.blocks_per_stage; ++b) {
      auto body = std::make_unique<nn::Sequential>();
      body->add(std::make_unique<nn::Conv2d>(out, out, kSame3, rng));
      body->add(std::make_unique<nn::BatchNorm2d>(out));
      body->add(std::make_unique<nn::ReLU>());
      body->add(std::make_unique<nn::Conv2d>(out, out, kSame3, rng));
      body->add(std::make_unique<nn::BatchNorm2d>(out));
      stage.add(std::make_unique<nn::Residual>(std::move(body)));
    }
    stages_.push_back(std::move(stage));
    in = out;
  }
}

std::size_t Encoder::map_channels() const { return 2 * config_.input_frames * widths_.back(); }

std::vector<std::size_t> Encoder::skip_channels() const {
  // stem, then every stage but the last, all stacked over time.
  std::vector<std::size_t> c{config_.input_frames * widths_[0]};
  for (std::size_t s = 0; s + 1 < widths_.size(); ++s) c.push_back(config_.input_frames * widths_[s]);
  return c;
}

EncoderOutput Encoder::forward(const Tensor& inputs) {
  if (inputs.rank() != 5 || inputs.dim(2) != 3) {
    throw ArgumentError("encoder expects N x T x 3 x H x W, got " + shape_string(inputs.shape()));
  }
  const std::size_t t = inputs.dim(1);
  if (t != config_.input_frames) {
    throw ArgumentError("encoder configured for " + std::to_string(config_.input_frames) + " frames, got " +
                        std::to_string(t));
  }
  const std::size_t div = std::size_t{1} << config_.encoder_stages;
  if (inputs.dim(3) % div != 0 || inputs.dim(4) % div != 0) {
    throw ArgumentError("frame size " + std::to_string(inputs.dim(3)) + "x" + std::to_string(inputs.dim(4)) +
                        " not divisible by " + std::to_string(div));
  }
  input_shape_ = inputs.shape();
  Tensor x = inputs.reshaped({inputs.dim(0) * t, 3, inputs.dim(3), inputs.dim(4)});

  EncoderOutput out;
  Tensor h = stem_.forward(x);
  out.skips.push_back(fold_time(h, t));
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    h = stages_[s].forward(h);
    if (s + 1 < stages_.size()) out.skips.push_back(fold_time(h, t));
  }
  final_shape_ = {inputs.dim(0), t, h.dim(1), h.dim(2), h.dim(3)};
  const Tensor spatial = fold_time(h, t);
  const Tensor temporal = fold_time(
      nn::temporal_shift(h.reshaped(final_shape_), config_.shift_fraction).reshaped(h.shape()), t);
  out.map = concat_channels({&spatial, &temporal});
  return out;
}

Tensor Encoder::backward(const Tensor& grad_map, const std::vector<Tensor>& grad_skips) {
  const std::size_t t = config_.input_frames;
  const std::size_t half = grad_map.dim(1) / 2;
  auto parts = split_channels(grad_map, {half, half});
  Tensor grad_temporal = nn::temporal_shift_backward(parts[1].reshaped(final_shape_), config_.shift_fraction);
  Tensor g = unfold_time(parts[0], t);
  g += grad_temporal.reshaped(g.shape());
  for (std::size_t s = stages_.size(); s-- > 0;) {
    g = stages_[s].backward(g);
    g += unfold_time(grad_skips[s], t);  // stage s consumed the output recorded as skip s
  }
  g = stem_.backward(g);
  return g.reshaped(input_shape_);
}

void Encoder::visit(const std::string& prefix, nn::StateVisitor& v) {
  stem_.visit(prefix + "stem.", v);
  for (std::size_t s = 0; s < stages_.size(); ++s) stages_[s].visit(prefix + "stage" + std::to_string(s) + ".", v);
}

void Encoder::set_mode(nn::Mode m) {
  stem_.set_mode(m);
  for (auto& s : stages_) s.set_mode(m);
}

// ---------------------------------------------------------------- Decoder

namespace {

std::vector<std::size_t> decoder_outputs(const std::vector<std::size_t>& widths) {
  // Block j upsamples to the resolution of skip (S-1-j) and matches its width.
  const std::size_t stages = widths.size();
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < stages; ++j) {
    const std::size_t level = stages - 1 - j;  // skip index, 0 = full resolution
    out.push_back(level == 0 ? widths[0] : widths[level - 1]);
  }
  return out;
}

}  // namespace

Decoder::Decoder(const GeneratorConfig& config, std::mt19937_64& rng)
    : config_(config),
      reduce_(2 * config.input_frames * config.stage_widths().back(), config.stage_widths().back(),
              ConvGeometry{1, 1, 0}, rng) {
  config_.validate();
  const auto widths = config_.stage_widths();
  const std::size_t t = config_.input_frames;
  skip_channels_.push_back(t * widths[0]);
  for (std::size_t s = 0; s + 1 < widths.size(); ++s) skip_channels_.push_back(t * widths[s]);
  block_out_ = decoder_outputs(widths);
  std::size_t in = widths.back();
  for (std::size_t j = 0; j < config_.decoder_stages; ++j) {
    const std::size_t out = block_out_[j];
    nn::Sequential block;
    block.add(std::make_unique<nn::ConvTranspose2d>(in, out, kUp4, rng));
    block.add(std::make_unique<nn::BatchNorm2d>(out));
    block.add(std::make_unique<nn::ReLU>());
    block.add(std::make_unique<nn::ChannelAttention>(out, config_.attention_reduction, rng));
    blocks_.push_back(std::move(block));
    in = out + skip_channels_[config_.decoder_stages - 1 - j];
  }
  head_.add(std::make_unique<nn::Conv2d>(in, 3, kSame3, rng));
  head_.add(std::make_unique<nn::Tanh>());
}

Tensor Decoder::forward(const Tensor& map, const std::vector<Tensor>& skips) {
  if (skips.size() != config_.decoder_stages) {
    throw ArgumentError("decoder has " + std::to_string(config_.decoder_stages) + " stages but got " +
                        std::to_string(skips.size()) + " skip tensors");
  }
  Tensor h = reduce_.forward(map);
  for (std::size_t j = 0; j < blocks_.size(); ++j) {
    h = blocks_[j].forward(h);
    const Tensor& skip = skips[config_.decoder_stages - 1 - j];
    if (skip.rank() != 4 || skip.dim(1) != skip_channels_[config_.decoder_stages - 1 - j]) {
      throw ArgumentError("skip " + std::to_string(config_.decoder_stages - 1 - j) + " has shape " +
                          shape_string(skip.shape()));
    }
    h = concat_channels({&h, &skip});
  }
  return head_.forward(h);
}

std::pair<Tensor, std::vector<Tensor>> Decoder::backward(const Tensor& grad_out) {
  std::vector<Tensor> grad_skips(config_.decoder_stages);
  Tensor g = head_.backward(grad_out);
  for (std::size_t j = blocks_.size(); j-- > 0;) {
    const std::size_t level = config_.decoder_stages - 1 - j;
    auto parts = split_channels(g, {block_out_[j], skip_channels_[level]});
    grad_skips[level] = std::move(parts[1]);
    g = blocks_[j].backward(parts[0]);
  }
  return {reduce_.backward(g), std::move(grad_skips)};
}

void Decoder::visit(const std::string& prefix, nn::StateVisitor& v) {
  reduce_.visit(prefix + "reduce.", v);
  for (std::size_t j = 0; j < blocks_.size(); ++j) blocks_[j].visit(prefix + "block" + std::to_string(j) + ".", v);
  head_.visit(prefix + "head.", v);
}

void Decoder::set_mode(nn::Mode m) {
  reduce_.set_mode(m);
  for (auto& b : blocks_) b.set_mode(m);
  head_.set_mode(m);
}

// -------------------------------------------------------------- Generator

Generator::Generator(const GeneratorConfig& config, std::uint64_t seed)
    : config_(config), rng_(seed), encoder_(config_, rng_), decoder_(config_, rng_) {}

Tensor Generator::forward(const Tensor& inputs) {
  EncoderOutput e = encoder_.forward(inputs);
  return decoder_.forward(e.map, e.skips);
}

Tensor Generator::backward(const Tensor& grad_out) {
  auto [grad_map, grad_skips] = decoder_.backward(grad_out);
  return encoder_.backward(grad_map, grad_skips);
}

Frame Generator::generate(const std::vector<const Frame*>& inputs) {
  Tensor y = forward(stack_frames(inputs));
  return Frame(y.reshaped({y.dim(1), y.dim(2), y.dim(3)}));
}

void Generator::visit(const std::string& prefix, nn::StateVisitor& v) {
  encoder_.visit(prefix + "encoder.", v);
  decoder_.visit(prefix + "decoder.", v);
}

void Generator::set_mode(nn::Mode m) {
  encoder_.set_mode(m);
  decoder_.set_mode(m);
}

std::vector<nn::Parameter*> Generator::parameters() {
  struct Collect : nn::StateVisitor {
    std::vector<nn::Parameter*> out;
    void parameter(const std::string&, nn::Parameter& p) override { out.push_back(&p); }
    void buffer(const std::string&, Tensor&) override {}
  } c;
  visit("", c);
  return c.out;
}

void Generator::zero_grad() {
  for (nn::Parameter* p : parameters()) p->grad.zero();
}

// ---------------------------------------------------------- Discriminator

Discriminator::Discriminator(const DiscriminatorConfig& config, std::uint64_t seed) : config_(config), rng_(seed) {
  config_.validate();
  const auto widths = config_.widths();
  std::size_t in = 3;
  for (std::size_t i = 0; i < widths.size(); ++i) {
    net_.add(std::make_unique<nn::Conv2d>(in, widths[i], kDown4, rng_));
    if (i > 0) net_.add(std::make_unique<nn::BatchNorm2d>(widths[i]));
    net_.add(std::make_unique<nn::LeakyReLU>(0.2));
    in = widths[i];
  }
  net_.add(std::make_unique<nn::Conv2d>(in, 1, kSame3, rng_));
  net_.add(std::make_unique<nn::Sigmoid>());
}

std::size_t Discriminator::grid_side(std::size_t input_side) const {
  const std::size_t div = std::size_t{1} << config_.stages;
  if (input_side % div != 0 || input_side / div < 4) {
    throw ArgumentError("input side " + std::to_string(input_side) + " smaller than the critic's receptive field (" +
                        std::to_string(4 * div) + ", multiple of " + std::to_string(div) + ")");
  }
  return input_side / div;
}

Tensor Discriminator::forward(const Tensor& frames) {
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw ArgumentError("discriminator expects N x 3 x H x W, got " + shape_string(frames.shape()));
  }
  grid_side(frames.dim(2));
  grid_side(frames.dim(3));
  return net_.forward(frames);
}

Tensor Discriminator::backward(const Tensor& grad_out) { return net_.backward(grad_out); }

PatchScoreGrid Discriminator::discriminate(const Frame& frame) {
  Tensor x = frame.tensor().reshaped({1, frame.channels(), frame.height(), frame.width()});
  Tensor y = forward(x);
  return PatchScoreGrid{y.reshaped({y.dim(2), y.dim(3)})};
}

std::uint64_t state_hash(Generator& g) {
  HashVisitor v;
  g.visit("", v);
  return v.h;
}

std::uint64_t state_hash(Discriminator& d) {
  HashVisitor v;
  d.visit("", v);
  return v.h;
}

}  // namespace stemgan
