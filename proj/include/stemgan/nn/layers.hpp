#pragma once

#include <cstddef>
#include <random>

#include "stemgan/nn/layer.hpp"

namespace stemgan::nn {

struct ConvGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
};

// Output side length of a convolution; throws if the input is too small.
std::size_t conv_output_size(std::size_t input, const ConvGeometry& g);
// Output side length of a transposed convolution.
std::size_t deconv_output_size(std::size_t input, const ConvGeometry& g);

class Conv2d : public Layer {
 public:
  Conv2d(std::size_t in_channels, std::size_t out_channels, ConvGeometry geometry, std::mt19937_64& rng,
         bool bias = true);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit(const std::string& prefix, StateVisitor& v) override;

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  // First layers can skip the input gradient; backward() then returns zeros.
  void set_input_grad(bool on) { input_grad_ = on; }

 private:
  std::size_t in_, out_;
  ConvGeometry geo_;
  bool has_bias_;
  bool input_grad_ = true;
  Parameter weight_;  // out x in x k x k
  Parameter bias_;    // out
  Tensor input_;
};

// Fractionally strided convolution; weight layout in x out x k x k.
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, ConvGeometry geometry,
                  std::mt19937_64& rng, bool bias = true);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit(const std::string& prefix, StateVisitor& v) override;

  Parameter& weight() { return weight_; }

 private:
  std::size_t in_, out_;
  ConvGeometry geo_;
  bool has_bias_;
  Parameter weight_;
  Parameter bias_;
  Tensor input_;
  std::size_t out_h_ = 0, out_w_ = 0;
};

class BatchNorm2d : public Layer {
 public:
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.1, double eps = 1e-5);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit(const std::string& prefix, StateVisitor& v) override;

  const Tensor& running_mean() const { return running_mean_; }
  const Tensor& running_var() const { return running_var_; }

 private:
  std::size_t channels_;
  double momentum_, eps_;
  Parameter gamma_, beta_;
  Tensor running_mean_, running_var_;
  // cache
  Tensor xhat_;
  std::vector<double> inv_std_;
  bool used_batch_stats_ = true;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor input_;
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(double slope = 0.2) : slope_(slope) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  double slope_;
  Tensor input_;
};

class Tanh : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor output_;
};

class Sigmoid : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor output_;
};

// Squeeze-and-excitation gating: global average pool per channel, a
// C -> C/r -> C bottleneck (leaky ReLU between, sigmoid after), then per-channel
// scaling of the input. Gates lie in (0, 1).
class ChannelAttention : public Layer {
 public:
  ChannelAttention(std::size_t channels, std::size_t reduction, std::mt19937_64& rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit(const std::string& prefix, StateVisitor& v) override;

  // Gates from the most recent forward, N x C.
  const Tensor& gates() const { return gates_; }
  Parameter& squeeze_weight() { return w1_; }
  Parameter& squeeze_bias() { return b1_; }
  Parameter& excite_weight() { return w2_; }
  Parameter& excite_bias() { return b2_; }

 private:
  std::size_t channels_, hidden_;
  Parameter w1_, b1_, w2_, b2_;  // hidden x C, hidden, C x hidden, C
  Tensor input_, pooled_, hidden_pre_, gates_;
};

}  // namespace stemgan::nn
