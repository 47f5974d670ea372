#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "stemgan/tensor.hpp"

namespace stemgan::nn {

// Train: batch statistics, running statistics updated.
// Frozen: batch statistics, running statistics untouched (used when a network
//         produces inputs for the other network's update step).
// Eval: running statistics; deterministic inference.
enum class Mode { Train, Frozen, Eval };

struct Parameter {
  Tensor value;
  Tensor grad;

  Parameter() = default;
  explicit Parameter(Shape shape) : value(shape), grad(std::move(shape)) {}
};

class StateVisitor {
 public:
  virtual ~StateVisitor() = default;
  virtual void parameter(const std::string& name, Parameter& p) = 0;
  virtual void buffer(const std::string& name, Tensor& t) = 0;
};

// A differentiable block. forward() caches whatever backward() needs, so a
// layer instance serves one forward/backward pair at a time. backward()
// accumulates parameter gradients and returns the gradient w.r.t. the input.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void visit(const std::string& /*prefix*/, StateVisitor& /*v*/) {}
  virtual void set_mode(Mode m) { mode_ = m; }
  Mode mode() const { return mode_; }

 protected:
  Mode mode_ = Mode::Train;
};

using LayerPtr = std::unique_ptr<Layer>;

std::vector<Parameter*> collect_parameters(Layer& layer);
void zero_grad(Layer& layer);

// He-normal initialisation for a weight tensor with the given fan-in.
void he_normal(Tensor& w, std::size_t fan_in, std::mt19937_64& rng);

class Sequential : public Layer {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {}

  void add(LayerPtr layer) { layers_.push_back(std::move(layer)); }
  std::size_t size() const { return layers_.size(); }
  Layer& operator[](std::size_t i) { return *layers_[i]; }

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit(const std::string& prefix, StateVisitor& v) override;
  void set_mode(Mode m) override;

 private:
  std::vector<LayerPtr> layers_;
};

// y = x + body(x)
class Residual : public Layer {
 public:
  explicit Residual(LayerPtr body) : body_(std::move(body)) {}

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void visit(const std::string& prefix, StateVisitor& v) override { body_->visit(prefix + "body.", v); }
  void set_mode(Mode m) override {
    Layer::set_mode(m);
    body_->set_mode(m);
  }

 private:
  LayerPtr body_;
};

}  // namespace stemgan::nn
