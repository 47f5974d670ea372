#include "stemgan/nn/layer.hpp"

#include <cmath>

namespace stemgan::nn {

namespace {

class ParameterCollector : public StateVisitor {
 public:
  std::vector<Parameter*> params;
  void parameter(const std::string&, Parameter& p) override { params.push_back(&p); }
  void buffer(const std::string&, Tensor&) override {}
};

}  // namespace

std::vector<Parameter*> collect_parameters(Layer& layer) {
  ParameterCollector c;
  layer.visit("", c);
  return c.params;
}

void zero_grad(Layer& layer) {
  for (Parameter* p : collect_parameters(layer)) p->grad.zero();
}

void he_normal(Tensor& w, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (double& v : w.values()) v = dist(rng);
}

Tensor Sequential::forward(const Tensor& x) {
  Tensor h = x;
  for (auto& layer : layers_) h = layer->forward(h);
  return h;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::visit(const std::string& prefix, StateVisitor& v) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->visit(prefix + std::to_string(i) + ".", v);
}

void Sequential::set_mode(Mode m) {
  Layer::set_mode(m);
  for (auto& layer : layers_) layer->set_mode(m);
}

Tensor Residual::forward(const Tensor& x) {
  Tensor y = body_->forward(x);
  y += x;
  return y;
}

Tensor Residual::backward(const Tensor& grad_out) {
  Tensor g = body_->backward(grad_out);
  g += grad_out;
  return g;
}

}  // namespace stemgan::nn
