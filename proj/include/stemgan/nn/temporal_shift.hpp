#pragma once

#include <cstdint>
#include <string>

#include "stemgan/nn/layer.hpp"

namespace stemgan::nn {

// Exact fraction; the channel split must come out integral.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
  // Accepts "a/b" or a plain integer.
  static Rational parse(const std::string& text);
  friend bool operator==(const Rational& a, const Rational& b) { return a.num * b.den == b.num * a.den; }
};

// Number of channels moved for a C-channel map; throws ArgumentError when
// fraction * C is not an integer or fraction is outside [0, 1).
std::size_t shifted_channel_count(std::size_t channels, Rational fraction);

// Shift on an N x T x C x H x W map: the first fraction*C channels at time t
// take their values from time t-1 (time 0 receives zeros); the remaining
// channels pass through.
Tensor temporal_shift(const Tensor& features, Rational fraction);
// Adjoint of temporal_shift.
Tensor temporal_shift_backward(const Tensor& grad_out, Rational fraction);

class TemporalShift : public Layer {
 public:
  explicit TemporalShift(Rational fraction) : fraction_(fraction) {}
  Tensor forward(const Tensor& x) override { return temporal_shift(x, fraction_); }
  Tensor backward(const Tensor& g) override { return temporal_shift_backward(g, fraction_); }

 private:
  Rational fraction_;
};

}  // namespace stemgan::nn
