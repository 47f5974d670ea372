#include "stemgan/nn/temporal_shift.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

#include "stemgan/error.hpp"

namespace stemgan::nn {

Rational Rational::parse(const std::string& text) {
  Rational r;
  try {
    const auto slash = text.find('/');
    std::size_t used = 0;
    if (slash == std::string::npos) {
      r.num = std::stoll(text, &used);
      if (used != text.size()) throw ParseError(text);
      r.den = 1;
    } else {
      const std::string a = text.substr(0, slash), b = text.substr(slash + 1);
      r.num = std::stoll(a, &used);
      if (used != a.size()) throw ParseError(text);
      r.den = std::stoll(b, &used);
      if (used != b.size()) throw ParseError(text);
    }
  } catch (const std::logic_error&) {
    throw ParseError("not a fraction: '" + text + "'");
  }
  if (r.den <= 0) throw ParseError("fraction denominator must be positive: '" + text + "'");
  const std::int64_t g = std::gcd(r.num, r.den);
  if (g > 1) {
    r.num /= g;
    r.den /= g;
  }
  return r;
}

std::size_t shifted_channel_count(std::size_t channels, Rational fraction) {
  if (fraction.den <= 0 || fraction.num < 0 || fraction.num >= fraction.den) {
    throw ArgumentError("shift fraction " + fraction.str() + " outside [0, 1)");
  }
  const auto scaled = static_cast<std::int64_t>(channels) * fraction.num;
  if (scaled % fraction.den != 0) {
    throw ArgumentError("shift fraction " + fraction.str() + " of " + std::to_string(channels) +
                        " channels is not integral");
  }
  return static_cast<std::size_t>(scaled / fraction.den);
}

namespace {

void check_rank5(const Tensor& t) {
  if (t.rank() != 5) throw ArgumentError("temporal shift expects N x T x C x H x W, got " + shape_string(t.shape()));
}

}  // namespace

Tensor temporal_shift(const Tensor& features, Rational fraction) {
  check_rank5(features);
  const std::size_t n = features.dim(0), t = features.dim(1), c = features.dim(2);
  const std::size_t plane = features.dim(3) * features.dim(4);
  const std::size_t moved = shifted_channel_count(c, fraction);
  Tensor out = features;
  if (moved == 0) return out;
  const std::size_t block = moved * plane;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t s = t; s-- > 0;) {
      double* dst = out.data() + (b * t + s) * c * plane;
      if (s == 0) {
        std::fill(dst, dst + block, 0.0);
      } else {
        const double* src = features.data() + (b * t + s - 1) * c * plane;
        std::memcpy(dst, src, block * sizeof(double));
      }
    }
  }
  return out;
}

Tensor temporal_shift_backward(const Tensor& grad_out, Rational fraction) {
  check_rank5(grad_out);
  const std::size_t n = grad_out.dim(0), t = grad_out.dim(1), c = grad_out.dim(2);
  const std::size_t plane = grad_out.dim(3) * grad_out.dim(4);
  const std::size_t moved = shifted_channel_count(c, fraction);
  Tensor grad_in = grad_out;
  if (moved == 0) return grad_in;
  const std::size_t block = moved * plane;
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t s = 0; s < t; ++s) {
      double* dst = grad_in.data() + (b * t + s) * c * plane;
      if (s + 1 == t) {
        std::fill(dst, dst + block, 0.0);
      } else {
        const double* src = grad_out.data() + (b * t + s + 1) * c * plane;
        std::memcpy(dst, src, block * sizeof(double));
      }
    }
  }
  return grad_in;
}

}  // namespace stemgan::nn
