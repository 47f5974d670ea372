#include "stemgan/nn/layers.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>

#include "stemgan/error.hpp"

namespace stemgan::nn {

namespace {

struct Plane {
  std::size_t channels, height, width;
};

// Output columns [lo, hi) whose input column ow*stride + kw - padding lies
// inside [0, w).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t w, const ConvGeometry& g, std::size_t kw) {
  const auto pad = static_cast<std::ptrdiff_t>(g.padding), off = static_cast<std::ptrdiff_t>(kw) - pad;
  const auto stride = static_cast<std::ptrdiff_t>(g.stride);
  std::ptrdiff_t lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  std::ptrdiff_t hi = static_cast<std::ptrdiff_t>(w) - off <= 0 ? 0 : (static_cast<std::ptrdiff_t>(w) - off + stride - 1) / stride;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Unfold one C x H x W image into (C*k*k) x (Ho*Wo) columns.
void im2col(const double* image, const Plane& in, const ConvGeometry& g, std::size_t out_h, std::size_t out_w,
            double* col) {
  const auto k = g.kernel;
  const auto h = static_cast<std::ptrdiff_t>(in.height);
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double* src = image + c * in.height * in.width;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        double* row = col + ((c * k + kh) * k + kw) * out_h * out_w;
        const auto [lo, hi] = valid_range(out_w, in.width, g, kw);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(g.padding);
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.padding);
          double* dst = row + oh * out_w;
          if (ih < 0 || ih >= h) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          std::fill(dst, dst + lo, 0.0);
          const double* line = src + ih * static_cast<std::ptrdiff_t>(in.width) + shift;
          if (g.stride == 1) {
            std::copy(line + lo, line + hi, dst + lo);
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow) dst[ow] = line[ow * g.stride];
          }
          std::fill(dst + hi, dst + out_w, 0.0);
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the (zeroed) image.
void col2im(const double* col, const Plane& in, const ConvGeometry& g, std::size_t out_h, std::size_t out_w,
            double* image) {
  const auto k = g.kernel;
  const auto h = static_cast<std::ptrdiff_t>(in.height);
  for (std::size_t c = 0; c < in.channels; ++c) {
    double* dst = image + c * in.height * in.width;
    for (std::size_t kh = 0; kh < k; ++kh) {
      for (std::size_t kw = 0; kw < k; ++kw) {
        const double* row = col + ((c * k + kh) * k + kw) * out_h * out_w;
        const auto [lo, hi] = valid_range(out_w, in.width, g, kw);
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(g.padding);
        for (std::size_t oh = 0; oh < out_h; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.padding);
          if (ih < 0 || ih >= h) continue;
          const double* src = row + oh * out_w;
          double* line = dst + ih * static_cast<std::ptrdiff_t>(in.width) + shift;
          if (g.stride == 1) {
            for (std::size_t ow = lo; ow < hi; ++ow) line[ow] += src[ow];
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow) line[ow * g.stride] += src[ow];
          }
        }
      }
    }
  }
}

void check_rank4(const Tensor& x, std::size_t channels, const char* who) {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw ArgumentError(std::string(who) + ": expected N x " + std::to_string(channels) + " x H x W, got " +
                        shape_string(x.shape()));
  }
}

}  // namespace

std::size_t conv_output_size(std::size_t input, const ConvGeometry& g) {
  if (g.stride == 0 || input + 2 * g.padding < g.kernel) {
    throw ArgumentError("convolution input of size " + std::to_string(input) + " smaller than kernel " +
                        std::to_string(g.kernel));
  }
  return (input + 2 * g.padding - g.kernel) / g.stride + 1;
}

std::size_t deconv_output_size(std::size_t input, const ConvGeometry& g) {
  if (input == 0 || (input - 1) * g.stride + g.kernel < 2 * g.padding + 1) {
    throw ArgumentError("transposed convolution input too small");
  }
  return (input - 1) * g.stride + g.kernel - 2 * g.padding;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, ConvGeometry geometry, std::mt19937_64& rng,
               bool bias)
    : in_(in_channels),
      out_(out_channels),
      geo_(geometry),
      has_bias_(bias),
      weight_({out_channels, in_channels, geometry.kernel, geometry.kernel}),
      bias_({out_channels}) {
  he_normal(weight_.value, in_ * geo_.kernel * geo_.kernel, rng);
}

Tensor Conv2d::forward(const Tensor& x) {
  check_rank4(x, in_, "Conv2d");
  input_ = x;
  const std::size_t n = x.dim(0), oh = conv_output_size(x.dim(2), geo_), ow = conv_output_size(x.dim(3), geo_);
  const std::size_t rows = in_ * geo_.kernel * geo_.kernel, pos = oh * ow;
  Tensor y({n, out_, oh, ow});
  std::vector<double> col(rows * pos);
  const Plane plane{in_, x.dim(2), x.dim(3)};
  for (std::size_t b = 0; b < n; ++b) {
    im2col(x.data() + b * in_ * x.dim(2) * x.dim(3), plane, geo_, oh, ow, col.data());
    double* out = y.data() + b * out_ * pos;
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(out_), static_cast<int>(pos),
                static_cast<int>(rows), 1.0, weight_.value.data(), static_cast<int>(rows), col.data(),
                static_cast<int>(pos), 0.0, out, static_cast<int>(pos));
    if (has_bias_) {
      for (std::size_t o = 0; o < out_; ++o) {
        const double bo = bias_.value[o];
        for (std::size_t p = 0; p < pos; ++p) out[o * pos + p] += bo;
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const std::size_t n = x.dim(0), oh = grad_out.dim(2), ow = grad_out.dim(3);
  const std::size_t rows = in_ * geo_.kernel * geo_.kernel, pos = oh * ow;
  const std::size_t image = in_ * x.dim(2) * x.dim(3);
  Tensor dx(x.shape());
  std::vector<double> col(rows * pos), dcol(input_grad_ ? rows * pos : 0);
  const Plane plane{in_, x.dim(2), x.dim(3)};
  for (std::size_t b = 0; b < n; ++b) {
    const double* dy = grad_out.data() + b * out_ * pos;
    im2col(x.data() + b * image, plane, geo_, oh, ow, col.data());
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(out_), static_cast<int>(rows),
                static_cast<int>(pos), 1.0, dy, static_cast<int>(pos), col.data(), static_cast<int>(pos), 1.0,
                weight_.grad.data(), static_cast<int>(rows));
    if (input_grad_) {
      cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(rows), static_cast<int>(pos),
                  static_cast<int>(out_), 1.0, weight_.value.data(), static_cast<int>(rows), dy,
                  static_cast<int>(pos), 0.0, dcol.data(), static_cast<int>(pos));
      col2im(dcol.data(), plane, geo_, oh, ow, dx.data() + b * image);
    }
    if (has_bias_) {
      for (std::size_t o = 0; o < out_; ++o) {
        double s = 0.0;
        for (std::size_t p = 0; p < pos; ++p) s += dy[o * pos + p];
        bias_.grad[o] += s;
      }
    }
  }
  return dx;
}

void Conv2d::visit(const std::string& prefix, StateVisitor& v) {
  v.parameter(prefix + "weight", weight_);
  if (has_bias_) v.parameter(prefix + "bias", bias_);
}

// ------------------------------------------------------- ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(std::size_t in_channels, std::size_t out_channels, ConvGeometry geometry,
                                 std::mt19937_64& rng, bool bias)
    : in_(in_channels),
      out_(out_channels),
      geo_(geometry),
      has_bias_(bias),
      weight_({in_channels, out_channels, geometry.kernel, geometry.kernel}),
      bias_({out_channels}) {
  // Each output pixel receives roughly in * k^2 / stride^2 contributions.
  const std::size_t fan_in = std::max<std::size_t>(1, in_ * geo_.kernel * geo_.kernel / (geo_.stride * geo_.stride));
  he_normal(weight_.value, fan_in, rng);
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
  check_rank4(x, in_, "ConvTranspose2d");
  input_ = x;
  const std::size_t n = x.dim(0), ih = x.dim(2), iw = x.dim(3);
  out_h_ = deconv_output_size(ih, geo_);
  out_w_ = deconv_output_size(iw, geo_);
  if (conv_output_size(out_h_, geo_) != ih || conv_output_size(out_w_, geo_) != iw) {
    throw ArgumentError("ConvTranspose2d: geometry does not invert");
  }
  const std::size_t rows = out_ * geo_.kernel * geo_.kernel, pos = ih * iw;
  Tensor y({n, out_, out_h_, out_w_});
  std::vector<double> col(rows * pos);
  const Plane plane{out_, out_h_, out_w_};
  for (std::size_t b = 0; b < n; ++b) {
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(rows), static_cast<int>(pos),
                static_cast<int>(in_), 1.0, weight_.value.data(), static_cast<int>(rows),
                x.data() + b * in_ * pos, static_cast<int>(pos), 0.0, col.data(), static_cast<int>(pos));
    double* out = y.data() + b * out_ * out_h_ * out_w_;
    col2im(col.data(), plane, geo_, ih, iw, out);
    if (has_bias_) {
      const std::size_t area = out_h_ * out_w_;
      for (std::size_t o = 0; o < out_; ++o) {
        const double bo = bias_.value[o];
        for (std::size_t p = 0; p < area; ++p) out[o * area + p] += bo;
      }
    }
  }
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const std::size_t n = x.dim(0), ih = x.dim(2), iw = x.dim(3);
  const std::size_t rows = out_ * geo_.kernel * geo_.kernel, pos = ih * iw, area = out_h_ * out_w_;
  Tensor dx(x.shape());
  std::vector<double> dcol(rows * pos);
  const Plane plane{out_, out_h_, out_w_};
  for (std::size_t b = 0; b < n; ++b) {
    const double* dy = grad_out.data() + b * out_ * area;
    im2col(dy, plane, geo_, ih, iw, dcol.data());
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(in_), static_cast<int>(pos),
                static_cast<int>(rows), 1.0, weight_.value.data(), static_cast<int>(rows), dcol.data(),
                static_cast<int>(pos), 0.0, dx.data() + b * in_ * pos, static_cast<int>(pos));
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(in_), static_cast<int>(rows),
                static_cast<int>(pos), 1.0, x.data() + b * in_ * pos, static_cast<int>(pos), dcol.data(),
                static_cast<int>(pos), 1.0, weight_.grad.data(), static_cast<int>(rows));
    if (has_bias_) {
      for (std::size_t o = 0; o < out_; ++o) {
        double s = 0.0;
        for (std::size_t p = 0; p < area; ++p) s += dy[o * area + p];
        bias_.grad[o] += s;
      }
    }
  }
  return dx;
}

void ConvTranspose2d::visit(const std::string& prefix, StateVisitor& v) {
  v.parameter(prefix + "weight", weight_);
  if (has_bias_) v.parameter(prefix + "bias", bias_);
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(std::size_t channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_({channels}),
      beta_({channels}),
      running_mean_({channels}, 0.0),
      running_var_({channels}, 1.0) {
  gamma_.value.fill(1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x) {
  check_rank4(x, channels_, "BatchNorm2d");
  const std::size_t n = x.dim(0), area = x.dim(2) * x.dim(3), count = n * area;
  Tensor y(x.shape());
  xhat_ = Tensor(x.shape());
  inv_std_.assign(channels_, 0.0);
  used_batch_stats_ = mode_ != Mode::Eval;
  for (std::size_t c = 0; c < channels_; ++c) {
    double mean = 0.0, var = 0.0;
    if (used_batch_stats_) {
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * channels_ + c) * area;
        for (std::size_t i = 0; i < area; ++i) mean += p[i];
      }
      mean /= static_cast<double>(count);
      for (std::size_t b = 0; b < n; ++b) {
        const double* p = x.data() + (b * channels_ + c) * area;
        for (std::size_t i = 0; i < area; ++i) var += (p[i] - mean) * (p[i] - mean);
      }
      var /= static_cast<double>(count);
      if (mode_ == Mode::Train) {
        const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
        running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean;
        running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * unbiased;
      }
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    const double g = gamma_.value[c], bt = beta_.value[c];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * channels_ + c) * area;
      for (std::size_t i = 0; i < area; ++i) {
        const double xh = (x[off + i] - mean) * inv;
        xhat_[off + i] = xh;
        y[off + i] = g * xh + bt;
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
  const std::size_t n = grad_out.dim(0), area = grad_out.dim(2) * grad_out.dim(3);
  const double count = static_cast<double>(n * area);
  Tensor dx(grad_out.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * channels_ + c) * area;
      for (std::size_t i = 0; i < area; ++i) {
        sum_dy += grad_out[off + i];
        sum_dy_xhat += grad_out[off + i] * xhat_[off + i];
      }
    }
    gamma_.grad[c] += sum_dy_xhat;
    beta_.grad[c] += sum_dy;
    const double g = gamma_.value[c], inv = inv_std_[c];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * channels_ + c) * area;
      for (std::size_t i = 0; i < area; ++i) {
        if (used_batch_stats_) {
          dx[off + i] = g * inv / count * (count * grad_out[off + i] - sum_dy - xhat_[off + i] * sum_dy_xhat);
        } else {
          dx[off + i] = g * inv * grad_out[off + i];
        }
      }
    }
  }
  return dx;
}

void BatchNorm2d::visit(const std::string& prefix, StateVisitor& v) {
  v.parameter(prefix + "gamma", gamma_);
  v.parameter(prefix + "beta", beta_);
  v.buffer(prefix + "running_mean", running_mean_);
  v.buffer(prefix + "running_var", running_var_);
}

// ----------------------------------------------------------- activations

Tensor ReLU::forward(const Tensor& x) {
  input_ = x;
  Tensor y = x;
  for (double& v : y.values()) v = v > 0.0 ? v : 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (input_[i] <= 0.0) g[i] = 0.0;
  return g;
}

Tensor LeakyReLU::forward(const Tensor& x) {
  input_ = x;
  Tensor y = x;
  for (double& v : y.values())
    if (v < 0.0) v *= slope_;
  return y;
}

Tensor LeakyReLU::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (input_[i] < 0.0) g[i] *= slope_;
  return g;
}

Tensor Tanh::forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = std::tanh(v);
  output_ = y;
  return y;
}

Tensor Tanh::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - output_[i] * output_[i];
  return g;
}

namespace {

double sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

Tensor Sigmoid::forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.values()) v = sigmoid(v);
  output_ = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= output_[i] * (1.0 - output_[i]);
  return g;
}

// ------------------------------------------------------ ChannelAttention

namespace {
// Leaky bottleneck: with only C/r hidden units a plain ReLU can be dead from
// initialisation, which silently disables the whole gate.
constexpr double kBottleneckSlope = 0.2;
double leaky(double z) { return z > 0.0 ? z : kBottleneckSlope * z; }
}  // namespace

ChannelAttention::ChannelAttention(std::size_t channels, std::size_t reduction, std::mt19937_64& rng)
    : channels_(channels), hidden_(0) {
  if (reduction == 0) throw ArgumentError("channel attention reduction must be positive");
  if (channels < reduction) {
    throw ArgumentError("channel attention: " + std::to_string(channels) + " channels < reduction " +
                        std::to_string(reduction));
  }
  if (channels % reduction != 0) {
    throw ArgumentError("channel attention: " + std::to_string(channels) + " channels not divisible by " +
                        std::to_string(reduction));
  }
  hidden_ = channels / reduction;
  w1_ = Parameter({hidden_, channels_});
  b1_ = Parameter({hidden_});
  w2_ = Parameter({channels_, hidden_});
  b2_ = Parameter({channels_});
  he_normal(w1_.value, channels_, rng);
  he_normal(w2_.value, hidden_, rng);
}

Tensor ChannelAttention::forward(const Tensor& x) {
  check_rank4(x, channels_, "ChannelAttention");
  input_ = x;
  const std::size_t n = x.dim(0), area = x.dim(2) * x.dim(3);
  pooled_ = Tensor({n, channels_});
  hidden_pre_ = Tensor({n, hidden_});
  gates_ = Tensor({n, channels_});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const double* p = x.data() + (b * channels_ + c) * area;
      double s = 0.0;
      for (std::size_t i = 0; i < area; ++i) s += p[i];
      pooled_[b * channels_ + c] = s / static_cast<double>(area);
    }
    for (std::size_t j = 0; j < hidden_; ++j) {
      double z = b1_.value[j];
      for (std::size_t c = 0; c < channels_; ++c) z += w1_.value[j * channels_ + c] * pooled_[b * channels_ + c];
      hidden_pre_[b * hidden_ + j] = z;
    }
    for (std::size_t c = 0; c < channels_; ++c) {
      double z = b2_.value[c];
      for (std::size_t j = 0; j < hidden_; ++j) {
        z += w2_.value[c * hidden_ + j] * leaky(hidden_pre_[b * hidden_ + j]);
      }
      gates_[b * channels_ + c] = sigmoid(z);
    }
  }
  Tensor y = x;
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t c = 0; c < channels_; ++c) {
      const double g = gates_[b * channels_ + c];
      double* p = y.data() + (b * channels_ + c) * area;
      for (std::size_t i = 0; i < area; ++i) p[i] *= g;
    }
  return y;
}

Tensor ChannelAttention::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const std::size_t n = x.dim(0), area = x.dim(2) * x.dim(3);
  Tensor dx(x.shape());
  std::vector<double> dz2(channels_), dh(hidden_), dp(channels_);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t c = 0; c < channels_; ++c) {
      const std::size_t off = (b * channels_ + c) * area;
      const double g = gates_[b * channels_ + c];
      double dg = 0.0;
      for (std::size_t i = 0; i < area; ++i) {
        dg += grad_out[off + i] * x[off + i];
        dx[off + i] = grad_out[off + i] * g;
      }
      dz2[c] = dg * g * (1.0 - g);
      b2_.grad[c] += dz2[c];
    }
    std::fill(dh.begin(), dh.end(), 0.0);
    for (std::size_t c = 0; c < channels_; ++c) {
      for (std::size_t j = 0; j < hidden_; ++j) {
        const double hj = leaky(hidden_pre_[b * hidden_ + j]);
        w2_.grad[c * hidden_ + j] += dz2[c] * hj;
        dh[j] += w2_.value[c * hidden_ + j] * dz2[c];
      }
    }
    std::fill(dp.begin(), dp.end(), 0.0);
    for (std::size_t j = 0; j < hidden_; ++j) {
      const double dz1 = hidden_pre_[b * hidden_ + j] > 0.0 ? dh[j] : kBottleneckSlope * dh[j];
      b1_.grad[j] += dz1;
      for (std::size_t c = 0; c < channels_; ++c) {
        w1_.grad[j * channels_ + c] += dz1 * pooled_[b * channels_ + c];
        dp[c] += w1_.value[j * channels_ + c] * dz1;
      }
    }
    for (std::size_t c = 0; c < channels_; ++c) {
      const double share = dp[c] / static_cast<double>(area);
      const std::size_t off = (b * channels_ + c) * area;
      for (std::size_t i = 0; i < area; ++i) dx[off + i] += share;
    }
  }
  return dx;
}

void ChannelAttention::visit(const std::string& prefix, StateVisitor& v) {
  v.parameter(prefix + "squeeze.weight", w1_);
  v.parameter(prefix + "squeeze.bias", b1_);
  v.parameter(prefix + "excite.weight", w2_);
  v.parameter(prefix + "excite.bias", b2_);
}

}  // namespace stemgan::nn
