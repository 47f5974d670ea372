#include "stemgan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "stemgan/error.hpp"

namespace stemgan {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_size(shape_)) {
    throw ArgumentError("tensor: " + std::to_string(data_.size()) + " values for shape " + shape_string(shape_));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

void Tensor::reshape(Shape shape) {
  if (shape_size(shape) != data_.size()) {
    throw ArgumentError("reshape " + shape_string(shape_) + " -> " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ArgumentError("tensor add " + shape_string(shape_) + " vs " + shape_string(other.shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

double Tensor::mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

double Tensor::min() const { return *std::min_element(data_.begin(), data_.end()); }

double Tensor::max() const { return *std::max_element(data_.begin(), data_.end()); }

Tensor Tensor::slice(std::size_t begin, std::size_t end) const {
  if (shape_.empty() || begin > end || end > shape_[0]) {
    throw ArgumentError("slice out of range");
  }
  Shape s = shape_;
  s[0] = end - begin;
  const std::size_t row = data_.size() / shape_[0];
  std::vector<double> v(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                        data_.begin() + static_cast<std::ptrdiff_t>(end * row));
  return Tensor(std::move(s), std::move(v));
}

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ArgumentError("concat_channels: no inputs");
  const Shape& s0 = parts.front()->shape();
  if (s0.size() != 4) throw ArgumentError("concat_channels: rank-4 tensors required");
  std::size_t channels = 0;
  for (const Tensor* p : parts) {
    const Shape& s = p->shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3]) {
      throw ArgumentError("concat_channels: shape " + shape_string(s) + " does not align with " +
                          shape_string(s0));
    }
    channels += s[1];
  }
  const std::size_t n = s0[0], plane = s0[2] * s0[3];
  Tensor out({n, channels, s0[2], s0[3]});
  double* dst = out.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (const Tensor* p : parts) {
      const std::size_t chunk = p->dim(1) * plane;
      std::memcpy(dst, p->data() + b * chunk, chunk * sizeof(double));
      dst += chunk;
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& t, const std::vector<std::size_t>& channels) {
  const Shape& s = t.shape();
  if (s.size() != 4) throw ArgumentError("split_channels: rank-4 tensor required");
  if (std::accumulate(channels.begin(), channels.end(), std::size_t{0}) != s[1]) {
    throw ArgumentError("split_channels: channel counts do not sum to " + std::to_string(s[1]));
  }
  const std::size_t plane = s[2] * s[3];
  std::vector<Tensor> out;
  out.reserve(channels.size());
  for (std::size_t c : channels) out.emplace_back(Shape{s[0], c, s[2], s[3]});
  const double* src = t.data();
  for (std::size_t b = 0; b < s[0]; ++b) {
    for (std::size_t i = 0; i < channels.size(); ++i) {
      const std::size_t chunk = channels[i] * plane;
      std::memcpy(out[i].data() + b * chunk, src, chunk * sizeof(double));
      src += chunk;
    }
  }
  return out;
}

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
  // FNV-1a over 64-bit words, then the byte tail.
  constexpr std::uint64_t prime = 1099511628211ull;
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  std::size_t i = 0;
  for (; i + 8 <= bytes; i += 8) {
    std::uint64_t word;
    std::memcpy(&word, p + i, 8);
    h ^= word;
    h *= prime;
  }
  for (; i < bytes; ++i) {
    h ^= p[i];
    h *= prime;
  }
  return h;
}

}  // namespace stemgan
