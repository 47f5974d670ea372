#pragma once

#include <cstddef>
#include <memory>

#include "stemgan/tensor.hpp"

namespace stemgan {

// One preprocessed image, stored channel-major (C x H x W) with values in
// [-1, 1]. Immutable once handed out by the loader (see FramePtr).
class Frame {
 public:
  Frame() = default;
  Frame(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);
  explicit Frame(Tensor chw);

  std::size_t channels() const { return data_.dim(0); }
  std::size_t height() const { return data_.dim(1); }
  std::size_t width() const { return data_.dim(2); }

  double& at(std::size_t c, std::size_t h, std::size_t w) { return data_[(c * height() + h) * width() + w]; }
  double at(std::size_t c, std::size_t h, std::size_t w) const { return data_[(c * height() + h) * width() + w]; }

  const Tensor& tensor() const { return data_; }
  Tensor& tensor() { return data_; }

  // Finite and within [-1, 1].
  bool valid() const;

 private:
  Tensor data_{Shape{0, 0, 0}};
};

using FramePtr = std::shared_ptr<const Frame>;

}  // namespace stemgan
