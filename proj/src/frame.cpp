#include "stemgan/frame.hpp"

#include <cmath>

#include "stemgan/error.hpp"

namespace stemgan {

Frame::Frame(std::size_t channels, std::size_t height, std::size_t width, double fill)
    : data_({channels, height, width}, fill) {}

Frame::Frame(Tensor chw) : data_(std::move(chw)) {
  if (data_.rank() != 3) throw ArgumentError("frame tensor must be C x H x W, got " + shape_string(data_.shape()));
}

bool Frame::valid() const {
  for (double v : data_.values()) {
    if (!std::isfinite(v) || v < -1.0 || v > 1.0) return false;
  }
  return true;
}

}  // namespace stemgan
