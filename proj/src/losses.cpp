#include "stemgan/losses.hpp"

#include <algorithm>
#include <cmath>

#include "stemgan/error.hpp"

namespace stemgan {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* who) {
  if (a.shape() != b.shape()) {
    throw ArgumentError(std::string(who) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                        shape_string(b.shape()));
  }
}

double clamp_prob(double p) { return std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon); }

// Spatial layout of an image-like tensor: planes of height x width.
struct Planes {
  std::size_t count, height, width;
};

Planes planes_of(const Tensor& t) {
  if (t.rank() < 2) throw ArgumentError("gradient loss needs at least 2 spatial axes");
  const std::size_t h = t.dim(t.rank() - 2), w = t.dim(t.rank() - 1);
  if (h < 2 || w < 2) throw ArgumentError("gradient loss needs frames of at least 2x2");
  return {t.size() / (h * w), h, w};
}

double sign(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace

void LossWeights::validate() const {
  if (lambda_int < 0 || lambda_gra < 0 || lambda_adv < 0) throw ValidationError("loss weights must be non-negative");
  if (lambda_int == 0 && lambda_gra == 0 && lambda_adv == 0) {
    throw ValidationError("at least one loss weight must be positive");
  }
}

double bce(double pred, double target) {
  const double p = clamp_prob(pred);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

double bce(const Tensor& pred, const Tensor& target) {
  require_same_shape(pred, target, "bce");
  if (pred.empty()) throw ArgumentError("bce: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += bce(pred[i], target[i]);
  return s / static_cast<double>(pred.size());
}

LossResult bce_with_grad(const Tensor& pred, double target) {
  if (pred.empty()) throw ArgumentError("bce: empty input");
  LossResult r{0.0, Tensor(pred.shape())};
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    r.value += bce(pred[i], target);
    // The clamp is flat outside [eps, 1-eps]; inside, d/dp = (p - t) / (p (1 - p)).
    const double p = pred[i];
    if (p > kBceEpsilon && p < 1.0 - kBceEpsilon) r.grad[i] = (p - target) / (p * (1.0 - p)) / n;
  }
  r.value /= n;
  return r;
}

std::pair<LossResult, LossResult> adv_loss_d_with_grad(const Tensor& grid_real, const Tensor& grid_fake) {
  require_same_shape(grid_real, grid_fake, "adv_loss_d");
  return {bce_with_grad(grid_real, 1.0), bce_with_grad(grid_fake, 0.0)};
}

double adv_loss_d(const Tensor& grid_real, const Tensor& grid_fake) {
  auto [r, f] = adv_loss_d_with_grad(grid_real, grid_fake);
  return r.value + f.value;
}

LossResult adv_loss_g_with_grad(const Tensor& grid_fake) { return bce_with_grad(grid_fake, 1.0); }

double adv_loss_g(const Tensor& grid_fake) { return adv_loss_g_with_grad(grid_fake).value; }

LossResult intensity_loss_with_grad(const Tensor& pred, const Tensor& truth) {
  require_same_shape(pred, truth, "intensity_loss");
  if (pred.empty()) throw ArgumentError("intensity_loss: empty input");
  LossResult r{0.0, Tensor(pred.shape())};
  const double n = static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - truth[i];
    r.value += d * d;
    r.grad[i] = 2.0 * d / n;
  }
  r.value /= n;
  return r;
}

double intensity_loss(const Tensor& pred, const Tensor& truth) { return intensity_loss_with_grad(pred, truth).value; }

LossResult gradient_loss_with_grad(const Tensor& pred, const Tensor& truth) {
  require_same_shape(pred, truth, "gradient_loss");
  const Planes pl = planes_of(pred);
  const double n_h = static_cast<double>(pl.count * pl.height * (pl.width - 1));
  const double n_v = static_cast<double>(pl.count * (pl.height - 1) * pl.width);
  LossResult r{0.0, Tensor(pred.shape())};
  double sum_h = 0.0, sum_v = 0.0;
  for (std::size_t p = 0; p < pl.count; ++p) {
    const std::size_t base = p * pl.height * pl.width;
    for (std::size_t i = 0; i < pl.height; ++i) {
      for (std::size_t j = 0; j < pl.width; ++j) {
        const std::size_t at = base + i * pl.width + j;
        if (j > 0) {
          const double dp = pred[at] - pred[at - 1];
          const double dt = truth[at] - truth[at - 1];
          const double e = std::abs(dp) - std::abs(dt);
          sum_h += std::abs(e);
          const double g = sign(e) * sign(dp) / n_h;
          r.grad[at] += g;
          r.grad[at - 1] -= g;
        }
        if (i > 0) {
          const double dp = pred[at] - pred[at - pl.width];
          const double dt = truth[at] - truth[at - pl.width];
          const double e = std::abs(dp) - std::abs(dt);
          sum_v += std::abs(e);
          const double g = sign(e) * sign(dp) / n_v;
          r.grad[at] += g;
          r.grad[at - pl.width] -= g;
        }
      }
    }
  }
  r.value = sum_h / n_h + sum_v / n_v;
  return r;
}

double gradient_loss(const Tensor& pred, const Tensor& truth) { return gradient_loss_with_grad(pred, truth).value; }

GeneratorObjective generator_objective(const Tensor& pred, const Tensor& truth, const Tensor& grid_fake,
                                       const LossWeights& w) {
  GeneratorObjective o;
  LossResult li = intensity_loss_with_grad(pred, truth);
  LossResult lg = gradient_loss_with_grad(pred, truth);
  LossResult la = adv_loss_g_with_grad(grid_fake);
  o.intensity = li.value;
  o.gradient = lg.value;
  o.adversarial = la.value;
  o.total = w.lambda_int * li.value + w.lambda_gra * lg.value + w.lambda_adv * la.value;
  o.grad_pred = Tensor(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    o.grad_pred[i] = w.lambda_int * li.grad[i] + w.lambda_gra * lg.grad[i];
  }
  o.grad_grid = std::move(la.grad);
  o.grad_grid *= w.lambda_adv;
  return o;
}

double discriminator_objective(const Tensor& grid_real, const Tensor& grid_fake) {
  return adv_loss_d(grid_real, grid_fake);
}

}  // namespace stemgan
