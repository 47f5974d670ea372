#pragma once

#include "stemgan/tensor.hpp"

namespace stemgan {

struct LossWeights {
  double lambda_int = 1.0;
  double lambda_gra = 1.0;
  double lambda_adv = 0.05;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

inline constexpr double kBceEpsilon = 1e-7;

// A loss value and its gradient w.r.t. the prediction argument.
struct LossResult {
  double value = 0.0;
  Tensor grad;
};

// Mean binary cross-entropy, predictions clamped to [eps, 1 - eps].
double bce(const Tensor& pred, const Tensor& target);
double bce(double pred, double target);
LossResult bce_with_grad(const Tensor& pred, double target);

// Real grid scored against 1, fake against 0; each term averaged over its
// grid (and batch), then summed.
double adv_loss_d(const Tensor& grid_real, const Tensor& grid_fake);
// Gradients w.r.t. the real and fake grids.
std::pair<LossResult, LossResult> adv_loss_d_with_grad(const Tensor& grid_real, const Tensor& grid_fake);

double adv_loss_g(const Tensor& grid_fake);
LossResult adv_loss_g_with_grad(const Tensor& grid_fake);

// Per-pixel mean of the squared difference.
double intensity_loss(const Tensor& pred, const Tensor& truth);
LossResult intensity_loss_with_grad(const Tensor& pred, const Tensor& truth);

// Difference of absolute adjacent-pixel gradients along both spatial axes,
// each axis averaged over its valid positions. Works on C x H x W or
// N x C x H x W; frames must be at least 2 x 2.
double gradient_loss(const Tensor& pred, const Tensor& truth);
LossResult gradient_loss_with_grad(const Tensor& pred, const Tensor& truth);

struct GeneratorObjective {
  double total = 0.0;
  double intensity = 0.0;
  double gradient = 0.0;
  double adversarial = 0.0;
  Tensor grad_pred;  // d total / d pred, excluding the adversarial path
  Tensor grad_grid;  // d total / d grid_fake (already weighted)
};

GeneratorObjective generator_objective(const Tensor& pred, const Tensor& truth, const Tensor& grid_fake,
                                       const LossWeights& w);
double discriminator_objective(const Tensor& grid_real, const Tensor& grid_fake);

}  // namespace stemgan
