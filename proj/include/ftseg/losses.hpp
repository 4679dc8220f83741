#ifndef FTSEG_LOSSES_HPP
#define FTSEG_LOSSES_HPP

#include "ftseg/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ftseg {

enum class LossKind { DiceLoss, BCE, DiceBCE };

std::string to_string(LossKind k);
LossKind parse_loss_kind(const std::string& s);

template <typename Scalar>
struct LossResult {
  double value = 0.0;
  Tensor<Scalar> grad;  // d(value)/d(logits)
};

inline constexpr double kDiceSmooth = 1.0;

/// Loss over a batch of single-channel logits against a binary target.
/// Dice is computed on sigmoid probabilities pooled over the whole batch
/// (1 - (2*sum(p*g) + 1) / (sum(p) + sum(g) + 1)); BCE is the mean
/// per-pixel cross-entropy on logits; DiceBCE is their sum.
template <typename Scalar>
LossResult<Scalar> compute_loss(const Tensor<Scalar>& logits, const Tensor<Scalar>& target, LossKind kind) {
  if (!logits.same_shape(target))
    throw ShapeError("loss: logits " + logits.shape_string() + " vs target " + target.shape_string());
  const auto z = logits.data().array();
  const auto g = target.data().array();
  if (((g != Scalar(0)) && (g != Scalar(1))).any()) throw std::invalid_argument("loss: target must be binary");
  const double n = double(z.size());
  const auto p = (Scalar(1) / (Scalar(1) + (-z).exp())).eval();

  LossResult<Scalar> out;
  out.grad = Tensor<Scalar>::zeros_like(logits);
  if (kind == LossKind::BCE || kind == LossKind::DiceBCE) {
    // max(z,0) - z*g + log(1 + exp(-|z|))
    const auto per_pixel = z.max(Scalar(0)) - z * g + (Scalar(1) + (-z.abs()).exp()).log();
    out.value += double(per_pixel.sum()) / n;
    out.grad.data().array() += (p - g) / Scalar(n);
  }
  if (kind == LossKind::DiceLoss || kind == LossKind::DiceBCE) {
    const double inter = double((p * g).sum());
    const double denom = double(p.sum()) + double(g.sum()) + kDiceSmooth;
    const double numer = 2.0 * inter + kDiceSmooth;
    out.value += 1.0 - numer / denom;
    // d/dp_i = -(2 g_i denom - numer) / denom^2 ; dp/dz = p (1 - p)
    const auto dldp = (Scalar(numer) - Scalar(2 * denom) * g) / Scalar(denom * denom);
    out.grad.data().array() += dldp * p * (Scalar(1) - p);
  }
  return out;
}

}  // namespace ftseg

#endif  // FTSEG_LOSSES_HPP
