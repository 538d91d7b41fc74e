#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "lf/tensor.hpp"

namespace lf {

/// Soft dice loss: 1 - (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth).
/// Differentiable w.r.t. `pred`; `target` is treated as a constant mask.
template <typename T>
BasicTensor<T> dice_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                         double smooth = 1.0) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("dice_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  double inter = 0.0, sum_p = 0.0, sum_t = 0.0;
  for (std::size_t i = 0; i < pred.data().size(); ++i) {
    const double p = static_cast<double>(pred.data()[i]);
    const double t = static_cast<double>(target.data()[i]);
    inter += p * t;
    sum_p += p;
    sum_t += t;
  }
  const double numer = 2.0 * inter + smooth;
  const double denom = sum_p + sum_t + smooth;
  const double loss = 1.0 - numer / denom;
  auto pi = pred.impl_ptr();
  auto ti = target.impl_ptr();
  return make_op_output<T>(
      {1}, {static_cast<T>(loss)}, {pred, target},
      [pi, ti, numer, denom](const TensorImpl<T>& o) {
        if (!pi->requires_grad) return;
        pi->ensure_grad();
        const double g = static_cast<double>(o.grad[0]);
        const double d2 = denom * denom;
        for (std::size_t i = 0; i < pi->data.size(); ++i) {
          const double t = static_cast<double>(ti->data[i]);
          // d/dp_i [1 - N/D] with dN/dp = 2t, dD/dp = 1.
          pi->grad[i] += static_cast<T>(g * (-(2.0 * t * denom - numer) / d2));
        }
      });
}

/// Mean binary cross-entropy with logits over elements where mask = 1.
/// Returns an exact zero (with zero gradient) when the mask is empty.
template <typename T>
BasicTensor<T> bce_with_logits_masked(const BasicTensor<T>& logits, const BasicTensor<T>& targets,
                                      const std::vector<unsigned char>& mask) {
  if (logits.numel() != targets.numel() ||
      logits.data().size() != mask.size()) {
    throw DimensionError("bce_with_logits_masked: logits " + shape_str(logits.shape()) +
                         ", targets " + shape_str(targets.shape()) + ", mask " +
                         std::to_string(mask.size()));
  }
  std::int64_t count = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++count;
    const double z = static_cast<double>(logits.data()[i]);
    const double y = static_cast<double>(targets.data()[i]);
    acc += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  const double loss = count > 0 ? acc / static_cast<double>(count) : 0.0;
  auto li = logits.impl_ptr();
  auto ti = targets.impl_ptr();
  auto mk = std::make_shared<std::vector<unsigned char>>(mask);
  return make_op_output<T>({1}, {static_cast<T>(loss)}, {logits, targets},
                           [li, ti, mk, count](const TensorImpl<T>& o) {
                             if (!li->requires_grad || count == 0) return;
                             li->ensure_grad();
                             const double g = static_cast<double>(o.grad[0]) /
                                              static_cast<double>(count);
                             for (std::size_t i = 0; i < mk->size(); ++i) {
                               if (!(*mk)[i]) continue;
                               const double z = static_cast<double>(li->data[i]);
                               const double s = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                                         : std::exp(z) / (1.0 + std::exp(z));
                               li->grad[i] += static_cast<T>(
                                   g * (s - static_cast<double>(ti->data[i])));
                             }
                           });
}

/// Mean squared error over rows where mask = 1; each row contributes
/// `row_size` consecutive elements. Zero (with zero gradient) if no row is on.
template <typename T>
BasicTensor<T> mse_masked(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                          const std::vector<unsigned char>& mask, int row_size) {
  if (pred.numel() != target.numel() ||
      pred.data().size() != mask.size() * static_cast<std::size_t>(row_size)) {
    throw DimensionError("mse_masked: pred " + shape_str(pred.shape()) + ", target " +
                         shape_str(target.shape()) + ", mask rows " + std::to_string(mask.size()));
  }
  std::int64_t rows = 0;
  double acc = 0.0;
  for (std::size_t r = 0; r < mask.size(); ++r) {
    if (!mask[r]) continue;
    ++rows;
    for (int j = 0; j < row_size; ++j) {
      const std::size_t i = r * static_cast<std::size_t>(row_size) + static_cast<std::size_t>(j);
      const double d = static_cast<double>(pred.data()[i]) - static_cast<double>(target.data()[i]);
      acc += d * d;
    }
  }
  const std::int64_t count = rows * row_size;
  const double loss = count > 0 ? acc / static_cast<double>(count) : 0.0;
  auto pi = pred.impl_ptr();
  auto ti = target.impl_ptr();
  auto mk = std::make_shared<std::vector<unsigned char>>(mask);
  return make_op_output<T>({1}, {static_cast<T>(loss)}, {pred, target},
                           [pi, ti, mk, row_size, count](const TensorImpl<T>& o) {
                             if (!pi->requires_grad || count == 0) return;
                             pi->ensure_grad();
                             const double g = 2.0 * static_cast<double>(o.grad[0]) /
                                              static_cast<double>(count);
                             for (std::size_t r = 0; r < mk->size(); ++r) {
                               if (!(*mk)[r]) continue;
                               for (int j = 0; j < row_size; ++j) {
                                 const std::size_t i = r * static_cast<std::size_t>(row_size) +
                                                       static_cast<std::size_t>(j);
                                 pi->grad[i] += static_cast<T>(
                                     g * (static_cast<double>(pi->data[i]) -
                                          static_cast<double>(ti->data[i])));
                               }
                             }
                           });
}

/// Hard threshold: element >= threshold -> 1 else 0. Not differentiable; the
/// result carries no autograd history.
template <typename T>
BasicTensor<T> binarize(const BasicTensor<T>& pred, double threshold = 0.5) {
  std::vector<T> out(pred.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<double>(pred.data()[i]) >= threshold ? T(1) : T(0);
  }
  return BasicTensor<T>::from_data(pred.shape(), std::move(out));
}

/// Pixel confusion counts between binary masks of identical shape.
struct ConfusionCounts {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::int64_t total() const { return tp + fp + tn + fn; }
};

template <typename T>
ConfusionCounts confusion_counts(const BasicTensor<T>& pred_mask, const BasicTensor<T>& gt_mask) {
  if (pred_mask.shape() != gt_mask.shape()) {
    throw DimensionError("confusion_counts: shape mismatch " + shape_str(pred_mask.shape()) +
                         " vs " + shape_str(gt_mask.shape()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred_mask.data().size(); ++i) {
    const bool p = pred_mask.data()[i] > T(0.5);
    const bool t = gt_mask.data()[i] > T(0.5);
    if (p && t)
      ++c.tp;
    else if (p && !t)
      ++c.fp;
    else if (!p && t)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

struct Metrics {
  double dice = 0.0, jaccard = 0.0, accuracy = 0.0, sensitivity = 0.0, specificity = 0.0;
};

/// The five evaluation metrics from pixel confusion counts. A metric whose
/// denominator is zero reports 1 (perfect vacuous agreement).
inline Metrics metrics_from_counts(const ConfusionCounts& c) {
  auto ratio = [](std::int64_t num, std::int64_t den) {
    return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  Metrics m;
  m.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  m.jaccard = ratio(c.tp, c.tp + c.fp + c.fn);
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.specificity = ratio(c.tn, c.tn + c.fp);
  return m;
}

template <typename T>
Metrics compute_metrics(const BasicTensor<T>& pred_mask, const BasicTensor<T>& gt_mask) {
  return metrics_from_counts(confusion_counts(pred_mask, gt_mask));
}

}  // namespace lf
