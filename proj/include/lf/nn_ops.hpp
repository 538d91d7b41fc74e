#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lf/tensor.hpp"

namespace lf {

namespace detail {

/// Gathers conv patches for output columns [m0, m1) into `cols`
/// (K x (m1-m0), K = cin*kh*kw). Out-of-image taps read as zero.
template <typename T>
void im2col_tile(const T* src, int cin, int h, int w, int kh, int kw, int stride, int padding,
                 int out_w, std::int64_t m0, std::int64_t m1, T* cols) {
  const std::int64_t tile = m1 - m0;
  for (int ci = 0; ci < cin; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = cols + (static_cast<std::int64_t>((ci * kh + ki) * kw + kj)) * tile;
        for (std::int64_t m = m0; m < m1; ++m) {
          const int oi = static_cast<int>(m / out_w);
          const int oj = static_cast<int>(m % out_w);
          const int si = oi * stride - padding + ki;
          const int sj = oj * stride - padding + kj;
          dst[m - m0] = (si >= 0 && si < h && sj >= 0 && sj < w)
                            ? src[(static_cast<std::int64_t>(ci) * h + si) * w + sj]
                            : T(0);
        }
      }
    }
  }
}

/// Scatter-adds a column tile back into the gradient image.
template <typename T>
void col2im_tile(const T* cols, int cin, int h, int w, int kh, int kw, int stride, int padding,
                 int out_w, std::int64_t m0, std::int64_t m1, T* dst) {
  const std::int64_t tile = m1 - m0;
  for (int ci = 0; ci < cin; ++ci) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* src = cols + (static_cast<std::int64_t>((ci * kh + ki) * kw + kj)) * tile;
        for (std::int64_t m = m0; m < m1; ++m) {
          const int oi = static_cast<int>(m / out_w);
          const int oj = static_cast<int>(m % out_w);
          const int si = oi * stride - padding + ki;
          const int sj = oj * stride - padding + kj;
          if (si >= 0 && si < h && sj >= 0 && sj < w) {
            dst[(static_cast<std::int64_t>(ci) * h + si) * w + sj] += src[m - m0];
          }
        }
      }
    }
  }
}

constexpr std::int64_t kConvTile = 16384;

}  // namespace detail

/// 2-D convolution over NCHW input with OIHW weight, optional bias [Cout].
/// H' = floor((H + 2p - kh)/stride) + 1, likewise W'.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride = 1, int padding = 0) {
  if (input.rank() != 4 || weight.rank() != 4) {
    throw DimensionError("conv2d: expected 4-D input/weight, got " + shape_str(input.shape()) +
                         " and " + shape_str(weight.shape()));
  }
  const int n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin) {
    throw DimensionError("conv2d: input channels " + shape_str(input.shape()) +
                         " do not match weight " + shape_str(weight.shape()));
  }
  if (bias.valid() && (bias.rank() != 1 || bias.dim(0) != cout)) {
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) + " does not match Cout " +
                         std::to_string(cout));
  }
  if (stride < 1 || kh < 1 || kw < 1 || padding < 0) {
    throw ConfigError("conv2d: stride/kernel/padding out of range");
  }
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    throw DimensionError("conv2d: kernel " + shape_str(weight.shape()) +
                         " larger than padded input " + shape_str(input.shape()));
  }
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;
  const std::int64_t m_total = static_cast<std::int64_t>(oh) * ow;
  const std::int64_t k_total = static_cast<std::int64_t>(cin) * kh * kw;

  std::vector<T> out(static_cast<std::size_t>(n) * cout * m_total, T(0));
  std::vector<T> cols;
  const std::int64_t tile_cap = std::min<std::int64_t>(m_total, detail::kConvTile);
  cols.resize(static_cast<std::size_t>(k_total * tile_cap));

  const T* wp = weight.data().data();
  for (int ni = 0; ni < n; ++ni) {
    const T* src = input.data().data() + static_cast<std::int64_t>(ni) * cin * h * w;
    T* dst = out.data() + static_cast<std::int64_t>(ni) * cout * m_total;
    for (std::int64_t m0 = 0; m0 < m_total; m0 += tile_cap) {
      const std::int64_t m1 = std::min(m_total, m0 + tile_cap);
      const std::int64_t tile = m1 - m0;
      detail::im2col_tile(src, cin, h, w, kh, kw, stride, padding, ow, m0, m1, cols.data());
      for (int co = 0; co < cout; ++co) {
        T* acc = dst + static_cast<std::int64_t>(co) * m_total + m0;
        for (std::int64_t k = 0; k < k_total; ++k) {
          const T wv = wp[static_cast<std::int64_t>(co) * k_total + k];
          const T* col = cols.data() + k * tile;
          for (std::int64_t m = 0; m < tile; ++m) acc[m] += wv * col[m];
        }
      }
    }
    if (bias.valid()) {
      for (int co = 0; co < cout; ++co) {
        const T bv = bias.data()[static_cast<std::size_t>(co)];
        T* acc = dst + static_cast<std::int64_t>(co) * m_total;
        for (std::int64_t m = 0; m < m_total; ++m) acc[m] += bv;
      }
    }
  }

  auto xi = input.impl_ptr();
  auto wi = weight.impl_ptr();
  auto bi = bias.valid() ? bias.impl_ptr() : nullptr;
  std::vector<BasicTensor<T>> parents = {input, weight};
  if (bias.valid()) parents.push_back(bias);

  auto bw = [xi, wi, bi, n, cin, h, w, cout, kh, kw, stride, padding, oh, ow, m_total,
             k_total](const TensorImpl<T>& o) {
    const std::int64_t tile_cap = std::min<std::int64_t>(m_total, detail::kConvTile);
    std::vector<T> cols(static_cast<std::size_t>(k_total * tile_cap));
    std::vector<T> dcols(static_cast<std::size_t>(k_total * tile_cap));
    const bool need_x = xi->requires_grad;
    const bool need_w = wi->requires_grad;
    if (need_x) xi->ensure_grad();
    if (need_w) wi->ensure_grad();
    if (bi && bi->requires_grad) {
      bi->ensure_grad();
      for (int co = 0; co < cout; ++co) {
        double acc = 0.0;
        for (int ni = 0; ni < n; ++ni) {
          const T* g = o.grad.data() + (static_cast<std::int64_t>(ni) * cout + co) * m_total;
          for (std::int64_t m = 0; m < m_total; ++m) acc += static_cast<double>(g[m]);
        }
        bi->grad[static_cast<std::size_t>(co)] += static_cast<T>(acc);
      }
    }
    if (!need_x && !need_w) return;
    const T* wp = wi->data.data();
    for (int ni = 0; ni < n; ++ni) {
      const T* src = xi->data.data() + static_cast<std::int64_t>(ni) * cin * h * w;
      const T* gout = o.grad.data() + static_cast<std::int64_t>(ni) * cout * m_total;
      for (std::int64_t m0 = 0; m0 < m_total; m0 += tile_cap) {
        const std::int64_t m1 = std::min(m_total, m0 + tile_cap);
        const std::int64_t tile = m1 - m0;
        if (need_w) {
          detail::im2col_tile(src, cin, h, w, kh, kw, stride, padding, ow, m0, m1, cols.data());
          for (int co = 0; co < cout; ++co) {
            const T* g = gout + static_cast<std::int64_t>(co) * m_total + m0;
            T* wg = wi->grad.data() + static_cast<std::int64_t>(co) * k_total;
            for (std::int64_t k = 0; k < k_total; ++k) {
              const T* col = cols.data() + k * tile;
              double acc = 0.0;
              for (std::int64_t m = 0; m < tile; ++m) acc += static_cast<double>(g[m]) * col[m];
              wg[k] += static_cast<T>(acc);
            }
          }
        }
        if (need_x) {
          std::fill(dcols.begin(), dcols.begin() + static_cast<std::ptrdiff_t>(k_total * tile),
                    T(0));
          for (int co = 0; co < cout; ++co) {
            const T* g = gout + static_cast<std::int64_t>(co) * m_total + m0;
            for (std::int64_t k = 0; k < k_total; ++k) {
              const T wv = wp[static_cast<std::int64_t>(co) * k_total + k];
              T* dcol = dcols.data() + k * tile;
              for (std::int64_t m = 0; m < tile; ++m) dcol[m] += wv * g[m];
            }
          }
          detail::col2im_tile(dcols.data(), cin, h, w, kh, kw, stride, padding, ow, m0, m1,
                              xi->grad.data() + static_cast<std::int64_t>(ni) * cin * h * w);
        }
      }
    }
  };
  return make_op_output<T>({n, cout, oh, ow}, std::move(out), std::move(parents), std::move(bw));
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, int stride = 1,
                      int padding = 0) {
  return conv2d(input, weight, BasicTensor<T>(), stride, padding);
}

template <typename T>
struct MaxPoolResult {
  BasicTensor<T> output;
  std::vector<std::int64_t> argmax;  // flat input index per output element
};

/// 2x2/stride-2 max pooling. Ties break to the first element in row-major
/// window order; backward routes gradient to the argmax only.
template <typename T>
MaxPoolResult<T> maxpool2d_with_indices(const BasicTensor<T>& input) {
  if (input.rank() != 4) {
    throw DimensionError("maxpool2d: expected 4-D input, got " + shape_str(input.shape()));
  }
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("maxpool2d: H and W must be even, got " + shape_str(input.shape()));
  }
  const int oh = h / 2, ow = w / 2;
  std::vector<T> out(static_cast<std::size_t>(n) * c * oh * ow);
  std::vector<std::int64_t> argmax(out.size());
  const T* src = input.data().data();
  std::int64_t oidx = 0;
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
    const T* plane = src + nc * h * w;
    for (int oi = 0; oi < oh; ++oi) {
      for (int oj = 0; oj < ow; ++oj, ++oidx) {
        const int si = oi * 2, sj = oj * 2;
        std::int64_t best = static_cast<std::int64_t>(si) * w + sj;
        T bv = plane[best];
        const std::int64_t cand[3] = {static_cast<std::int64_t>(si) * w + sj + 1,
                                      (static_cast<std::int64_t>(si) + 1) * w + sj,
                                      (static_cast<std::int64_t>(si) + 1) * w + sj + 1};
        for (const std::int64_t idx : cand) {
          if (plane[idx] > bv) {
            bv = plane[idx];
            best = idx;
          }
        }
        out[static_cast<std::size_t>(oidx)] = bv;
        argmax[static_cast<std::size_t>(oidx)] = nc * h * w + best;
      }
    }
  }
  auto xi = input.impl_ptr();
  auto indices = std::make_shared<std::vector<std::int64_t>>(argmax);
  auto output = make_op_output<T>({n, c, oh, ow}, std::move(out), {input},
                                  [xi, indices](const TensorImpl<T>& o) {
                                    if (!xi->requires_grad) return;
                                    xi->ensure_grad();
                                    for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                      xi->grad[static_cast<std::size_t>((*indices)[i])] += o.grad[i];
                                    }
                                  });
  return {output, std::move(argmax)};
}

template <typename T>
BasicTensor<T> maxpool2d(const BasicTensor<T>& input) {
  return maxpool2d_with_indices(input).output;
}

/// Nearest-neighbor 2x upsampling; backward sums each 2x2 gradient block.
template <typename T>
BasicTensor<T> upsample2x(const BasicTensor<T>& input) {
  if (input.rank() != 4) {
    throw DimensionError("upsample2x: expected 4-D input, got " + shape_str(input.shape()));
  }
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int oh = h * 2, ow = w * 2;
  std::vector<T> out(static_cast<std::size_t>(n) * c * oh * ow);
  const T* src = input.data().data();
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
    const T* plane = src + nc * h * w;
    T* dst = out.data() + nc * oh * ow;
    for (int i = 0; i < oh; ++i) {
      const T* row = plane + static_cast<std::int64_t>(i / 2) * w;
      T* drow = dst + static_cast<std::int64_t>(i) * ow;
      for (int j = 0; j < ow; ++j) drow[j] = row[j / 2];
    }
  }
  auto xi = input.impl_ptr();
  return make_op_output<T>({n, c, oh, ow}, std::move(out), {input},
                           [xi, n, c, h, w, oh, ow](const TensorImpl<T>& o) {
                             if (!xi->requires_grad) return;
                             xi->ensure_grad();
                             for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
                               T* gsrc = xi->grad.data() + nc * h * w;
                               const T* gdst = o.grad.data() + nc * oh * ow;
                               for (int i = 0; i < oh; ++i) {
                                 T* grow = gsrc + static_cast<std::int64_t>(i / 2) * w;
                                 const T* gdrow = gdst + static_cast<std::int64_t>(i) * ow;
                                 for (int j = 0; j < ow; ++j) grow[j / 2] += gdrow[j];
                               }
                             }
                           });
}

enum class BNMode { kTrain, kEval };

/// Running statistics of one batchnorm layer; updated in train mode.
template <typename T>
struct BNState {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BNState(int channels = 0)
      : running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {}
};

/// Per-channel batch normalization over batch+spatial dims. Train mode
/// normalizes with batch statistics and folds them into `state` with
/// `momentum`; eval mode normalizes with `state`.
template <typename T>
BasicTensor<T> batchnorm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                           const BasicTensor<T>& beta, BNMode mode, BNState<T>& state,
                           double epsilon = 1e-5, double momentum = 0.9) {
  if (input.rank() != 4) {
    throw DimensionError("batchnorm2d: expected 4-D input, got " + shape_str(input.shape()));
  }
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("batchnorm2d: gamma/beta size must equal channels " + std::to_string(c));
  }
  if (static_cast<int>(state.running_mean.size()) != c) {
    throw DimensionError("batchnorm2d: state has " + std::to_string(state.running_mean.size()) +
                         " channels, input " + std::to_string(c));
  }
  const std::int64_t m = static_cast<std::int64_t>(n) * h * w;
  if (mode == BNMode::kTrain && m < 2) {
    throw DimensionError("batchnorm2d: degenerate batch, N*H*W = " + std::to_string(m) +
                         " < 2 in train mode");
  }
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;

  std::vector<double> mean(static_cast<std::size_t>(c)), var(static_cast<std::size_t>(c));
  if (mode == BNMode::kTrain) {
    for (int ci = 0; ci < c; ++ci) {
      double acc = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const T* p = input.data().data() + (static_cast<std::int64_t>(ni) * c + ci) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
      }
      const double mu = acc / static_cast<double>(m);
      double vacc = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const T* p = input.data().data() + (static_cast<std::int64_t>(ni) * c + ci) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const double d = static_cast<double>(p[i]) - mu;
          vacc += d * d;
        }
      }
      mean[static_cast<std::size_t>(ci)] = mu;
      var[static_cast<std::size_t>(ci)] = vacc / static_cast<double>(m);
    }
    for (int ci = 0; ci < c; ++ci) {
      auto& rm = state.running_mean[static_cast<std::size_t>(ci)];
      auto& rv = state.running_var[static_cast<std::size_t>(ci)];
      rm = static_cast<T>(momentum * static_cast<double>(rm) +
                          (1.0 - momentum) * mean[static_cast<std::size_t>(ci)]);
      rv = static_cast<T>(momentum * static_cast<double>(rv) +
                          (1.0 - momentum) * var[static_cast<std::size_t>(ci)]);
    }
  } else {
    for (int ci = 0; ci < c; ++ci) {
      mean[static_cast<std::size_t>(ci)] =
          static_cast<double>(state.running_mean[static_cast<std::size_t>(ci)]);
      var[static_cast<std::size_t>(ci)] =
          static_cast<double>(state.running_var[static_cast<std::size_t>(ci)]);
    }
  }

  std::vector<T> out(input.data().size());
  auto xhat = std::make_shared<std::vector<T>>(input.data().size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(c));
  for (int ci = 0; ci < c; ++ci) {
    const double is = 1.0 / std::sqrt(var[static_cast<std::size_t>(ci)] + epsilon);
    (*inv_std)[static_cast<std::size_t>(ci)] = static_cast<T>(is);
    const T g = gamma.data()[static_cast<std::size_t>(ci)];
    const T b = beta.data()[static_cast<std::size_t>(ci)];
    const double mu = mean[static_cast<std::size_t>(ci)];
    for (int ni = 0; ni < n; ++ni) {
      const std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * plane;
      const T* p = input.data().data() + base;
      T* xh = xhat->data() + base;
      T* po = out.data() + base;
      for (std::int64_t i = 0; i < plane; ++i) {
        const T v = static_cast<T>((static_cast<double>(p[i]) - mu) * is);
        xh[i] = v;
        po[i] = g * v + b;
      }
    }
  }

  auto xi = input.impl_ptr();
  auto gi = gamma.impl_ptr();
  auto bi = beta.impl_ptr();
  const bool train = (mode == BNMode::kTrain);
  auto bw = [xi, gi, bi, xhat, inv_std, n, c, plane, m, train](const TensorImpl<T>& o) {
    for (int ci = 0; ci < c; ++ci) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * plane;
        const T* g = o.grad.data() + base;
        const T* xh = xhat->data() + base;
        for (std::int64_t i = 0; i < plane; ++i) {
          sum_dy += static_cast<double>(g[i]);
          sum_dy_xhat += static_cast<double>(g[i]) * static_cast<double>(xh[i]);
        }
      }
      if (gi->requires_grad) {
        gi->ensure_grad();
        gi->grad[static_cast<std::size_t>(ci)] += static_cast<T>(sum_dy_xhat);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        bi->grad[static_cast<std::size_t>(ci)] += static_cast<T>(sum_dy);
      }
      if (xi->requires_grad) {
        xi->ensure_grad();
        const double gv = static_cast<double>(gi->data[static_cast<std::size_t>(ci)]);
        const double is = static_cast<double>((*inv_std)[static_cast<std::size_t>(ci)]);
        const double mean_dy = sum_dy / static_cast<double>(m);
        const double mean_dy_xhat = sum_dy_xhat / static_cast<double>(m);
        for (int ni = 0; ni < n; ++ni) {
          const std::int64_t base = (static_cast<std::int64_t>(ni) * c + ci) * plane;
          const T* g = o.grad.data() + base;
          const T* xh = xhat->data() + base;
          T* gx = xi->grad.data() + base;
          for (std::int64_t i = 0; i < plane; ++i) {
            double d = static_cast<double>(g[i]);
            if (train) d -= mean_dy + static_cast<double>(xh[i]) * mean_dy_xhat;
            gx[i] += static_cast<T>(gv * is * d);
          }
        }
      }
    }
  };
  return make_op_output<T>(input.shape(), std::move(out), {input, gamma, beta}, std::move(bw));
}

/// Integer sampling grid for one ROI row/column axis: `out_size` nearest taps
/// covering [lo, hi) clamped to [0, limit).
inline std::vector<int> roi_taps(float lo, float hi, int out_size, int limit) {
  std::vector<int> taps(static_cast<std::size_t>(out_size));
  const float span = hi - lo;
  for (int i = 0; i < out_size; ++i) {
    const float center = lo + span * (static_cast<float>(i) + 0.5f) / static_cast<float>(out_size);
    int p = static_cast<int>(std::floor(center));
    p = std::clamp(p, 0, limit - 1);
    taps[static_cast<std::size_t>(i)] = p;
  }
  return taps;
}

/// Nearest-neighbor crop-resize of feature-map regions to out_size x out_size.
/// Boxes are given in feature coordinates as {x1,y1,x2,y2} quadruples; the
/// backward pass scatter-adds into the feature gradient.
template <typename T>
BasicTensor<T> crop_resize(const BasicTensor<T>& feat, const std::vector<float>& boxes,
                           int out_size) {
  if (feat.rank() != 4 || feat.dim(0) != 1) {
    throw DimensionError("crop_resize: expected [1,C,H,W] feature map, got " +
                         shape_str(feat.shape()));
  }
  if (boxes.size() % 4 != 0) throw ContractError("crop_resize: boxes must be x1,y1,x2,y2 quads");
  const int p = static_cast<int>(boxes.size() / 4);
  const int c = feat.dim(1), h = feat.dim(2), w = feat.dim(3);
  std::vector<T> out(static_cast<std::size_t>(p) * c * out_size * out_size);
  auto src_index = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(p) * out_size * out_size);
  for (int pi = 0; pi < p; ++pi) {
    const auto xs = roi_taps(boxes[static_cast<std::size_t>(pi) * 4 + 0],
                             boxes[static_cast<std::size_t>(pi) * 4 + 2], out_size, w);
    const auto ys = roi_taps(boxes[static_cast<std::size_t>(pi) * 4 + 1],
                             boxes[static_cast<std::size_t>(pi) * 4 + 3], out_size, h);
    for (int i = 0; i < out_size; ++i) {
      for (int j = 0; j < out_size; ++j) {
        (*src_index)[(static_cast<std::size_t>(pi) * out_size + i) * out_size + j] =
            static_cast<std::int64_t>(ys[static_cast<std::size_t>(i)]) * w +
            xs[static_cast<std::size_t>(j)];
      }
    }
    for (int ci = 0; ci < c; ++ci) {
      const T* plane = feat.data().data() + static_cast<std::int64_t>(ci) * h * w;
      T* dst = out.data() +
               ((static_cast<std::int64_t>(pi) * c + ci) * out_size) * out_size;
      for (int i = 0; i < out_size; ++i) {
        for (int j = 0; j < out_size; ++j) {
          dst[static_cast<std::int64_t>(i) * out_size + j] =
              plane[(*src_index)[(static_cast<std::size_t>(pi) * out_size + i) * out_size + j]];
        }
      }
    }
  }
  auto fi = feat.impl_ptr();
  return make_op_output<T>(
      {p, c, out_size, out_size}, std::move(out), {feat},
      [fi, src_index, p, c, h, w, out_size](const TensorImpl<T>& o) {
        if (!fi->requires_grad) return;
        fi->ensure_grad();
        for (int pi = 0; pi < p; ++pi) {
          for (int ci = 0; ci < c; ++ci) {
            T* gplane = fi->grad.data() + static_cast<std::int64_t>(ci) * h * w;
            const T* g = o.grad.data() +
                         ((static_cast<std::int64_t>(pi) * c + ci) * out_size) * out_size;
            for (int i = 0; i < out_size; ++i) {
              for (int j = 0; j < out_size; ++j) {
                gplane[(*src_index)[(static_cast<std::size_t>(pi) * out_size + i) * out_size + j]] +=
                    g[static_cast<std::int64_t>(i) * out_size + j];
              }
            }
          }
        }
      });
}

/// Reorders RPN head maps [1, A*k, h, w] (channel = a*k + j) into a flat
/// location-major tensor [h*w*A, k] matching generate_anchors ordering.
template <typename T>
BasicTensor<T> flatten_anchor_maps(const BasicTensor<T>& x, int num_anchors, int k) {
  if (x.rank() != 4 || x.dim(0) != 1 || x.dim(1) != num_anchors * k) {
    throw DimensionError("flatten_anchor_maps: expected [1," + std::to_string(num_anchors * k) +
                         ",h,w], got " + shape_str(x.shape()));
  }
  const int h = x.dim(2), w = x.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<T> out(static_cast<std::size_t>(plane) * num_anchors * k);
  for (int a = 0; a < num_anchors; ++a) {
    for (int j = 0; j < k; ++j) {
      const T* src = x.data().data() + (static_cast<std::int64_t>(a) * k + j) * plane;
      for (std::int64_t loc = 0; loc < plane; ++loc) {
        out[static_cast<std::size_t>((loc * num_anchors + a) * k + j)] = src[loc];
      }
    }
  }
  auto xi = x.impl_ptr();
  return make_op_output<T>(
      {static_cast<int>(plane) * num_anchors, k}, std::move(out), {x},
      [xi, num_anchors, k, plane](const TensorImpl<T>& o) {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (int a = 0; a < num_anchors; ++a) {
          for (int j = 0; j < k; ++j) {
            T* gsrc = xi->grad.data() + (static_cast<std::int64_t>(a) * k + j) * plane;
            for (std::int64_t loc = 0; loc < plane; ++loc) {
              gsrc[loc] += o.grad[static_cast<std::size_t>((loc * num_anchors + a) * k + j)];
            }
          }
        }
      });
}

}  // namespace lf
