#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lf/errors.hpp"
#include "lf/rng.hpp"

namespace lf {

inline std::int64_t numel_of(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

template <typename T>
struct TensorImpl;

/// One reverse-mode graph node: the parents of the producing op and a closure
/// that reads the output gradient and accumulates into the parents.
template <typename T>
struct GradNode {
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  std::function<void(const TensorImpl<T>&)> backward;
};

template <typename T>
struct TensorImpl {
  std::vector<int> shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::unique_ptr<GradNode<T>> node;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

/// Disables autograd-graph recording for its lifetime (inference mode).
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

/// Dense n-dimensional tensor of T with reverse-mode autograd. A BasicTensor is
/// a cheap shared handle; payloads are immutable once produced by an op. 4-D
/// data uses NCHW layout.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() = default;

  static BasicTensor zeros(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static BasicTensor ones(std::vector<int> shape, bool requires_grad = false) {
    return filled(std::move(shape), T(1), requires_grad);
  }

  static BasicTensor filled(std::vector<int> shape, T value, bool requires_grad = false) {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->data.assign(static_cast<std::size_t>(numel_of(shape)), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return BasicTensor(std::move(impl));
  }

  static BasicTensor from_data(std::vector<int> shape, std::vector<T> data,
                               bool requires_grad = false) {
    if (static_cast<std::int64_t>(data.size()) != numel_of(shape)) {
      throw DimensionError("from_data: " + std::to_string(data.size()) +
                           " values for shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return BasicTensor(std::move(impl));
  }

  static BasicTensor randn(std::vector<int> shape, Rng& rng, T stddev = T(1),
                           bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.impl_->data) v = static_cast<T>(rng.normal(0.0, static_cast<double>(stddev)));
    return t;
  }

  bool valid() const { return impl_ != nullptr; }
  const std::vector<int>& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  const std::vector<T>& data() const { return impl_->data; }
  std::vector<T>& mutable_data() { return impl_->data; }
  const std::vector<T>& grad() const { return impl_->grad; }
  bool has_grad() const { return !impl_->grad.empty(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) {
    impl_->requires_grad = v;
    if (v) impl_->ensure_grad();
  }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  /// Value copy with no autograd history.
  BasicTensor detached() const {
    return from_data(impl_->shape, impl_->data, false);
  }

  T item() const {
    if (numel() != 1) {
      throw ContractError("item() requires a single-element tensor, got shape " +
                          shape_str(impl_->shape));
    }
    return impl_->data[0];
  }

  TensorImpl<T>* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }

 private:
  explicit BasicTensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl<T>> impl_;

  template <typename U>
  friend BasicTensor<U> make_op_output(std::vector<int> shape, std::vector<U> data,
                                       std::vector<BasicTensor<U>> parents,
                                       std::function<void(const TensorImpl<U>&)> backward);
};

using Tensor = BasicTensor<float>;

/// Builds an op output and registers it in the autograd graph when recording
/// is enabled and some parent participates.
template <typename T>
BasicTensor<T> make_op_output(std::vector<int> shape, std::vector<T> data,
                              std::vector<BasicTensor<T>> parents,
                              std::function<void(const TensorImpl<T>&)> backward) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool track = false;
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p.requires_grad()) track = true;
    }
  }
  impl->requires_grad = track;
  if (track) {
    auto node = std::make_unique<GradNode<T>>();
    node->parents.reserve(parents.size());
    for (const auto& p : parents) node->parents.push_back(p.impl_ptr());
    node->backward = std::move(backward);
    impl->node = std::move(node);
  }
  return BasicTensor<T>(std::move(impl));
}

// ---------------------------------------------------------------------------
// Elementwise / structural ops
// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  auto xi = x.impl_ptr();
  return make_op_output<T>(x.shape(), std::move(out), {x}, [xi](const TensorImpl<T>& o) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (xi->data[i] > T(0)) xi->grad[i] += o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.data()[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  auto xi = x.impl_ptr();
  return make_op_output<T>(x.shape(), std::move(out), {x}, [xi](const TensorImpl<T>& o) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const T y = o.data[i];
      xi->grad[i] += o.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return make_op_output<T>(a.shape(), std::move(out), {a, b}, [ai, bi](const TensorImpl<T>& o) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) ai->grad[i] += o.grad[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) bi->grad[i] += o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::vector<T> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return make_op_output<T>(a.shape(), std::move(out), {a, b}, [ai, bi](const TensorImpl<T>& o) {
    if (ai->requires_grad) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) ai->grad[i] += o.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < o.grad.size(); ++i) bi->grad[i] += o.grad[i] * ai->data[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, double c) {
  std::vector<T> out(x.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(x.data()[i] * c);
  auto xi = x.impl_ptr();
  return make_op_output<T>(x.shape(), std::move(out), {x}, [xi, c](const TensorImpl<T>& o) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) xi->grad[i] += static_cast<T>(o.grad[i] * c);
  });
}

/// Concatenates two NCHW tensors along the channel axis.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) ||
      a.dim(3) != b.dim(3)) {
    throw DimensionError("concat_channels: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<T> out(static_cast<std::size_t>(n) * (ca + cb) * plane);
  for (int ni = 0; ni < n; ++ni) {
    const T* pa = a.data().data() + static_cast<std::int64_t>(ni) * ca * plane;
    const T* pb = b.data().data() + static_cast<std::int64_t>(ni) * cb * plane;
    T* po = out.data() + static_cast<std::int64_t>(ni) * (ca + cb) * plane;
    std::copy(pa, pa + ca * plane, po);
    std::copy(pb, pb + cb * plane, po + ca * plane);
  }
  auto ai = a.impl_ptr();
  auto bi = b.impl_ptr();
  return make_op_output<T>({n, ca + cb, h, w}, std::move(out), {a, b},
                           [ai, bi, n, ca, cb, plane](const TensorImpl<T>& o) {
                             for (int ni = 0; ni < n; ++ni) {
                               const T* go = o.grad.data() +
                                             static_cast<std::int64_t>(ni) * (ca + cb) * plane;
                               if (ai->requires_grad) {
                                 ai->ensure_grad();
                                 T* ga = ai->grad.data() + static_cast<std::int64_t>(ni) * ca * plane;
                                 for (std::int64_t i = 0; i < ca * plane; ++i) ga[i] += go[i];
                               }
                               if (bi->requires_grad) {
                                 bi->ensure_grad();
                                 T* gb = bi->grad.data() + static_cast<std::int64_t>(ni) * cb * plane;
                                 for (std::int64_t i = 0; i < cb * plane; ++i)
                                   gb[i] += go[ca * plane + i];
                               }
                             }
                           });
}

/// Sum of all elements -> scalar tensor of shape [1].
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (const T v : x.data()) acc += static_cast<double>(v);
  auto xi = x.impl_ptr();
  return make_op_output<T>({1}, {static_cast<T>(acc)}, {x}, [xi](const TensorImpl<T>& o) {
    if (!xi->requires_grad) return;
    xi->ensure_grad();
    const T g = o.grad[0];
    for (auto& v : xi->grad) v += g;
  });
}

/// Mean over the spatial dims: [N,C,H,W] -> [N,C,1,1].
template <typename T>
BasicTensor<T> spatial_mean(const BasicTensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("spatial_mean: expected 4-D, got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  std::vector<T> out(static_cast<std::size_t>(n) * c);
  for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
    double acc = 0.0;
    const T* p = x.data().data() + nc * plane;
    for (std::int64_t i = 0; i < plane; ++i) acc += static_cast<double>(p[i]);
    out[static_cast<std::size_t>(nc)] = static_cast<T>(acc / static_cast<double>(plane));
  }
  auto xi = x.impl_ptr();
  return make_op_output<T>({n, c, 1, 1}, std::move(out), {x},
                           [xi, n, c, plane](const TensorImpl<T>& o) {
                             if (!xi->requires_grad) return;
                             xi->ensure_grad();
                             for (std::int64_t nc = 0; nc < static_cast<std::int64_t>(n) * c; ++nc) {
                               const T g = o.grad[static_cast<std::size_t>(nc)] /
                                           static_cast<T>(plane);
                               T* gp = xi->grad.data() + nc * plane;
                               for (std::int64_t i = 0; i < plane; ++i) gp[i] += g;
                             }
                           });
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Reverse-mode sweep from a scalar loss. Gradients accumulate; callers zero
/// them between steps.
template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative postorder DFS over the subgraph that requires grad.
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> visited;
  struct Frame {
    TensorImpl<T>* impl;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.impl(), 0});
  visited.insert(loss.impl());
  while (!stack.empty()) {
    Frame& f = stack.back();
    GradNode<T>* node = f.impl->node.get();
    const std::size_t nparents = node ? node->parents.size() : 0;
    if (f.next_child < nparents) {
      TensorImpl<T>* p = node->parents[f.next_child++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.impl);
      stack.pop_back();
    }
  }

  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* impl = *it;
    if (impl->node && !impl->grad.empty()) impl->node->backward(*impl);
  }
}

}  // namespace lf
