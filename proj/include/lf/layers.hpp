#pragma once

#include <cmath>
#include <memory>
#include <string>

#include "lf/nn_ops.hpp"
#include "lf/params.hpp"
#include "lf/rng.hpp"

namespace lf {

enum class Mode { kTrain, kEval };

inline Tensor he_normal(std::vector<int> shape, int fan_in, Rng& rng) {
  const float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
  return Tensor::randn(std::move(shape), rng, stddev);
}

/// Conv layer owning its parameters. Layers that feed a batchnorm are built
/// without bias (the normalization cancels it).
struct Conv2dLayer {
  std::shared_ptr<Parameter> weight;
  std::shared_ptr<Parameter> bias;  // null when bias-free
  int stride = 1;
  int padding = 0;

  Conv2dLayer() = default;

  Conv2dLayer(ParamStore& store, const std::string& prefix, int cin, int cout, int ksize,
              int stride_, int padding_, bool with_bias, Rng& rng)
      : stride(stride_), padding(padding_) {
    weight = store.add(prefix + ".weight", he_normal({cout, cin, ksize, ksize},
                                                     cin * ksize * ksize, rng));
    if (with_bias) bias = store.add(prefix + ".bias", Tensor::zeros({cout}));
  }

  Tensor operator()(const Tensor& x) const {
    return bias ? conv2d(x, weight->tensor, bias->tensor, stride, padding)
                : conv2d(x, weight->tensor, stride, padding);
  }
};

/// Batchnorm layer with registered gamma/beta and running-stat buffers.
/// A frozen layer (gamma.frozen) always normalizes with running statistics
/// and never updates them, so frozen namespaces stay bit-identical.
struct BatchNorm2dLayer {
  std::shared_ptr<Parameter> gamma;
  std::shared_ptr<Parameter> beta;
  Tensor running_mean;
  Tensor running_var;
  double epsilon = 1e-5;
  double momentum = 0.9;

  BatchNorm2dLayer() = default;

  BatchNorm2dLayer(ParamStore& store, const std::string& prefix, int channels) {
    gamma = store.add(prefix + ".gamma", Tensor::ones({channels}));
    beta = store.add(prefix + ".beta", Tensor::zeros({channels}));
    running_mean = store.add_buffer(prefix + ".running_mean", Tensor::zeros({channels}));
    running_var = store.add_buffer(prefix + ".running_var", Tensor::ones({channels}));
  }

  Tensor operator()(const Tensor& x, Mode mode) const {
    BNState<float> state;
    state.running_mean = running_mean.data();
    state.running_var = running_var.data();
    const bool train = mode == Mode::kTrain && !gamma->frozen;
    Tensor y = batchnorm2d(x, gamma->tensor, beta->tensor,
                           train ? BNMode::kTrain : BNMode::kEval, state, epsilon, momentum);
    if (train) {
      running_mean.mutable_data() = state.running_mean;
      running_var.mutable_data() = state.running_var;
    }
    return y;
  }
};

/// conv3x3 (same padding) + batchnorm + relu.
struct ConvBnRelu {
  Conv2dLayer conv;
  BatchNorm2dLayer bn;

  ConvBnRelu() = default;

  ConvBnRelu(ParamStore& store, const std::string& prefix, int cin, int cout, Rng& rng,
             int ksize = 3) {
    conv = Conv2dLayer(store, prefix + ".conv", cin, cout, ksize, 1, (ksize - 1) / 2, false, rng);
    bn = BatchNorm2dLayer(store, prefix + ".bn", cout);
  }

  Tensor operator()(const Tensor& x, Mode mode) const { return relu(bn(conv(x), mode)); }
};

}  // namespace lf
