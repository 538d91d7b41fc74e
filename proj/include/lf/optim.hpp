#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "lf/params.hpp"

namespace lf {

/// Adam with bias correction. Keeps one (m, v, t) slot per parameter; frozen
/// parameters are skipped entirely, leaving data and slot untouched.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr <= 0.0) throw ConfigError("Adam: learning rate must be positive, got " + std::to_string(lr));
  }

  double lr() const { return lr_; }
  void set_lr(double lr) {
    if (lr <= 0.0) throw ConfigError("Adam: learning rate must be positive, got " + std::to_string(lr));
    lr_ = lr;
  }

  void step(const ParamStore& store) { step(store.params()); }

  void step(const std::vector<std::shared_ptr<Parameter>>& params) {
    for (const auto& p : params) {
      if (p->frozen || !p->tensor.has_grad()) continue;
      Slot& slot = slot_for(*p);
      slot.t += 1;
      const double bc1 = 1.0 - std::pow(beta1_, slot.t);
      const double bc2 = 1.0 - std::pow(beta2_, slot.t);
      auto& data = p->tensor.mutable_data();
      const auto& grad = p->tensor.grad();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * g;
        slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * g * g;
        const double mhat = slot.m[i] / bc1;
        const double vhat = slot.v[i] / bc2;
        data[i] = static_cast<float>(static_cast<double>(data[i]) -
                                     lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  /// Drops all moment state; the next step starts from t = 0.
  void reset() { slots_.clear(); }

 private:
  struct Slot {
    std::vector<double> m, v;
    long t = 0;
  };

  Slot& slot_for(const Parameter& p) {
    auto it = slots_.find(p.name);
    if (it == slots_.end()) {
      Slot s;
      s.m.assign(static_cast<std::size_t>(p.tensor.numel()), 0.0);
      s.v.assign(static_cast<std::size_t>(p.tensor.numel()), 0.0);
      it = slots_.emplace(p.name, std::move(s)).first;
    }
    return it->second;
  }

  double lr_, beta1_, beta2_, eps_;
  std::unordered_map<std::string, Slot> slots_;
};

}  // namespace lf
