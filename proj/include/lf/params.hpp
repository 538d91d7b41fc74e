#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lf/tensor.hpp"

namespace lf {

/// Named trainable tensor. Frozen parameters are skipped by optimizer steps.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;
};

/// Ordered, name-unique registry of a model's parameters and buffers.
/// Buffers (batchnorm running statistics) are serialized with checkpoints but
/// never receive gradients.
class ParamStore {
 public:
  std::shared_ptr<Parameter> add(const std::string& name, Tensor tensor) {
    if (by_name_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    tensor.set_requires_grad(true);
    auto p = std::make_shared<Parameter>(Parameter{name, std::move(tensor), false});
    by_name_[name] = params_.size();
    params_.push_back(p);
    return p;
  }

  Tensor add_buffer(const std::string& name, Tensor tensor) {
    if (buffer_by_name_.count(name)) throw ConfigError("duplicate buffer name: " + name);
    buffer_by_name_[name] = buffers_.size();
    buffers_.emplace_back(name, tensor);
    return tensor;
  }

  const std::vector<std::shared_ptr<Parameter>>& params() const { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& buffers() const { return buffers_; }

  std::shared_ptr<Parameter> find(const std::string& name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : params_[it->second];
  }

  Tensor find_buffer(const std::string& name) const {
    auto it = buffer_by_name_.find(name);
    return it == buffer_by_name_.end() ? Tensor() : buffers_[it->second].second;
  }

  /// Sets the frozen flag on every parameter whose name starts with `prefix`.
  /// Throws if the prefix matches nothing (guards against silent typos).
  int freeze_namespace(const std::string& prefix, bool frozen) {
    int count = 0;
    for (auto& p : params_) {
      if (p->name.rfind(prefix, 0) == 0) {
        p->frozen = frozen;
        ++count;
      }
    }
    if (count == 0) throw ConfigError("freeze_namespace: no parameter matches prefix '" + prefix + "'");
    return count;
  }

  void unfreeze_all() {
    for (auto& p : params_) p->frozen = false;
  }

  void zero_grad() {
    for (auto& p : params_) p->tensor.zero_grad();
  }

  std::size_t total_parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->tensor.numel());
    return n;
  }

 private:
  std::vector<std::shared_ptr<Parameter>> params_;
  std::vector<std::pair<std::string, Tensor>> buffers_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::unordered_map<std::string, std::size_t> buffer_by_name_;
};

}  // namespace lf
