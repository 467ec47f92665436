#pragma once

#include <string>
#include <vector>

#include "mars/tensor.hpp"

namespace mars {

template <typename S>
struct AdamConfig {
  S lr = S(1e-3);
  S beta1 = S(0.9);
  S beta2 = S(0.999);
  S eps = S(1e-8);
};

/// Adam with bias correction. Moment arrays are kept per parameter in the
/// order the parameters were registered; the step counter strictly increases.
template <typename S>
class Adam {
 public:
  Adam(std::vector<Tensor<S>> params, AdamConfig<S> config = {})
      : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
      if (!p.requires_grad()) throw ContractError("Adam: parameter does not require grad");
      m_.push_back(VectorX<S>::Zero(p.numel()));
      v_.push_back(VectorX<S>::Zero(p.numel()));
    }
  }

  /// One update using the gradients currently stored on the parameters.
  void step() {
    ++step_count_;
    const S bc1 = S(1) - std::pow(config_.beta1, S(step_count_));
    const S bc2 = S(1) - std::pow(config_.beta2, S(step_count_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].has_grad()) {
        throw ContractError("Adam::step: missing gradient for parameter " + std::to_string(i));
      }
      const VectorX<S>& g = params_[i].grad();
      m_[i] = config_.beta1 * m_[i] + (S(1) - config_.beta1) * g;
      v_[i] = config_.beta2 * v_[i] + (S(1) - config_.beta2) * g.cwiseProduct(g);
      VectorX<S>& x = params_[i].mutable_values();
      x.array() -= config_.lr * (m_[i].array() / bc1) /
                   ((v_[i].array() / bc2).sqrt() + config_.eps);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::uint64_t step_count() const { return step_count_; }
  const std::vector<Tensor<S>>& params() const { return params_; }
  const VectorX<S>& first_moment(std::size_t i) const { return m_[i]; }
  const VectorX<S>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor<S>> params_;
  AdamConfig<S> config_;
  std::vector<VectorX<S>> m_;
  std::vector<VectorX<S>> v_;
  std::uint64_t step_count_ = 0;
};

}  // namespace mars
