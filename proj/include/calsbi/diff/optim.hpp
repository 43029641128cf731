#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "calsbi/diff/value.hpp"

namespace calsbi::diff {

struct NamedParameter {
  std::string name;
  Value value;
};

using ParameterList = std::vector<NamedParameter>;

inline void zero_grads(ParameterList& params) {
  for (auto& p : params) p.value.zero_grad();
}

// Global L2 norm over every gradient; parameters without a gradient count as zero.
inline double grad_norm(const ParameterList& params) {
  double s = 0.0;
  for (const auto& p : params)
    for (double g : p.value.grad()) s += g * g;
  return std::sqrt(s);
}

// Rescales all gradients so that their global norm is at most max_norm.
// Returns the norm measured before clipping.
inline double clip_grad_norm(ParameterList& params, double max_norm) {
  const double norm = grad_norm(params);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params)
      for (double& g : p.value.mutable_grad()) g *= f;
  }
  return norm;
}

struct AdamWOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay and bias-corrected moments.
class AdamW {
 public:
  explicit AdamW(AdamWOptions options = {}) : opt_(options) {}

  const AdamWOptions& options() const { return opt_; }
  std::size_t step_count() const { return step_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

  void step(ParameterList& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value.numel(), 0.0);
        v_.emplace_back(p.value.numel(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw ShapeError("AdamW: parameter list changed between steps");
    for (const auto& p : params) {
      for (double g : p.value.grad()) {
        if (!std::isfinite(g)) throw NumericError("AdamW: non-finite gradient in parameter '" + p.name + "'");
      }
    }

    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(opt_.beta1, t);
    const double bc2 = 1.0 - std::pow(opt_.beta2, t);
    const double decay = 1.0 - opt_.learning_rate * opt_.weight_decay;
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto data = params[k].value.mutable_data();
      auto grad = params[k].value.grad();
      auto& m = m_[k];
      auto& v = v_[k];
      if (m.size() != data.size()) throw ShapeError("AdamW: shape of '" + params[k].name + "' changed");
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g;
        v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g * g;
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        data[i] = data[i] * decay - opt_.learning_rate * mhat / (std::sqrt(vhat) + opt_.epsilon);
      }
    }
  }

 private:
  AdamWOptions opt_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t step_ = 0;
};

}  // namespace calsbi::diff
