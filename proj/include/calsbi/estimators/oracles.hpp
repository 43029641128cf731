#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "calsbi/density.hpp"

namespace calsbi {

// Conjugate posterior of x = θ + ε, ε ~ N(0, σ²I), θ ~ N(0, I):
// N(x / (1 + σ²), σ² / (1 + σ²) I). `width` multiplies the posterior standard
// deviation, giving deliberately under- (< 1) or over-dispersed (> 1) variants.
class GaussianConjugatePosterior final : public PosteriorDensity {
 public:
  GaussianConjugatePosterior(std::size_t dim, double noise_sigma, double width = 1.0)
      : dim_(dim), sigma_(noise_sigma), width_(width) {
    if (!(noise_sigma > 0) || !(width > 0)) throw std::invalid_argument("conjugate posterior: sigma and width must be positive");
    const double s2 = sigma_ * sigma_;
    shrink_ = 1.0 / (1.0 + s2);
    sd_ = width_ * std::sqrt(s2 / (1.0 + s2));
  }

  std::size_t dim_theta() const override { return dim_; }
  std::size_t dim_x() const override { return dim_; }
  bool normalized() const override { return true; }
  std::string name() const override { return width_ == 1.0 ? "analytic" : "analytic-scaled"; }
  double posterior_sd() const { return sd_; }
  double shrinkage() const { return shrink_; }

  std::vector<double> mean(std::span<const double> x) const {
    std::vector<double> m(x.begin(), x.end());
    for (double& v : m) v *= shrink_;
    return m;
  }

  bool can_sample() const override { return true; }
  Matrix sample(std::span<const double> x, Rng& rng, std::size_t count) const override {
    Matrix out(count, dim_);
    for (std::size_t r = 0; r < count; ++r)
      for (std::size_t i = 0; i < dim_; ++i) out(r, i) = shrink_ * x[i] + sd_ * standard_normal(rng);
    return out;
  }

 protected:
  // The embedding is the posterior mean.
  Value do_embed(const Value& x) const override { return diff::scale(x, shrink_); }

  Value do_log_density(const Value& theta, const Value& mean) const override {
    Value z = diff::scale(diff::sub(theta, mean), 1.0 / sd_);
    const double c = -static_cast<double>(dim_) * (0.5 * kLog2Pi + std::log(sd_));
    return diff::shift(diff::scale(diff::sum(diff::square(z), 1), -0.5), c);
  }

 private:
  std::size_t dim_;
  double sigma_, width_, shrink_, sd_;
};

}  // namespace calsbi
