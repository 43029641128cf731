#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "calsbi/density.hpp"
#include "calsbi/estimators/oracles.hpp"
#include "calsbi/problems/grid.hpp"

namespace calsbi {

// Single source of truth for every toy-problem constant.
namespace registry {
inline constexpr double kGaussianLinearSigma = 0.5;
inline constexpr std::size_t kGaussianLinearDim = 2;
inline constexpr double kGaussianLinearGridHalfWidth = 6.0;

inline constexpr double kNonlinearSigma = 0.2;
inline constexpr double kNonlinearPriorHalfWidth = 2.0;

inline constexpr std::array<double, 2> kMixtureWeights{0.7, 0.3};
inline constexpr std::array<double, 2> kMixtureMeans{-1.0, 1.5};
inline constexpr std::array<double, 2> kMixtureBlackSigma{0.9, 0.4};
inline constexpr std::array<double, 2> kMixtureRedSigma{0.7, 0.2};
inline constexpr double kMixtureHalfWidth = 6.0;

inline const std::vector<std::string>& problem_ids() {
  static const std::vector<std::string> ids{"gaussian-linear", "nonlinear-2d", "mixture-1d-demo"};
  return ids;
}
}  // namespace registry

enum class OracleKind { analytic, grid };

struct ProblemOptions {
  bool zero_noise = false;  // debug: deterministic simulator
};

class Problem {
 public:
  virtual ~Problem() = default;
  virtual std::string id() const = 0;
  virtual const Prior& prior() const = 0;
  virtual std::size_t dim_theta() const = 0;
  virtual std::size_t dim_x() const = 0;
  virtual OracleKind oracle_kind() const = 0;
  virtual bool has_simulator() const { return true; }
  virtual std::vector<double> simulate(std::span<const double> theta, Rng& rng) const = 0;
  // log p(θ) + log p(x | θ) in closed form, up to a constant in θ.
  virtual double log_joint(std::span<const double> x, std::span<const double> theta) const = 0;
  virtual GridSpec grid(std::size_t resolution) const = 0;
};

// x = θ + ε, ε ~ N(0, σ²I), θ ~ N(0, I).
class GaussianLinearProblem final : public Problem {
 public:
  explicit GaussianLinearProblem(std::size_t dim = registry::kGaussianLinearDim,
                                 double sigma = registry::kGaussianLinearSigma, ProblemOptions opt = {})
      : dim_(dim), sigma_(sigma), opt_(opt),
        prior_(Prior::gaussian(std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0))) {}

  std::string id() const override { return "gaussian-linear"; }
  const Prior& prior() const override { return prior_; }
  std::size_t dim_theta() const override { return dim_; }
  std::size_t dim_x() const override { return dim_; }
  OracleKind oracle_kind() const override { return OracleKind::analytic; }
  double sigma() const { return sigma_; }

  std::vector<double> simulate(std::span<const double> theta, Rng& rng) const override {
    std::vector<double> x(theta.begin(), theta.end());
    for (double& v : x) {
      const double e = standard_normal(rng);
      if (!opt_.zero_noise) v += sigma_ * e;
    }
    return x;
  }

  double log_joint(std::span<const double> x, std::span<const double> theta) const override {
    double s = prior_.log_density(theta);
    for (std::size_t i = 0; i < dim_; ++i) {
      const double r = (x[i] - theta[i]) / sigma_;
      s -= 0.5 * r * r;
    }
    return s;
  }

  GridSpec grid(std::size_t resolution) const override {
    const double h = registry::kGaussianLinearGridHalfWidth;
    return {std::vector<double>(dim_, -h), std::vector<double>(dim_, h), resolution};
  }

 private:
  std::size_t dim_;
  double sigma_;
  ProblemOptions opt_;
  Prior prior_;
};

// x = (θ₁², θ₁θ₂) + ε with a uniform box prior. The map is symmetric under
// θ → −θ, so posteriors are bimodal in the sign of θ₁.
class NonlinearProblem final : public Problem {
 public:
  explicit NonlinearProblem(ProblemOptions opt = {})
      : opt_(opt),
        prior_(Prior::uniform({-registry::kNonlinearPriorHalfWidth, -registry::kNonlinearPriorHalfWidth},
                              {registry::kNonlinearPriorHalfWidth, registry::kNonlinearPriorHalfWidth})) {}

  std::string id() const override { return "nonlinear-2d"; }
  const Prior& prior() const override { return prior_; }
  std::size_t dim_theta() const override { return 2; }
  std::size_t dim_x() const override { return 2; }
  OracleKind oracle_kind() const override { return OracleKind::grid; }

  static std::array<double, 2> mean_observation(std::span<const double> t) { return {t[0] * t[0], t[0] * t[1]}; }

  std::vector<double> simulate(std::span<const double> theta, Rng& rng) const override {
    auto m = mean_observation(theta);
    std::vector<double> x(2);
    for (int i = 0; i < 2; ++i) {
      const double e = standard_normal(rng);
      x[i] = m[i] + (opt_.zero_noise ? 0.0 : registry::kNonlinearSigma * e);
    }
    return x;
  }

  double log_joint(std::span<const double> x, std::span<const double> theta) const override {
    const double lp = prior_.log_density(theta);
    if (!std::isfinite(lp)) return lp;
    auto m = mean_observation(theta);
    double s = lp;
    for (int i = 0; i < 2; ++i) {
      const double r = (x[i] - m[i]) / registry::kNonlinearSigma;
      s -= 0.5 * r * r;
    }
    return s;
  }

  GridSpec grid(std::size_t resolution) const override {
    const double h = registry::kNonlinearPriorHalfWidth;
    return {{-h, -h}, {h, h}, resolution};
  }

 private:
  ProblemOptions opt_;
  Prior prior_;
};

// Two-component 1D Gaussian mixture with shared weights and means.
struct Mixture1d {
  std::array<double, 2> weights;
  std::array<double, 2> means;
  std::array<double, 2> sigmas;

  double density(double t) const {
    double s = 0.0;
    for (int k = 0; k < 2; ++k) {
      const double z = (t - means[k]) / sigmas[k];
      s += weights[k] * std::exp(-0.5 * z * z) / (sigmas[k] * std::sqrt(2.0 * std::numbers::pi));
    }
    return s;
  }
  double log_density(double t) const { return std::log(density(t)); }

  double sample(Rng& rng) const {
    const int k = uniform01(rng) < weights[0] ? 0 : 1;
    return means[k] + sigmas[k] * standard_normal(rng);
  }
};

struct MixturePair {
  Mixture1d black;  // ground truth
  Mixture1d red;    // under-dispersed approximation
};

inline MixturePair mixture_demo_densities() {
  using namespace registry;
  return {{kMixtureWeights, kMixtureMeans, kMixtureBlackSigma}, {kMixtureWeights, kMixtureMeans, kMixtureRedSigma}};
}

// Density-only demo: the "posterior" is the black mixture for every x.
class MixtureDemoProblem final : public Problem {
 public:
  MixtureDemoProblem()
      : prior_(Prior::uniform({-registry::kMixtureHalfWidth}, {registry::kMixtureHalfWidth})),
        pair_(mixture_demo_densities()) {}

  std::string id() const override { return "mixture-1d-demo"; }
  const Prior& prior() const override { return prior_; }
  std::size_t dim_theta() const override { return 1; }
  std::size_t dim_x() const override { return 1; }
  OracleKind oracle_kind() const override { return OracleKind::grid; }
  bool has_simulator() const override { return false; }
  std::vector<double> simulate(std::span<const double>, Rng&) const override {
    throw std::logic_error("mixture-1d-demo is a density-only problem without a simulator");
  }
  double log_joint(std::span<const double>, std::span<const double> theta) const override {
    return pair_.black.log_density(theta[0]);
  }
  GridSpec grid(std::size_t resolution) const override {
    return {{-registry::kMixtureHalfWidth}, {registry::kMixtureHalfWidth}, resolution};
  }

 private:
  Prior prior_;
  MixturePair pair_;
};

inline std::unique_ptr<Problem> make_problem(const std::string& id, ProblemOptions opt = {}) {
  if (id == "gaussian-linear") return std::make_unique<GaussianLinearProblem>(registry::kGaussianLinearDim,
                                                                              registry::kGaussianLinearSigma, opt);
  if (id == "nonlinear-2d") return std::make_unique<NonlinearProblem>(opt);
  if (id == "mixture-1d-demo") return std::make_unique<MixtureDemoProblem>();
  throw std::invalid_argument("unknown problem id '" + id + "'");
}

// Conjugate Gaussian posterior; only gaussian-linear qualifies.
inline std::unique_ptr<PosteriorDensity> analytic_posterior(const Problem& problem, double width = 1.0) {
  const auto* gl = dynamic_cast<const GaussianLinearProblem*>(&problem);
  if (gl == nullptr) throw std::invalid_argument("analytic posterior unavailable for problem '" + problem.id() + "'");
  return std::make_unique<GaussianConjugatePosterior>(gl->dim_theta(), gl->sigma(), width);
}

// Brute-force posterior ∝ prior × likelihood tabulated on the problem's grid.
inline GridOracle grid_posterior(const Problem& problem, std::span<const double> x, std::size_t resolution) {
  GridSpec spec = problem.grid(resolution);
  spec.validate();
  Matrix c = spec.centers();
  std::vector<double> lv(spec.cell_count());
  for (std::size_t i = 0; i < lv.size(); ++i) lv[i] = problem.log_joint(x, row_span(c, i));
  return GridOracle::from_log_values(std::move(spec), lv);
}

// Grid-normalized closed-form posterior as a PosteriorDensity. The embedding
// carries x together with the grid log-normalizer of p(θ, x).
class GridPosterior final : public PosteriorDensity {
 public:
  GridPosterior(const Problem& problem, std::size_t resolution)
      : problem_(problem), spec_(problem.grid(resolution)) {
    spec_.validate();
    centers_ = spec_.centers();
  }

  std::size_t dim_theta() const override { return problem_.dim_theta(); }
  std::size_t dim_x() const override { return problem_.dim_x(); }
  bool normalized() const override { return true; }
  std::string name() const override { return "grid-oracle"; }

 protected:
  Value do_embed(const Value& x) const override {
    const std::size_t k = problem_.dim_x();
    std::vector<double> out(x.rows() * (k + 1));
    std::vector<double> lv(spec_.cell_count());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto xr = x.data().subspan(r * k, k);
      for (std::size_t i = 0; i < lv.size(); ++i) lv[i] = problem_.log_joint(xr, row_span(centers_, i));
      std::copy(xr.begin(), xr.end(), out.begin() + r * (k + 1));
      out[r * (k + 1) + k] = log_sum_exp(lv) + std::log(spec_.cell_volume());
    }
    return Value::constant(x.rows(), k + 1, std::move(out));
  }

  Value do_log_density(const Value& theta, const Value& emb) const override {
    const std::size_t k = problem_.dim_x(), d = problem_.dim_theta();
    std::vector<double> out(theta.rows());
    for (std::size_t r = 0; r < theta.rows(); ++r) {
      auto e = emb.data().subspan(r * (k + 1), k + 1);
      out[r] = problem_.log_joint(e.first(k), theta.data().subspan(r * d, d)) - e[k];
    }
    return Value::constant(theta.rows(), 1, std::move(out));
  }

 private:
  const Problem& problem_;
  GridSpec spec_;
  Matrix centers_;
};

}  // namespace calsbi
