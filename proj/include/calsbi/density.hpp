#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "calsbi/diff/ops.hpp"
#include "calsbi/rng.hpp"

namespace calsbi {

using diff::Value;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

inline Value to_value(const Matrix& m) {
  return Value::constant(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()),
                         std::vector<double>(m.data(), m.data() + m.size()));
}

inline Matrix to_matrix(const Value& v) {
  Matrix m(v.rows(), v.cols());
  std::copy(v.data().begin(), v.data().end(), m.data());
  return m;
}

inline Value row_value(std::span<const double> row) {
  return Value::constant(1, row.size(), std::vector<double>(row.begin(), row.end()));
}

inline std::span<const double> row_span(const Matrix& m, Eigen::Index i) {
  return {m.data() + i * m.cols(), static_cast<std::size_t>(m.cols())};
}

// Parameter prior. Uniform boxes are -inf off support.
class Prior {
 public:
  enum class Kind { uniform_box, diagonal_gaussian };

  static Prior uniform(std::vector<double> low, std::vector<double> high) {
    if (low.size() != high.size() || low.empty()) throw std::invalid_argument("uniform prior: bad bounds");
    for (std::size_t i = 0; i < low.size(); ++i)
      if (!(low[i] < high[i])) throw std::invalid_argument("uniform prior: low must be below high in every dimension");
    return Prior(Kind::uniform_box, std::move(low), std::move(high));
  }

  static Prior gaussian(std::vector<double> mean, std::vector<double> scale) {
    if (mean.size() != scale.size() || mean.empty()) throw std::invalid_argument("gaussian prior: bad parameters");
    for (double s : scale)
      if (!(s > 0)) throw std::invalid_argument("gaussian prior: scale must be positive");
    return Prior(Kind::diagonal_gaussian, std::move(mean), std::move(scale));
  }

  Kind kind() const { return kind_; }
  std::size_t dim() const { return a_.size(); }
  // low/mean and high/scale depending on kind.
  const std::vector<double>& first() const { return a_; }
  const std::vector<double>& second() const { return b_; }

  bool contains(std::span<const double> theta) const {
    if (kind_ == Kind::diagonal_gaussian) return true;
    for (std::size_t i = 0; i < dim(); ++i)
      if (theta[i] < a_[i] || theta[i] > b_[i]) return false;
    return true;
  }

  double log_density(std::span<const double> theta) const {
    if (kind_ == Kind::uniform_box) return contains(theta) ? log_uniform_ : -std::numeric_limits<double>::infinity();
    double s = log_norm_;
    for (std::size_t i = 0; i < dim(); ++i) {
      const double z = (theta[i] - a_[i]) / b_[i];
      s -= 0.5 * z * z;
    }
    return s;
  }

  // Per-row log density of theta [M, d] as [M, 1].
  Value log_density(const Value& theta) const {
    if (theta.cols() != dim()) throw ShapeError("prior log_density: expected " + std::to_string(dim()) + " columns");
    if (kind_ == Kind::uniform_box) {
      std::vector<double> out(theta.rows());
      for (std::size_t i = 0; i < theta.rows(); ++i) out[i] = log_density(theta.data().subspan(i * dim(), dim()));
      return Value::constant(theta.rows(), 1, std::move(out));
    }
    Value mu = Value::constant(1, dim(), a_);
    std::vector<double> inv(dim());
    for (std::size_t i = 0; i < dim(); ++i) inv[i] = 1.0 / b_[i];
    Value z = diff::mul(diff::sub(theta, mu), Value::constant(1, dim(), inv));
    return diff::shift(diff::scale(diff::sum(diff::square(z), 1), -0.5), log_norm_);
  }

  std::vector<double> sample(Rng& rng) const {
    std::vector<double> t(dim());
    for (std::size_t i = 0; i < dim(); ++i) {
      if (kind_ == Kind::uniform_box)
        t[i] = a_[i] + (b_[i] - a_[i]) * uniform01(rng);
      else
        t[i] = a_[i] + b_[i] * standard_normal(rng);
    }
    return t;
  }

  Matrix sample(Rng& rng, std::size_t count) const {
    Matrix m(count, dim());
    for (std::size_t r = 0; r < count; ++r) {
      auto t = sample(rng);
      for (std::size_t i = 0; i < dim(); ++i) m(r, i) = t[i];
    }
    return m;
  }

 private:
  Prior(Kind k, std::vector<double> a, std::vector<double> b) : kind_(k), a_(std::move(a)), b_(std::move(b)) {
    if (kind_ == Kind::uniform_box) {
      double vol = 0.0;
      for (std::size_t i = 0; i < a_.size(); ++i) vol += std::log(b_[i] - a_[i]);
      log_uniform_ = -vol;
    } else {
      log_norm_ = -0.5 * kLog2Pi * static_cast<double>(a_.size());
      for (double s : b_) log_norm_ -= std::log(s);
    }
  }

  Kind kind_;
  std::vector<double> a_, b_;
  double log_uniform_ = 0.0;
  double log_norm_ = 0.0;
};

// Instrumentation for embedding reuse. Counts rows, not calls.
struct EvalCounters {
  std::size_t embedded_rows = 0;
  std::size_t embed_calls = 0;
  std::size_t density_rows = 0;
};

// Evaluable, possibly unnormalized, conditional density p̂(θ | x).
//
// Evaluation is split in two: `embed` maps observations to a conditioning
// embedding, and `log_density` consumes one embedding row per θ row. A single
// embedding may be gathered and reused for many θ sharing the same x; the
// result is bit-identical to embedding each row separately.
class PosteriorDensity {
 public:
  virtual ~PosteriorDensity() = default;

  virtual std::size_t dim_theta() const = 0;
  virtual std::size_t dim_x() const = 0;
  virtual bool normalized() const = 0;
  virtual std::string name() const = 0;

  Value embed(const Value& x) const {
    if (x.cols() != dim_x()) throw ShapeError(name() + " embed: expected " + std::to_string(dim_x()) + " columns");
    counters_.embed_calls += 1;
    counters_.embedded_rows += x.rows();
    return do_embed(x);
  }

  Value log_density(const Value& theta, const Value& embedding) const {
    if (theta.cols() != dim_theta() || theta.rows() != embedding.rows()) {
      throw ShapeError(name() + " log_density: theta " + diff::shape_str(theta.shape()) + " with embedding " +
                       diff::shape_str(embedding.shape()));
    }
    counters_.density_rows += theta.rows();
    return do_log_density(theta, embedding);
  }

  Value log_density_direct(const Value& theta, const Value& x) const { return log_density(theta, embed(x)); }

  // Many θ rows against a single observation, embedding evaluated once.
  std::vector<double> log_density_at(const Matrix& theta, std::span<const double> x) const {
    Value e = embed(row_value(x));
    Value rep = diff::gather_rows(e, std::vector<std::size_t>(static_cast<std::size_t>(theta.rows()), 0));
    Value lp = log_density(to_value(theta), rep);
    return {lp.data().begin(), lp.data().end()};
  }

  virtual bool can_sample() const { return false; }
  virtual Matrix sample(std::span<const double> /*x*/, Rng& /*rng*/, std::size_t /*count*/) const {
    throw std::logic_error(name() + " does not support sampling");
  }

  const EvalCounters& counters() const { return counters_; }
  void reset_counters() const { counters_ = {}; }

 protected:
  virtual Value do_embed(const Value& x) const = 0;
  virtual Value do_log_density(const Value& theta, const Value& embedding) const = 0;

 private:
  mutable EvalCounters counters_;
};

// The prior viewed as a posterior that ignores x.
class PriorPosterior final : public PosteriorDensity {
 public:
  PriorPosterior(Prior prior, std::size_t dim_x) : prior_(std::move(prior)), dim_x_(dim_x) {}

  std::size_t dim_theta() const override { return prior_.dim(); }
  std::size_t dim_x() const override { return dim_x_; }
  bool normalized() const override { return true; }
  std::string name() const override { return "prior"; }
  bool can_sample() const override { return true; }
  Matrix sample(std::span<const double>, Rng& rng, std::size_t count) const override {
    return prior_.sample(rng, count);
  }

 protected:
  Value do_embed(const Value& x) const override { return Value::constant(x.rows(), 0, std::vector<double>{}); }
  Value do_log_density(const Value& theta, const Value&) const override { return prior_.log_density(theta); }

 private:
  Prior prior_;
  std::size_t dim_x_;
};

// Importance-sampling proposal I(θ), optionally conditioned on x.
class Proposal {
 public:
  virtual ~Proposal() = default;
  virtual std::string id() const = 0;
  virtual Matrix sample(std::span<const double> x, Rng& rng, std::size_t count) const = 0;
  virtual std::vector<double> log_density(const Matrix& theta, std::span<const double> x) const = 0;
};

class PriorProposal final : public Proposal {
 public:
  explicit PriorProposal(Prior prior) : prior_(std::move(prior)) {}
  std::string id() const override { return "prior"; }
  Matrix sample(std::span<const double>, Rng& rng, std::size_t count) const override {
    return prior_.sample(rng, count);
  }
  std::vector<double> log_density(const Matrix& theta, std::span<const double>) const override {
    std::vector<double> out(theta.rows());
    for (Eigen::Index i = 0; i < theta.rows(); ++i) out[i] = prior_.log_density(row_span(theta, i));
    return out;
  }
  const Prior& prior() const { return prior_; }

 private:
  Prior prior_;
};

// Uses a normalized, samplable density as the proposal.
class DensityProposal final : public Proposal {
 public:
  explicit DensityProposal(const PosteriorDensity& density) : density_(density) {
    if (!density.can_sample() || !density.normalized()) {
      throw std::invalid_argument("proposal density must be normalized and samplable");
    }
  }
  std::string id() const override { return "density:" + density_.name(); }
  Matrix sample(std::span<const double> x, Rng& rng, std::size_t count) const override {
    return density_.sample(x, rng, count);
  }
  std::vector<double> log_density(const Matrix& theta, std::span<const double> x) const override {
    return density_.log_density_at(theta, x);
  }

 private:
  const PosteriorDensity& density_;
};

}  // namespace calsbi
