#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "calsbi/covreg.hpp"
#include "calsbi/diff/optim.hpp"

// Relaxed surrogate of the regularizer used as a finite-difference oracle.
//
// Around a base point the straight-through indicator equals
//   1[u₀ > 0] + HardTanh(u/τ) − HardTanh(u₀/τ),
// which has the same value at u = u₀ and a true derivative equal to the STE
// backward. The sort permutation is frozen at the base point as well, so
// central differences of this function check exactly what backward computes.
namespace calsbi::testing {

inline diff::Value hard_tanh(const diff::Value& v) {
  return diff::shift(diff::sub(diff::relu(diff::shift(v, 1.0)), diff::relu(diff::shift(v, -1.0))), -1.0);
}

// Written as c + (HardTanh(u/τ) − HardTanh(u₀/τ)) so that the value at u₀ is
// exactly 1[u₀ > 0]; an ulp of drift would reorder tied α̂ in the sort.
inline diff::Value relaxed_indicator(const diff::Value& u, const std::vector<double>& u0, double tau) {
  diff::Value base = diff::Value::constant(u.rows(), u.cols(), u0);
  diff::Value ht0 = hard_tanh(diff::scale(base, 1.0 / tau));
  std::vector<double> c(u0.size());
  for (std::size_t k = 0; k < u0.size(); ++k) c[k] = u0[k] > 0 ? 1.0 : 0.0;
  return diff::add(diff::sub(hard_tanh(diff::scale(u, 1.0 / tau)), ht0),
                   diff::Value::constant(u.rows(), u.cols(), std::move(c)));
}

struct SurrogateBase {
  std::vector<double> u0;          // p̂* − p̂_j per (i, j)
  std::vector<std::size_t> perm;   // ascending order of α̂ (sorting form)
  std::vector<double> v0;          // α̂_i − α_k per (i, k) (direct form)
};

inline diff::Value surrogate_loss(const PosteriorDensity& posterior, const Matrix& theta, const Matrix& x,
                                  const covreg::ProposalDraws& draws, const covreg::RegConfig& cfg,
                                  SurrogateBase* base) {
  using diff::Value;
  const auto n = static_cast<std::size_t>(theta.rows());
  auto t = covreg::evaluate_densities(posterior, theta, x, draws);
  Value u = diff::sub(t.p_star, t.p_samples);
  const bool capture = base->u0.empty();
  if (capture) base->u0.assign(u.data().begin(), u.data().end());
  Value q = Value::constant(n, draws.samples, draws.density);
  auto batch = covreg::weighted_rank(t.p_samples, q, relaxed_indicator(u, base->u0, cfg.temperature));
  Value alpha = batch.alpha;

  if (cfg.loss_form == covreg::LossForm::sorting) {
    if (capture) {
      base->perm.resize(n);
      std::iota(base->perm.begin(), base->perm.end(), 0);
      const auto a = alpha.data();
      std::stable_sort(base->perm.begin(), base->perm.end(), [&](std::size_t i, std::size_t j) { return a[i] < a[j]; });
    }
    std::vector<double> grid(n);
    for (std::size_t i = 0; i < n; ++i) grid[i] = static_cast<double>(i + 1) / static_cast<double>(n);
    Value gap = diff::sub(Value::constant(n, 1, std::move(grid)), diff::gather_rows(alpha, base->perm));
    if (cfg.mode == covreg::RegMode::conservative) gap = diff::relu(gap);
    return diff::mean(diff::square(gap));
  }

  const std::size_t m = cfg.levels.size();
  Value lv = Value::constant(1, m, cfg.levels);
  Value v = diff::sub(alpha, lv);
  if (capture) base->v0.assign(v.data().begin(), v.data().end());
  Value above = relaxed_indicator(v, base->v0, cfg.temperature);
  Value ecdf = diff::sub(Value::constant(1, m, 1.0), diff::scale(diff::sum(above, 0), 1.0 / static_cast<double>(n)));
  Value gap = diff::sub(ecdf, lv);
  if (cfg.mode == covreg::RegMode::conservative) gap = diff::relu(gap);
  return diff::sum(diff::square(gap));
}

struct SurrogateCheck {
  double max_error = 0.0;       // |g − fd| / max(|g|, |fd|, floor) over all parameters
  double value_mismatch = 0.0;  // |R − surrogate| at the base point, should be 0
  std::size_t checked = 0;
  std::size_t nonzero = 0;      // analytic gradient entries above the floor
};

// Backward of the real regularizer against central differences of the
// relaxed surrogate, for every element of `params`.
inline SurrogateCheck regularizer_surrogate_check(const PosteriorDensity& posterior, diff::ParameterList params,
                                                  const Matrix& theta, const Matrix& x, const covreg::RegConfig& cfg,
                                                  const Proposal& proposal, std::uint64_t seed, double floor = 1e-5) {
  SurrogateCheck out;
  diff::zero_grads(params);
  Rng r1(seed);
  auto reg = covreg::regularizer(posterior, theta, x, cfg, proposal, r1);
  reg.loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    auto g = p.value.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(p.value.numel(), 0.0);
  }

  diff::NoGradGuard no_grad;
  Rng r2(seed);
  const auto draws = covreg::draw_proposals(x, proposal, cfg.samples, r2);
  SurrogateBase base;
  out.value_mismatch = std::abs(surrogate_loss(posterior, theta, x, draws, cfg, &base).item() - reg.loss.item());
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto data = params[k].value.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      const double a = analytic[k][i];
      // Best of several steps: rows sitting exactly on a rectifier kink give
      // O(h) truncation error, rounding noise grows like 1/h.
      double err = std::numeric_limits<double>::infinity();
      for (double h : {1e-5, 1e-6, 1e-7, 1e-8}) {
        data[i] = orig + h;
        const double up = surrogate_loss(posterior, theta, x, draws, cfg, &base).item();
        data[i] = orig - h;
        const double down = surrogate_loss(posterior, theta, x, draws, cfg, &base).item();
        data[i] = orig;
        const double fd = (up - down) / (2 * h);
        err = std::min(err, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), floor}));
      }
      out.max_error = std::max(out.max_error, err);
      out.nonzero += std::abs(a) > floor ? 1 : 0;
      ++out.checked;
    }
  }
  return out;
}

}  // namespace calsbi::testing
