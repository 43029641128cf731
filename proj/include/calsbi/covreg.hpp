#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "calsbi/density.hpp"
#include "calsbi/diff/ops.hpp"

// Differentiable coverage regularizer.
//
// For every (θ*, x*) in a batch the rank statistic
//
//   α̂ = Σ_j w_j 1[p̂(θ_j|x*) < p̂(θ*|x*)] / Σ_j w_j,   w_j = p̂(θ_j|x*) / I(θ_j),
//
// is estimated with self-normalized importance sampling from a proposal I.
// Because the comparison is between densities at the same x* and the weights
// are normalized, α̂ is unchanged by any per-x* rescaling of p̂, which is what
// makes unnormalized ratio estimators usable here. An accurate posterior has
// uniformly distributed α̂; the losses below penalize departures of the sorted
// α̂ from the uniform grid i/N (or the ECDF from the identity at fixed levels).
// Indicators use a hard forward pass and a Hard-Tanh straight-through backward.
namespace calsbi::covreg {

using diff::Value;

enum class RegMode { calibration, conservative };
enum class LossForm { sorting, direct };

inline std::string to_string(RegMode m) { return m == RegMode::calibration ? "calibration" : "conservative"; }
inline std::string to_string(LossForm f) { return f == LossForm::sorting ? "sorting" : "direct"; }

inline RegMode parse_mode(const std::string& s) {
  if (s == "calibration") return RegMode::calibration;
  if (s == "conservative") return RegMode::conservative;
  throw std::invalid_argument("unknown regularizer mode '" + s + "'");
}

inline LossForm parse_loss_form(const std::string& s) {
  if (s == "sorting") return LossForm::sorting;
  if (s == "direct") return LossForm::direct;
  throw std::invalid_argument("unknown loss form '" + s + "'");
}

// `count` evenly spaced levels on [lo, hi].
inline std::vector<double> evenly_spaced_levels(std::size_t count, double lo = 0.05, double hi = 0.95) {
  if (count == 0) return {};
  if (count == 1) return {0.5 * (lo + hi)};
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k) out[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
  return out;
}

struct RegConfig {
  RegMode mode = RegMode::conservative;
  LossForm loss_form = LossForm::sorting;
  double lambda = 5.0;
  std::size_t samples = 16;  // L
  double temperature = 1.0;  // STE band on raw density differences
  double sort_strength = 0.0;  // 0: exact sort
  std::vector<double> levels = evenly_spaced_levels(19);  // direct form only
  bool reuse_embedding = true;

  void validate() const {
    if (samples < 1) throw std::invalid_argument("regularizer: L must be at least 1");
    if (!(lambda >= 0)) throw std::invalid_argument("regularizer: lambda must be non-negative");
    if (!(temperature > 0)) throw std::invalid_argument("regularizer: temperature must be positive");
    if (!(sort_strength >= 0)) throw std::invalid_argument("regularizer: sort strength must be non-negative");
    if (loss_form == LossForm::direct) {
      if (levels.empty()) throw std::invalid_argument("regularizer: direct form needs at least one level");
      for (double a : levels)
        if (!(a > 0 && a < 1)) throw std::invalid_argument("regularizer: levels must lie strictly inside (0, 1)");
    }
  }
};

// Forward 1[u > 0]; backward d/du HardTanh(u / τ), i.e. 1/τ inside |u| ≤ τ
// and 0 outside.
inline Value ste_indicator(const Value& u, double tau) {
  if (!(tau > 0)) throw std::invalid_argument("ste_indicator: temperature must be positive");
  const auto& x = u.node()->data;
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = x[k] > 0 ? 1.0 : 0.0;
  return diff::make_result("ste_indicator", u.rows(), u.cols(), std::move(out), {u.node()}, [tau](diff::Node& self) {
    diff::Node& p = *self.parents[0];
    for (std::size_t k = 0; k < self.grad.size(); ++k)
      if (std::abs(p.data[k] / tau) <= 1.0) p.grad[k] += self.grad[k] / tau;
  });
}

struct RankStatisticBatch {
  Value alpha;  // [N, 1]
  std::size_t samples = 0;
  std::string proposal;
  std::vector<double> weight_sums;
  std::size_t degenerate = 0;
};

// α̂ from raw densities given the indicator matrix 1[p̂* > p̂_j]: nominal
// [N, 1], proposal draws [N, L], proposal densities I [N, L], indicators
// [N, L]. Rows whose weights all vanish yield α̂ = 0.
inline RankStatisticBatch weighted_rank(const Value& p_samples, const Value& proposal_density, const Value& indicator) {
  if (p_samples.rows() != proposal_density.rows() || p_samples.cols() != proposal_density.cols() ||
      indicator.rows() != p_samples.rows() || indicator.cols() != p_samples.cols()) {
    throw ShapeError("rank statistic: shapes " + diff::shape_str(p_samples.shape()) + ", " +
                     diff::shape_str(proposal_density.shape()) + ", " + diff::shape_str(indicator.shape()));
  }
  Value w = diff::div(p_samples, proposal_density);
  Value num = diff::sum(diff::mul(w, indicator), 1);
  Value den = diff::sum(w, 1);
  Value degenerate = diff::equal(den, Value::scalar(0.0));
  RankStatisticBatch out;
  out.alpha = diff::div(num, diff::add(den, degenerate));
  out.samples = p_samples.cols();
  out.weight_sums.assign(den.data().begin(), den.data().end());
  for (double d : degenerate.data()) out.degenerate += d > 0 ? 1 : 0;
  return out;
}

inline RankStatisticBatch rank_statistic(const Value& p_star, const Value& p_samples, const Value& proposal_density,
                                         double tau) {
  if (p_star.cols() != 1 || p_star.rows() != p_samples.rows()) {
    throw ShapeError("rank statistic: nominal " + diff::shape_str(p_star.shape()) + " against samples " +
                     diff::shape_str(p_samples.shape()));
  }
  return weighted_rank(p_samples, proposal_density, ste_indicator(diff::sub(p_star, p_samples), tau));
}

// L proposal draws per observation; row i uses substream i of a seed taken
// from `rng`. Points are [N·L, d] grouped by observation.
struct ProposalDraws {
  Matrix points;
  std::vector<double> density;  // I(θ_j), same order as points
  std::size_t samples = 0;
  std::string id;
};

inline ProposalDraws draw_proposals(const Matrix& x, const Proposal& proposal, std::size_t samples, Rng& rng) {
  if (samples < 1) throw std::invalid_argument("rank statistic: L must be at least 1");
  const auto n = static_cast<std::size_t>(x.rows());
  const std::uint64_t call_seed = rng();
  ProposalDraws out;
  out.samples = samples;
  out.id = proposal.id();
  out.density.resize(n * samples);
  for (std::size_t i = 0; i < n; ++i) {
    Rng sub = substream(call_seed, i);
    auto xi = row_span(x, static_cast<Eigen::Index>(i));
    Matrix draws = proposal.sample(xi, sub, samples);
    if (i == 0) out.points.resize(static_cast<Eigen::Index>(n * samples), draws.cols());
    auto lq = proposal.log_density(draws, xi);
    out.points.middleRows(static_cast<Eigen::Index>(i * samples), static_cast<Eigen::Index>(samples)) = draws;
    for (std::size_t j = 0; j < samples; ++j) out.density[i * samples + j] = std::exp(lq[j]);
  }
  return out;
}

struct DensityTable {
  Value p_star;     // [N, 1]
  Value p_samples;  // [N, L]
};

// Densities of θ* and of every draw under p̂(· | x*). Each x* is embedded once
// and the embedding is reused for θ* and its L draws, unless
// `reuse_embedding` is false, which embeds every row separately and exists
// for instrumentation.
inline DensityTable evaluate_densities(const PosteriorDensity& posterior, const Matrix& theta, const Matrix& x,
                                       const ProposalDraws& draws, bool reuse_embedding = true,
                                       const Value* embedding = nullptr) {
  const auto n = static_cast<std::size_t>(theta.rows());
  const std::size_t samples = draws.samples;
  if (static_cast<std::size_t>(x.rows()) != n) throw ShapeError("rank statistic: theta and x row counts differ");
  Matrix all(n * (samples + 1), theta.cols());
  all.topRows(static_cast<Eigen::Index>(n)) = theta;
  all.bottomRows(static_cast<Eigen::Index>(n * samples)) = draws.points;

  std::vector<std::size_t> owner(n * (samples + 1));
  for (std::size_t i = 0; i < n; ++i) owner[i] = i;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < samples; ++j) owner[n + i * samples + j] = i;

  Value emb_all;
  if (reuse_embedding) {
    Value emb = embedding ? *embedding : posterior.embed(to_value(x));
    emb_all = diff::gather_rows(emb, owner);
  } else {
    Matrix x_all(owner.size(), x.cols());
    for (std::size_t r = 0; r < owner.size(); ++r) x_all.row(r) = x.row(owner[r]);
    emb_all = posterior.embed(to_value(x_all));
  }
  Value logp = posterior.log_density(to_value(all), emb_all);
  return {diff::exp(diff::slice_rows(logp, 0, n)),
          diff::exp(diff::reshape(diff::slice_rows(logp, n, n * (samples + 1)), n, samples))};
}

// Importance-sampled rank statistics for a batch of (θ*, x*) rows.
inline RankStatisticBatch is_rank_statistics(const PosteriorDensity& posterior, const Matrix& theta, const Matrix& x,
                                             const Proposal& proposal, std::size_t samples, Rng& rng, double tau = 1.0,
                                             bool reuse_embedding = true, const Value* embedding = nullptr) {
  ProposalDraws draws = draw_proposals(x, proposal, samples, rng);
  DensityTable t = evaluate_densities(posterior, theta, x, draws, reuse_embedding, embedding);
  auto batch = rank_statistic(t.p_star, t.p_samples,
                              Value::constant(theta.rows(), samples, std::move(draws.density)), tau);
  batch.proposal = draws.id;
  return batch;
}

// Single-pair convenience with hard indicators.
inline double is_rank_statistic(const PosteriorDensity& posterior, std::span<const double> theta_star,
                                std::span<const double> x_star, std::size_t samples, const Proposal& proposal,
                                Rng& rng) {
  diff::NoGradGuard no_grad;
  Matrix t(1, theta_star.size()), x(1, x_star.size());
  std::copy(theta_star.begin(), theta_star.end(), t.data());
  std::copy(x_star.begin(), x_star.end(), x.data());
  return is_rank_statistics(posterior, t, x, proposal, samples, rng).alpha.item();
}

// Exact ascending sort of a column [N, 1]; gradients follow the permutation.
inline Value sort_ascending(const Value& v) {
  if (v.cols() != 1) throw ShapeError("sort_ascending: expected a column, got " + diff::shape_str(v.shape()));
  const auto& x = v.node()->data;
  std::vector<std::size_t> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < perm.size(); ++i) out[i] = x[perm[i]];
  return diff::make_result("sort", v.rows(), 1, std::move(out), {v.node()}, [perm](diff::Node& self) {
    diff::Node& p = *self.parents[0];
    for (std::size_t i = 0; i < perm.size(); ++i) p.grad[perm[i]] += self.grad[i];
  });
}

// Smoothed ascending sort: projection onto the permutahedron with quadratic
// regularization of the given strength, solved by pool-adjacent-violators.
// Outputs are block averages of sorted values plus offsets; strength → 0
// recovers the exact sort.
inline Value soft_sort_ascending(const Value& v, double strength) {
  if (!(strength > 0)) return sort_ascending(v);
  if (v.cols() != 1) throw ShapeError("soft_sort_ascending: expected a column, got " + diff::shape_str(v.shape()));
  const auto& x = v.node()->data;
  const std::size_t n = x.size();
  // Descending sort of u = -x is the negated ascending sort of x.
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = static_cast<double>(n - i) / strength;
  // Non-increasing isotonic regression of z + x_sorted. The x and z parts of
  // each block sum are kept apart so that singleton blocks return x exactly.
  std::vector<double> xs, zs;
  std::vector<std::size_t> sizes;
  auto block_mean = [&](std::size_t b) { return (xs[b] + zs[b]) / static_cast<double>(sizes[b]); };
  for (std::size_t i = 0; i < n; ++i) {
    xs.push_back(x[perm[i]]);
    zs.push_back(z[i]);
    sizes.push_back(1);
    while (sizes.size() > 1 && block_mean(sizes.size() - 2) < block_mean(sizes.size() - 1)) {
      xs[xs.size() - 2] += xs.back();
      zs[zs.size() - 2] += zs.back();
      sizes[sizes.size() - 2] += sizes.back();
      xs.pop_back();
      zs.pop_back();
      sizes.pop_back();
    }
  }
  std::vector<std::size_t> block_of(n);
  std::vector<double> out(n);
  for (std::size_t b = 0, i = 0; b < sizes.size(); ++b) {
    const double size = static_cast<double>(sizes[b]);
    for (std::size_t k = 0; k < sizes[b]; ++k, ++i) {
      block_of[i] = b;
      out[i] = xs[b] / size + (zs[b] / size - z[i]);
    }
  }
  return diff::make_result("soft_sort", n, 1, std::move(out), {v.node()},
                           [perm, block_of, sizes](diff::Node& self) {
                             diff::Node& p = *self.parents[0];
                             std::vector<double> block_grad(sizes.size(), 0.0);
                             for (std::size_t i = 0; i < block_of.size(); ++i) block_grad[block_of[i]] += self.grad[i];
                             for (std::size_t i = 0; i < block_of.size(); ++i) {
                               const std::size_t b = block_of[i];
                               p.grad[perm[i]] += block_grad[b] / static_cast<double>(sizes[b]);
                             }
                           });
}

// (1/N) Σ_i (i/N − α_(i))², or with the difference rectified in
// conservative mode so that α̂ dominating the uniform grid costs nothing.
inline Value sorting_loss(const Value& alpha, RegMode mode, double sort_strength = 0.0) {
  const std::size_t n = alpha.rows();
  if (alpha.cols() != 1) throw ShapeError("sorting_loss: expected a column, got " + diff::shape_str(alpha.shape()));
  if (n < 2) throw std::invalid_argument("sorting_loss: batch size must be at least 2");
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) grid[i] = static_cast<double>(i + 1) / static_cast<double>(n);
  Value sorted = soft_sort_ascending(alpha, sort_strength);
  Value gap = diff::sub(Value::constant(n, 1, std::move(grid)), sorted);
  if (mode == RegMode::conservative) gap = diff::relu(gap);
  return diff::mean(diff::square(gap));
}

// Σ_k (F_N(α_k) − α_k)² with the ECDF F_N(a) = (1/N) Σ_i 1[α̂_i ≤ a] built from
// straight-through indicators; conservative mode rectifies F_N − α_k.
inline Value direct_loss(const Value& alpha, const std::vector<double>& levels, RegMode mode, double tau = 1.0) {
  if (alpha.cols() != 1) throw ShapeError("direct_loss: expected a column, got " + diff::shape_str(alpha.shape()));
  if (alpha.rows() == 0) throw std::invalid_argument("direct_loss: empty batch");
  if (levels.empty()) throw std::invalid_argument("direct_loss: no levels");
  for (double a : levels)
    if (!(a > 0 && a < 1)) throw std::invalid_argument("direct_loss: level outside (0, 1)");
  const std::size_t m = levels.size();
  Value lv = Value::constant(1, m, levels);
  Value above = ste_indicator(diff::sub(alpha, lv), tau);  // 1[α̂_i > α_k]
  Value ecdf = diff::sub(Value::constant(1, m, 1.0),
                         diff::scale(diff::sum(above, 0), 1.0 / static_cast<double>(alpha.rows())));
  Value gap = diff::sub(ecdf, lv);
  if (mode == RegMode::conservative) gap = diff::relu(gap);
  return diff::sum(diff::square(gap));
}

struct RegularizerResult {
  Value loss;
  RankStatisticBatch batch;
  double degenerate_fraction = 0.0;
  bool degenerate_warning = false;  // more than half the batch degenerate
};

// Regularizer R for one data batch.
inline RegularizerResult regularizer(const PosteriorDensity& posterior, const Matrix& theta, const Matrix& x,
                                     const RegConfig& cfg, const Proposal& proposal, Rng& rng,
                                     const Value* embedding = nullptr) {
  cfg.validate();
  if (theta.rows() < 2) throw std::invalid_argument("regularizer: batch size must be at least 2");
  RegularizerResult r;
  r.batch = is_rank_statistics(posterior, theta, x, proposal, cfg.samples, rng, cfg.temperature, cfg.reuse_embedding,
                               embedding);
  r.loss = cfg.loss_form == LossForm::sorting ? sorting_loss(r.batch.alpha, cfg.mode, cfg.sort_strength)
                                               : direct_loss(r.batch.alpha, cfg.levels, cfg.mode, cfg.temperature);
  r.degenerate_fraction = static_cast<double>(r.batch.degenerate) / static_cast<double>(theta.rows());
  r.degenerate_warning = r.degenerate_fraction > 0.5;
  return r;
}

}  // namespace calsbi::covreg
