#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "calsbi/covreg.hpp"
#include "calsbi/density.hpp"
#include "calsbi/problems/grid.hpp"
#include "calsbi/problems/problems.hpp"

namespace calsbi::diagnostics {

inline constexpr std::size_t kDefaultEvalSamples = 1024;
inline constexpr std::size_t kDefaultGridResolution = 512;

struct CoverageCurve {
  std::vector<double> levels;  // credibility levels 1 − α, increasing
  std::vector<double> ecp;
  std::size_t pairs = 0;
  std::string method;       // "rank" or "grid"
  std::size_t samples = 0;  // L, rank-based only
};

struct SbcHistogram {
  std::vector<std::size_t> counts;
  std::size_t total = 0;
  std::size_t bins() const { return counts.size(); }
};

// Hard-indicator rank statistics for every test pair. Pairs are processed in
// chunks; pair i always uses substream i of `seed`, so the result does not
// depend on chunking.
inline std::vector<double> rank_statistics(const PosteriorDensity& posterior, const Matrix& theta, const Matrix& x,
                                           const Proposal& proposal, std::size_t samples, std::uint64_t seed,
                                           std::size_t chunk = 64) {
  if (theta.rows() == 0) throw std::invalid_argument("rank_statistics: empty test set");
  if (samples < 1) throw std::invalid_argument("rank_statistics: L must be at least 1");
  diff::NoGradGuard no_grad;
  const auto n = static_cast<std::size_t>(theta.rows());
  std::vector<double> out(n);
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    const auto s0 = static_cast<Eigen::Index>(start);
    const auto mi = static_cast<Eigen::Index>(m);
    covreg::ProposalDraws draws;
    draws.samples = samples;
    draws.points.resize(static_cast<Eigen::Index>(m * samples), theta.cols());
    draws.density.resize(m * samples);
    for (std::size_t i = 0; i < m; ++i) {
      Rng pair_rng = substream(seed, start + i);
      auto xi = row_span(x, s0 + static_cast<Eigen::Index>(i));
      Matrix d = proposal.sample(xi, pair_rng, samples);
      auto lq = proposal.log_density(d, xi);
      draws.points.middleRows(static_cast<Eigen::Index>(i * samples), static_cast<Eigen::Index>(samples)) = d;
      for (std::size_t j = 0; j < samples; ++j) draws.density[i * samples + j] = std::exp(lq[j]);
    }
    Matrix ts = theta.middleRows(s0, mi), xs = x.middleRows(s0, mi);
    auto t = covreg::evaluate_densities(posterior, ts, xs, draws);
    Value q = Value::constant(m, samples, std::move(draws.density));
    auto batch = covreg::rank_statistic(t.p_star, t.p_samples, q, 1.0);
    std::copy(batch.alpha.data().begin(), batch.alpha.data().end(), out.begin() + static_cast<std::ptrdiff_t>(start));
  }
  return out;
}

// ECP(1 − α) = (1/N) Σ 1[α̂_i ≥ α].
inline CoverageCurve ecp_from_rank_statistics(const std::vector<double>& alphas, const std::vector<double>& levels,
                                              std::size_t samples = 0) {
  if (alphas.empty()) throw std::invalid_argument("ecp: empty test set");
  CoverageCurve c{levels, {}, alphas.size(), "rank", samples};
  for (double lvl : levels) {
    const double a = 1.0 - lvl;
    std::size_t hit = 0;
    for (double v : alphas) hit += v >= a ? 1 : 0;
    c.ecp.push_back(static_cast<double>(hit) / static_cast<double>(alphas.size()));
  }
  return c;
}

inline CoverageCurve ecp_rank_based(const PosteriorDensity& posterior, const Matrix& theta, const Matrix& x,
                                    const std::vector<double>& levels, std::size_t samples, const Proposal& proposal,
                                    std::uint64_t seed) {
  return ecp_from_rank_statistics(rank_statistics(posterior, theta, x, proposal, samples, seed), levels, samples);
}

// Per pair: mass of grid cells denser than the nominal θ's cell. The nominal
// lies in the HPDR at level t iff that mass is below t. Pairs whose θ falls
// off the grid are never covered.
inline std::vector<double> grid_mass_above(const PosteriorDensity& posterior, const Matrix& theta, const Matrix& x,
                                           const GridSpec& spec) {
  spec.validate();
  if (posterior.dim_theta() != spec.dim()) throw std::invalid_argument("grid HPDR: grid and posterior dimensions differ");
  if (theta.rows() == 0) throw std::invalid_argument("grid HPDR: empty test set");
  const Matrix centers = spec.centers();
  std::vector<double> out(theta.rows(), 1.0);
  for (Eigen::Index i = 0; i < theta.rows(); ++i) {
    auto cell = spec.cell_of(row_span(theta, i));
    if (!cell) continue;
    GridOracle g = tabulate(posterior, row_span(x, i), spec, centers);
    out[i] = g.mass_above(*cell);
  }
  return out;
}

inline CoverageCurve ecp_from_mass_above(const std::vector<double>& above, const std::vector<double>& levels) {
  CoverageCurve c{levels, {}, above.size(), "grid", 0};
  for (double lvl : levels) {
    std::size_t hit = 0;
    for (double m : above) hit += m < lvl ? 1 : 0;
    c.ecp.push_back(static_cast<double>(hit) / static_cast<double>(above.size()));
  }
  return c;
}

inline CoverageCurve ecp_grid_hpdr(const PosteriorDensity& posterior, const Matrix& theta, const Matrix& x,
                                   const std::vector<double>& levels, const GridSpec& spec) {
  if (spec.dim() > 2) throw std::invalid_argument("grid HPDR: only available for up to two parameters");
  return ecp_from_mass_above(grid_mass_above(posterior, theta, x, spec), levels);
}

// Signed area between the coverage curve and the diagonal, trapezoidal with
// (0, 0) and (1, 1) appended. Positive means conservative on average.
inline double coverage_auc(const CoverageCurve& c) {
  if (c.levels.empty()) throw std::invalid_argument("coverage_auc: empty curve");
  std::vector<double> t{0.0}, e{0.0};
  t.insert(t.end(), c.levels.begin(), c.levels.end());
  e.insert(e.end(), c.ecp.begin(), c.ecp.end());
  t.push_back(1.0);
  e.push_back(1.0);
  double area = 0.0;
  for (std::size_t k = 1; k < t.size(); ++k) {
    const double g0 = e[k - 1] - t[k - 1], g1 = e[k] - t[k];
    area += 0.5 * (g0 + g1) * (t[k] - t[k - 1]);
  }
  return area;
}

inline double calibration_error(const CoverageCurve& c) {
  double s = 0.0;
  for (std::size_t k = 0; k < c.levels.size(); ++k) s += std::abs(c.levels[k] - c.ecp[k]);
  return c.levels.empty() ? 0.0 : s / static_cast<double>(c.levels.size());
}

inline double conservativeness_error(const CoverageCurve& c) {
  double s = 0.0;
  for (std::size_t k = 0; k < c.levels.size(); ++k) s += std::max(c.levels[k] - c.ecp[k], 0.0);
  return c.levels.empty() ? 0.0 : s / static_cast<double>(c.levels.size());
}

// One-sample KS distance to the standard uniform, both ECDF limits checked.
inline double ks_statistic(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("ks_statistic: no values");
  for (double v : values)
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("ks_statistic: value outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    d = std::max(d, static_cast<double>(i + 1) / n - values[i]);
    d = std::max(d, values[i] - static_cast<double>(i) / n);
  }
  return d;
}

struct ExpectedLogPosterior {
  double value = 0.0;        // mean over finite terms
  double prior_value = 0.0;  // same for the prior
  std::size_t excluded = 0;  // -inf terms left out
  bool normalized = true;    // false: unnormalized surrogate (NRE)
};

// Neumaier-compensated running sum; long test sets of near-equal terms would
// otherwise drift by many ulps.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    comp_ += std::abs(sum_) >= std::abs(v) ? (sum_ - t) + v : (v - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0, comp_ = 0.0;
};

inline ExpectedLogPosterior expected_log_posterior(const PosteriorDensity& posterior, const Matrix& theta,
                                                   const Matrix& x, const Prior& prior, std::size_t chunk = 1024) {
  if (theta.rows() == 0) throw std::invalid_argument("expected_log_posterior: empty test set");
  diff::NoGradGuard no_grad;
  ExpectedLogPosterior r;
  r.normalized = posterior.normalized();
  CompensatedSum s, sp;
  std::size_t kept = 0;
  const auto n = static_cast<std::size_t>(theta.rows());
  for (std::size_t start = 0; start < n; start += chunk) {
    const auto m = static_cast<Eigen::Index>(std::min(chunk, n - start));
    const auto st = static_cast<Eigen::Index>(start);
    Matrix t = theta.middleRows(st, m);
    Matrix xx = x.middleRows(st, m);
    Value lp = posterior.log_density_direct(to_value(t), to_value(xx));
    for (double v : lp.data()) {
      if (std::isfinite(v)) {
        s.add(v);
        ++kept;
      } else {
        ++r.excluded;
      }
    }
  }
  for (Eigen::Index i = 0; i < theta.rows(); ++i) sp.add(prior.log_density(row_span(theta, i)));
  r.value = kept ? s.value() / static_cast<double>(kept) : -std::numeric_limits<double>::infinity();
  r.prior_value = sp.value() / static_cast<double>(theta.rows());
  return r;
}

// Equal-width bins over [0, 1], last bin right-closed.
inline SbcHistogram sbc_histogram(const std::vector<double>& values, std::size_t bins) {
  if (bins < 2) throw std::invalid_argument("sbc_histogram: need at least two bins");
  SbcHistogram h{std::vector<std::size_t>(bins, 0), values.size()};
  for (double v : values) {
    // Compare against the rounded edges b / B so that grid values such as
    // i / N land in the bin their exact value belongs to.
    const double x = std::clamp(v, 0.0, 1.0);
    auto b = std::min(static_cast<std::size_t>(x * static_cast<double>(bins)), bins - 1);
    if (b + 1 < bins && x >= static_cast<double>(b + 1) / static_cast<double>(bins)) ++b;
    if (b > 0 && x < static_cast<double>(b) / static_cast<double>(bins)) --b;
    h.counts[b] += 1;
  }
  return h;
}

inline double chi_square_uniform(const SbcHistogram& h) {
  const double expected = static_cast<double>(h.total) / static_cast<double>(h.bins());
  double s = 0.0;
  for (auto c : h.counts) s += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  return s;
}

struct Interval {
  double lo, hi;
};

struct DemoReport {
  double level = 0.9;
  std::size_t n = 0;
  double ecp = 0.0;
  std::vector<Interval> segments;  // HPDR of the approximate (red) density
  double threshold = 0.0;          // density level bounding the HPDR
  bool self_test = false;
  std::vector<double> samples;     // draws from the ground truth (black)
};

// HPDR of a 1D density as a union of intervals, by density-threshold search
// on a fine grid over [lo, hi].
inline std::pair<std::vector<Interval>, double> hpdr_intervals_1d(const Mixture1d& density, double level, double lo,
                                                                  double hi, std::size_t resolution = 200000) {
  GridSpec spec{{lo}, {hi}, resolution};
  Matrix c = spec.centers();
  std::vector<double> lv(resolution);
  for (std::size_t i = 0; i < resolution; ++i) lv[i] = density.log_density(c(i, 0));
  GridOracle g = GridOracle::from_log_values(spec, lv);
  const double thr = g.hpdr_threshold(level);
  std::vector<Interval> segs;
  const double w = spec.width(0);
  for (std::size_t i = 0; i < resolution; ++i) {
    if (g.log_density[i] < thr) continue;
    const double a = lo + static_cast<double>(i) * w, b = a + w;
    if (!segs.empty() && std::abs(segs.back().hi - a) < 0.5 * w)
      segs.back().hi = b;
    else
      segs.push_back({a, b});
  }
  return {segs, std::exp(thr)};
}

inline DemoReport appendix_d_demo(std::size_t n, double level, std::uint64_t seed, bool self_test = false) {
  if (!(level > 0 && level < 1)) throw std::invalid_argument("demo: level must lie in (0, 1)");
  const auto pair = mixture_demo_densities();
  const Mixture1d& approx = self_test ? pair.black : pair.red;
  DemoReport r;
  r.level = level;
  r.n = n;
  r.self_test = self_test;
  auto [segs, thr] = hpdr_intervals_1d(approx, level, -registry::kMixtureHalfWidth, registry::kMixtureHalfWidth);
  r.segments = segs;
  r.threshold = thr;
  Rng rng = substream(seed, Stream::evaluation);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = pair.black.sample(rng);
    r.samples.push_back(t);
    for (const auto& s : segs) {
      if (t >= s.lo && t < s.hi) {
        ++hit;
        break;
      }
    }
  }
  r.ecp = n ? static_cast<double>(hit) / static_cast<double>(n) : 0.0;
  return r;
}

}  // namespace calsbi::diagnostics
