#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "calsbi/density.hpp"

namespace calsbi {

inline constexpr std::size_t kMinGridResolution = 16;

// Regular grid of cells over a box, cell-centred, first dimension slowest.
struct GridSpec {
  std::vector<double> low;
  std::vector<double> high;
  std::size_t resolution = 512;

  std::size_t dim() const { return low.size(); }
  std::size_t cell_count() const {
    std::size_t n = 1;
    for (std::size_t d = 0; d < dim(); ++d) n *= resolution;
    return n;
  }
  double width(std::size_t d) const { return (high[d] - low[d]) / static_cast<double>(resolution); }
  double cell_volume() const {
    double v = 1.0;
    for (std::size_t d = 0; d < dim(); ++d) v *= width(d);
    return v;
  }

  void validate() const {
    if (low.size() != high.size() || low.empty()) throw std::invalid_argument("grid: bounds must have matching non-zero size");
    if (dim() > 2) throw std::invalid_argument("grid: at most two dimensions are supported, got " + std::to_string(dim()));
    if (resolution < kMinGridResolution) {
      throw std::invalid_argument("grid: resolution " + std::to_string(resolution) + " below minimum " +
                                  std::to_string(kMinGridResolution));
    }
    for (std::size_t d = 0; d < dim(); ++d)
      if (!(low[d] < high[d])) throw std::invalid_argument("grid: low must be below high");
  }

  // Cell centres as [cells, dim].
  Matrix centers() const {
    Matrix m(cell_count(), dim());
    for (std::size_t c = 0; c < cell_count(); ++c) {
      std::size_t rem = c;
      for (std::size_t d = dim(); d-- > 0;) {
        const std::size_t k = rem % resolution;
        rem /= resolution;
        m(c, d) = low[d] + (static_cast<double>(k) + 0.5) * width(d);
      }
    }
    return m;
  }

  std::optional<std::size_t> cell_of(std::span<const double> theta) const {
    std::size_t idx = 0;
    for (std::size_t d = 0; d < dim(); ++d) {
      if (!(theta[d] >= low[d] && theta[d] < high[d])) return std::nullopt;
      auto k = static_cast<std::size_t>((theta[d] - low[d]) / width(d));
      k = std::min(k, resolution - 1);
      idx = idx * resolution + k;
    }
    return idx;
  }
};

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// A density tabulated on a grid and normalized by cell mass.
struct GridOracle {
  GridSpec spec;
  std::vector<double> log_density;  // normalized over the grid
  std::vector<double> mass;         // per-cell probability, sums to 1

  static GridOracle from_log_values(GridSpec spec, std::span<const double> unnormalized) {
    spec.validate();
    if (unnormalized.size() != spec.cell_count()) throw std::invalid_argument("grid: value count does not match cell count");
    const double lse = log_sum_exp(unnormalized);
    if (!std::isfinite(lse)) throw NumericError("grid: density vanishes or diverges on every cell");
    const double log_z = lse + std::log(spec.cell_volume());
    GridOracle g{std::move(spec), {}, {}};
    g.log_density.resize(unnormalized.size());
    g.mass.resize(unnormalized.size());
    for (std::size_t i = 0; i < unnormalized.size(); ++i) {
      g.log_density[i] = unnormalized[i] - log_z;
      g.mass[i] = std::exp(unnormalized[i] - lse);
    }
    return g;
  }

  // Largest density threshold whose super-level set holds at least `level`
  // of the mass, i.e. the HPDR boundary.
  double hpdr_threshold(double level) const {
    std::vector<std::size_t> order(mass.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mass[a] > mass[b]; });
    double cum = 0.0;
    for (std::size_t i : order) {
      cum += mass[i];
      if (cum >= level) return log_density[i];
    }
    return log_density[order.back()];
  }

  // Mass of cells strictly denser than the given cell. The cell lies in the
  // HPDR at level t exactly when this is below t.
  double mass_above(std::size_t cell) const {
    const double ref = log_density[cell];
    double s = 0.0;
    for (std::size_t i = 0; i < mass.size(); ++i)
      if (log_density[i] > ref) s += mass[i];
    return s;
  }
};

// Evaluates p̂(· | x) on every grid cell and normalizes it.
inline GridOracle tabulate(const PosteriorDensity& density, std::span<const double> x, const GridSpec& spec,
                           const Matrix& centers) {
  diff::NoGradGuard no_grad;
  auto lp = density.log_density_at(centers, x);
  return GridOracle::from_log_values(spec, lp);
}

inline GridOracle tabulate(const PosteriorDensity& density, std::span<const double> x, const GridSpec& spec) {
  spec.validate();
  return tabulate(density, x, spec, spec.centers());
}

}  // namespace calsbi
