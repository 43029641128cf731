#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <sstream>

#include "calsbi/problems/dataset.hpp"
#include "calsbi/problems/problems.hpp"

using namespace calsbi;

TEST(Registry, KnownIdsAndConstants) {
  for (const auto& id : registry::problem_ids()) EXPECT_EQ(make_problem(id)->id(), id);
  EXPECT_THROW(make_problem("slcp"), std::invalid_argument);
  EXPECT_EQ(registry::kGaussianLinearSigma, 0.5);
  const auto pair = mixture_demo_densities();
  EXPECT_EQ(pair.black.weights[0], 0.7);
  EXPECT_EQ(pair.black.weights[1], 0.3);
  EXPECT_EQ(pair.black.sigmas[0], 0.9);
  EXPECT_EQ(pair.black.sigmas[1], 0.4);
  EXPECT_EQ(pair.red.sigmas[0], 0.7);
  EXPECT_EQ(pair.red.sigmas[1], 0.2);
  EXPECT_EQ(pair.red.weights, pair.black.weights);
  EXPECT_EQ(pair.red.means, pair.black.means);
}

TEST(Simulator, ZeroNoiseIsIdentity) {
  GaussianLinearProblem p(2, 0.5, {.zero_noise = true});
  Rng rng(1);
  std::vector<double> t{0.3, -0.7};
  auto x = p.simulate(t, rng);
  EXPECT_EQ(x[0], 0.3);
  EXPECT_EQ(x[1], -0.7);
}

TEST(Simulator, ThetaInsidePriorSupport) {
  for (const std::string id : {"gaussian-linear", "nonlinear-2d"}) {
    auto p = make_problem(id);
    auto d = simulate_dataset(*p, 2000, 3);
    for (Eigen::Index i = 0; i < d.theta.rows(); ++i) ASSERT_TRUE(p->prior().contains(row_span(d.theta, i)));
  }
}

TEST(Dataset, DeterministicPerSeed) {
  auto a = simulate_dataset("gaussian-linear", 256, 7);
  auto b = simulate_dataset("gaussian-linear", 256, 7);
  auto c = simulate_dataset("gaussian-linear", 256, 8);
  EXPECT_EQ(a.theta, b.theta);
  EXPECT_EQ(a.x, b.x);
  EXPECT_NE(a.theta, c.theta);
  // Row i only depends on (seed, i).
  auto prefix = simulate_dataset("gaussian-linear", 16, 7);
  EXPECT_EQ(prefix.theta, a.theta.topRows(16));
}

TEST(Dataset, Errors) {
  EXPECT_THROW(simulate_dataset("gaussian-linear", 0, 1), std::invalid_argument);
  EXPECT_THROW(simulate_dataset("mixture-1d-demo", 4, 1), std::invalid_argument);
  EXPECT_THROW(simulate_dataset("nope", 4, 1), std::invalid_argument);
}

TEST(Dataset, PersistenceRoundTripsBitExactly) {
  auto d = simulate_dataset("nonlinear-2d", 1024, 11);
  std::stringstream ss;
  write_dataset(ss, d);
  const std::string bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "SBID");
  auto r = read_dataset(ss);
  EXPECT_EQ(r.count(), 1024u);
  EXPECT_EQ(r.problem, "nonlinear-2d");
  EXPECT_EQ(r.seed, 11u);
  EXPECT_EQ(r.theta, d.theta);
  EXPECT_EQ(r.x, d.x);
  std::stringstream again;
  write_dataset(again, r);
  EXPECT_EQ(again.str(), bytes);

  std::stringstream trunc(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_dataset(trunc), FormatError);
  std::string bad = bytes;
  bad[1] = 'X';
  std::stringstream wrong(bad);
  EXPECT_THROW(read_dataset(wrong), FormatError);
}

TEST(Dataset, CsvExportHasHeader) {
  auto d = simulate_dataset("gaussian-linear", 3, 1);
  std::stringstream ss;
  write_dataset_csv(ss, d);
  std::string header;
  std::getline(ss, header);
  EXPECT_EQ(header, "t0,t1,x0,x1");
  int lines = 0;
  for (std::string l; std::getline(ss, l);) ++lines;
  EXPECT_EQ(lines, 3);
}

TEST(AnalyticPosterior, OnlyForConjugateProblem) {
  EXPECT_NO_THROW(analytic_posterior(*make_problem("gaussian-linear")));
  EXPECT_THROW(analytic_posterior(*make_problem("nonlinear-2d")), std::invalid_argument);
}

TEST(GridPosterior, MatchesAnalyticOnGaussianLinear) {
  auto p = make_problem("gaussian-linear");
  auto analytic = analytic_posterior(*p);
  std::vector<double> x{0.7, -1.3};
  GridOracle g = grid_posterior(*p, x, 512);
  double total = 0.0;
  for (double m : g.mass) total += m;
  EXPECT_NEAR(total, 1.0, 1e-6);
  auto lp = analytic->log_density_at(g.spec.centers(), x);
  double worst = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i)
    if (lp[i] > -20) worst = std::max(worst, std::abs(lp[i] - g.log_density[i]));
  EXPECT_LE(worst, 1e-2);
}

TEST(GridPosterior, ResolutionFloorAndDimensionLimit) {
  auto p = make_problem("nonlinear-2d");
  std::vector<double> x{1, 0.5};
  EXPECT_THROW(grid_posterior(*p, x, 15), std::invalid_argument);
  EXPECT_NO_THROW(grid_posterior(*p, x, 16));
  GridSpec big{{0, 0, 0}, {1, 1, 1}, 16};
  EXPECT_THROW(big.validate(), std::invalid_argument);
}

TEST(GridPosterior, NonlinearIsBimodalInSign) {
  auto p = make_problem("nonlinear-2d");
  std::vector<double> x{1.0, 0.5};  // θ ≈ ±(1, 0.5)
  GridOracle g = grid_posterior(*p, x, 200);
  const std::size_t n = g.spec.resolution;
  int maxima = 0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    for (std::size_t j = 1; j + 1 < n; ++j) {
      const double v = g.log_density[i * n + j];
      bool is_max = v > -5;
      for (int di = -1; di <= 1 && is_max; ++di)
        for (int dj = -1; dj <= 1 && is_max; ++dj)
          if ((di || dj) && g.log_density[(i + di) * n + (j + dj)] >= v) is_max = false;
      maxima += is_max ? 1 : 0;
    }
  }
  EXPECT_EQ(maxima, 2);
}

TEST(GridPosterior, ConvergesWithResolution) {
  auto p = make_problem("nonlinear-2d");
  std::vector<double> x{0.8, -0.3};
  GridPosterior coarse(*p, 512), fine(*p, 1024);
  Matrix pts(3, 2);
  pts << 0.9, -0.3, -0.9, 0.35, 0.5, 0.1;
  auto a = coarse.log_density_at(pts, x);
  auto b = fine.log_density_at(pts, x);
  for (int i = 0; i < 3; ++i) EXPECT_LT(std::abs(a[i] - b[i]), 5e-3);
}

TEST(GridPosterior, AsDensityIsNormalized) {
  auto p = make_problem("nonlinear-2d");
  GridPosterior post(*p, 256);
  std::vector<double> x{0.4, 0.2};
  GridSpec spec = p->grid(256);
  auto lp = post.log_density_at(spec.centers(), x);
  double mass = 0.0;
  for (double v : lp) mass += std::exp(v) * spec.cell_volume();
  EXPECT_NEAR(mass, 1.0, 1e-3);
}

TEST(Mixture, DensitiesIntegrateToOne) {
  const auto pair = mixture_demo_densities();
  for (const auto* m : {&pair.black, &pair.red}) {
    double s = 0.0;
    const int n = 200000;
    const double lo = -12, hi = 12, w = (hi - lo) / n;
    for (int i = 0; i < n; ++i) s += m->density(lo + (i + 0.5) * w) * w;
    EXPECT_NEAR(s, 1.0, 1e-4);
  }
}

TEST(GridOracle, HpdrThresholdOfStandardNormal) {
  GridSpec spec{{-6}, {6}, 1200};
  Matrix c = spec.centers();
  std::vector<double> lv(1200);
  for (int i = 0; i < 1200; ++i) lv[i] = -0.5 * c(i, 0) * c(i, 0);
  GridOracle g = GridOracle::from_log_values(spec, lv);
  const double thr = g.hpdr_threshold(0.6827);
  double lo = 10, hi = -10;
  for (int i = 0; i < 1200; ++i) {
    if (g.log_density[i] >= thr) {
      lo = std::min(lo, c(i, 0));
      hi = std::max(hi, c(i, 0));
    }
  }
  EXPECT_NEAR(lo, -1.0, spec.width(0));
  EXPECT_NEAR(hi, 1.0, spec.width(0));
}
