#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "calsbi/estimators/checkpoint.hpp"
#include "calsbi/estimators/npe.hpp"
#include "calsbi/estimators/nre.hpp"
#include "calsbi/estimators/oracles.hpp"
#include "calsbi/problems/grid.hpp"
#include "fd.hpp"

using namespace calsbi;

namespace {

// Perturbs every parameter so the flow is no longer the identity.
// Perturbation relative to the LeCun init scale, so wide layers stay tame.
void randomize(const Estimator& model, std::uint64_t seed, double sd = 0.3) {
  Rng rng(seed);
  for (auto p : model.parameters()) {
    const double scale = sd / std::sqrt(static_cast<double>(p.value.rows()));
    for (double& v : p.value.mutable_data()) v += scale * standard_normal(rng);
  }
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * standard_normal(rng);
  return m;
}

void zero_head_output(NreModel& m) {
  auto& last = m.head().last();
  for (double& v : last.weight().mutable_data()) v = 0.0;
  for (double& v : last.bias().mutable_data()) v = 0.0;
}

}  // namespace

TEST(Npe, IdentityFlowAtOriginIsStandardNormalMode) {
  Rng rng(1);
  NpeFlow flow({2, 2}, rng);
  Value lp = flow.log_density_direct(Value::constant(1, 2, 0.0), Value::constant(1, 2, {0.4, -1.2}));
  EXPECT_NEAR(lp.item(), -kLog2Pi, 1e-12);
  EXPECT_NEAR(lp.item(), -1.8379, 1e-4);
}

TEST(Npe, IdentityFlowSampleThenDensityIsBaseDensity) {
  Rng rng(2);
  NpeFlow flow({2, 2}, rng);
  std::vector<double> x{0.5, 0.5};
  Rng s1(9);
  Matrix theta = flow.sample(x, s1, 16);
  Rng s2(9);
  auto lp = flow.log_density_at(theta, x);
  for (Eigen::Index i = 0; i < theta.rows(); ++i) {
    const double z0 = standard_normal(s2), z1 = standard_normal(s2);
    EXPECT_DOUBLE_EQ(theta(i, 0), z0);
    EXPECT_DOUBLE_EQ(theta(i, 1), z1);
    EXPECT_NEAR(lp[i], -kLog2Pi - 0.5 * (z0 * z0 + z1 * z1), 1e-12);
  }
}

TEST(Npe, IdentityFlowSamplesAreStandardNormal) {
  Rng rng(3);
  NpeFlow flow({2, 2}, rng);
  Rng s(4);
  Matrix t = flow.sample(std::vector<double>{1.0, 2.0}, s, 100000);
  EXPECT_LT(std::abs(t.col(0).mean()), 0.02);
  EXPECT_LT(std::abs(t.col(1).mean()), 0.02);
}

TEST(Npe, SamplingIsSeededAndEmptyCountIsEmpty) {
  Rng rng(5);
  NpeFlow flow({2, 2}, rng);
  randomize(flow, 6);
  std::vector<double> x{0.1, 0.2};
  Rng a(7), b(7);
  EXPECT_EQ(flow.sample(x, a, 8), flow.sample(x, b, 8));
  EXPECT_EQ(flow.sample(x, a, 0).rows(), 0);
}

TEST(Npe, RandomFlowIntegratesToOne) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    Rng rng(seed);
    NpeFlow flow({2, 2}, rng);
    randomize(flow, seed + 100, 0.2);
    GridSpec spec{{-9, -9}, {9, 9}, 300};
    auto lp = flow.log_density_at(spec.centers(), std::vector<double>{0.3, -0.4});
    double mass = 0.0;
    for (double v : lp) mass += std::exp(v) * spec.cell_volume();
    EXPECT_NEAR(mass, 1.0, 1e-2) << "seed " << seed;
  }
}

TEST(Npe, OneDimensionalFlowIntegratesToOne) {
  Rng rng(14);
  NpeFlow flow({1, 1}, rng);
  EXPECT_EQ(flow.layer_count(), 1u);
  randomize(flow, 15, 0.2);
  GridSpec spec{{-12}, {12}, 4000};
  auto lp = flow.log_density_at(spec.centers(), std::vector<double>{0.7});
  double mass = 0.0;
  for (double v : lp) mass += std::exp(v) * spec.cell_volume();
  EXPECT_NEAR(mass, 1.0, 1e-3);
}

TEST(Npe, Invertibility) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    NpeFlow flow({2, 3}, rng);
    randomize(flow, seed + 50);
    Matrix theta = random_matrix(rng, 10, 2, 1.5);
    Matrix x = random_matrix(rng, 10, 3);
    Value emb = flow.embed(to_value(x));
    auto [z, logdet] = flow.pull_back(to_value(theta), emb);
    Matrix back = to_matrix(flow.push_forward(z, emb));
    EXPECT_LT((back - theta).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Npe, LogDetMatchesFiniteDifferenceJacobian) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    NpeFlow flow({2, 2}, rng);
    randomize(flow, seed + 200);
    std::vector<double> x{0.3, -0.2};
    std::vector<double> t{standard_normal(rng), standard_normal(rng)};
    Value emb = flow.embed(row_value(x));
    auto [z, logdet] = flow.pull_back(row_value(t), emb);
    auto z_at = [&](int j, double step) {
      auto p = t;
      p[j] += step;
      return flow.pull_back(row_value(p), emb).first;
    };
    // SELU's derivative jumps at zero, so one step can straddle a kink; keep
    // the best of several.
    double err = std::numeric_limits<double>::infinity();
    for (double h : {1e-4, 1e-5, 1e-6}) {
      double J[2][2];
      for (int j = 0; j < 2; ++j) {
        auto p = z_at(j, h), m = z_at(j, -h);
        for (int i = 0; i < 2; ++i) J[i][j] = (p.data()[i] - m.data()[i]) / (2 * h);
      }
      const double det = J[0][0] * J[1][1] - J[0][1] * J[1][0];
      err = std::min(err, std::abs(std::log(std::abs(det)) - logdet.item()));
    }
    EXPECT_LT(err, 1e-6) << "seed " << seed;
  }
}

TEST(Npe, GradientsMatchFiniteDifferences) {
  Rng rng(21);
  NpeFlow flow({2, 2, 4, 8, 1, 2}, rng);
  randomize(flow, 22, 0.2);
  Matrix theta = random_matrix(rng, 4, 2), x = random_matrix(rng, 4, 2);
  std::vector<Value> params;
  for (auto& p : flow.parameters()) params.push_back(p.value);
  auto rep = calsbi::testing::fd_check(params, [&] { return diff::sum(flow.log_density_direct(to_value(theta), to_value(x))); });
  EXPECT_LT(rep.max_error, 1e-4);
}

TEST(Npe, NonFiniteIntermediateNamesLayer) {
  Rng rng(23);
  NpeFlow flow({2, 2}, rng);
  auto params = flow.parameters();
  for (auto& p : params)
    if (p.name.rfind("coupling1", 0) == 0) p.value.mutable_data()[0] = std::nan("");
  try {
    flow.log_density_direct(Value::constant(1, 2, 0.5), Value::constant(1, 2, 0.5));
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("coupling layer 1"), std::string::npos);
  }
}

TEST(Nre, ZeroLogitGivesPriorExactly) {
  Rng rng(31);
  NreModel m({2, 2}, Prior::uniform({-1, -1}, {1, 1}), rng);
  zero_head_output(m);
  Matrix theta = random_matrix(rng, 6, 2, 0.4);
  Matrix x = random_matrix(rng, 6, 2);
  Value lp = m.log_density_direct(to_value(theta), to_value(x));
  for (double v : lp.data()) EXPECT_EQ(v, std::log(0.25));
  Value d = m.classifier(to_value(theta), m.embed(to_value(x)));
  for (double v : d.data()) EXPECT_EQ(v, 0.5);
}

TEST(Nre, LogitOneAddsOne) {
  Rng rng(32);
  NreModel m({2, 2}, Prior::gaussian({0, 0}, {1, 1}), rng);
  zero_head_output(m);
  m.head().last().bias().mutable_data()[0] = 1.0;
  std::vector<double> t{0.2, 0.3}, x{1, 1};
  Value emb = m.embed(row_value(x));
  EXPECT_NEAR(m.classifier(row_value(t), emb).item(), 0.7310585786300049, 1e-15);
  const double prior = Prior::gaussian({0, 0}, {1, 1}).log_density(t);
  EXPECT_DOUBLE_EQ(m.log_density(row_value(t), emb).item(), prior + 1.0);
}

TEST(Nre, OutsideUniformSupportIsMinusInfinity) {
  Rng rng(33);
  NreModel m({2, 2}, Prior::uniform({-1, -1}, {1, 1}), rng);
  Value lp = m.log_density_direct(Value::constant(1, 2, {1.5, 0}), Value::constant(1, 2, 0.0));
  EXPECT_TRUE(std::isinf(lp.item()) && lp.item() < 0);
}

TEST(Nre, ClassifierInUnitInterval) {
  Rng rng(34);
  NreModel m({2, 2}, Prior::gaussian({0, 0}, {1, 1}), rng);
  randomize(m, 35, 1.0);
  Matrix t = random_matrix(rng, 50, 2, 3), x = random_matrix(rng, 50, 2, 3);
  Value d = m.classifier(to_value(t), m.embed(to_value(x)));
  for (double v : d.data()) EXPECT_TRUE(v > 0 && v < 1);
  // Large logits round the sigmoid to exactly 0 or 1; it must still not leave [0, 1].
  randomize(m, 36, 30.0);
  Value big = m.classifier(to_value(t), m.embed(to_value(x)));
  for (double v : big.data()) EXPECT_TRUE(v >= 0 && v <= 1);
}

TEST(Nre, GradientsMatchFiniteDifferences) {
  Rng rng(36);
  NreModel m({2, 2, 4, 8, 1}, Prior::gaussian({0, 0}, {1, 1}), rng);
  Matrix theta = random_matrix(rng, 4, 2), x = random_matrix(rng, 4, 2);
  std::vector<Value> params;
  for (auto& p : m.parameters()) params.push_back(p.value);
  auto rep = calsbi::testing::fd_check(params, [&] { return diff::sum(m.log_density_direct(to_value(theta), to_value(x))); });
  EXPECT_LT(rep.max_error, 1e-4);
}

TEST(Embedding, ReuseIsBitIdenticalAndCounted) {
  Rng rng(41);
  NpeFlow flow({2, 2}, rng);
  randomize(flow, 42);
  std::vector<double> x{0.4, 0.9};
  Matrix theta = random_matrix(rng, 17, 2);
  flow.reset_counters();
  auto reused = flow.log_density_at(theta, x);
  EXPECT_EQ(flow.counters().embedded_rows, 1u);
  EXPECT_EQ(flow.counters().density_rows, 17u);
  Matrix xs(17, 2);
  for (int i = 0; i < 17; ++i) xs.row(i) << x[0], x[1];
  Value direct = flow.log_density_direct(to_value(theta), to_value(xs));
  for (int i = 0; i < 17; ++i) EXPECT_EQ(reused[i], direct.data()[i]);
}

TEST(Embedding, EvaluationIsPure) {
  Rng rng(43);
  NreModel m({2, 2}, Prior::gaussian({0, 0}, {1, 1}), rng);
  Matrix t = random_matrix(rng, 5, 2), x = random_matrix(rng, 5, 2);
  Value a = m.log_density_direct(to_value(t), to_value(x));
  Value b = m.log_density_direct(to_value(t), to_value(x));
  for (int i = 0; i < 5; ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}

TEST(Oracles, ConjugatePosterior) {
  GaussianConjugatePosterior post(2, 1.0);
  auto m = post.mean(std::vector<double>{2, 0});
  EXPECT_EQ(m[0], 1.0);
  EXPECT_EQ(m[1], 0.0);
  EXPECT_DOUBLE_EQ(post.posterior_sd() * post.posterior_sd(), 0.5);
  GaussianConjugatePosterior sharp(2, 1e-6);
  EXPECT_NEAR(sharp.mean(std::vector<double>{2, -3})[1], -3.0, 1e-9);
}

TEST(Oracles, ConjugatePosteriorIntegratesToOne) {
  GaussianConjugatePosterior post(2, 0.5);
  GridSpec spec{{-6, -6}, {6, 6}, 400};
  auto lp = post.log_density_at(spec.centers(), std::vector<double>{0.8, -1.1});
  double mass = 0.0;
  for (double v : lp) mass += std::exp(v) * spec.cell_volume();
  EXPECT_NEAR(mass, 1.0, 1e-3);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (std::string method : {"npe", "nre"}) {
    Rng rng(51);
    std::unique_ptr<Estimator> model;
    if (method == "npe")
      model = std::make_unique<NpeFlow>(NpeConfig{2, 2}, rng);
    else
      model = std::make_unique<NreModel>(NreConfig{2, 2}, Prior::uniform({-2, -2}, {2, 2}), rng);
    randomize(*model, 52);
    std::stringstream ss;
    io::KeyValue extra;
    extra.set("problem", std::string("nonlinear-2d"));
    write_checkpoint(ss, make_checkpoint(*model, extra));
    Checkpoint ck = read_checkpoint(ss);
    EXPECT_EQ(ck.method, method);
    EXPECT_EQ(ck.config.get("problem"), "nonlinear-2d");
    auto restored = restore_estimator(ck);
    auto a = model->parameters(), b = restored->parameters();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      EXPECT_EQ(a[k].name, b[k].name);
      for (std::size_t i = 0; i < a[k].value.numel(); ++i) EXPECT_EQ(a[k].value.data()[i], b[k].value.data()[i]);
    }
    Matrix t = random_matrix(rng, 8, 2), x = random_matrix(rng, 8, 2);
    Value la = model->log_density_direct(to_value(t), to_value(x));
    Value lb = restored->log_density_direct(to_value(t), to_value(x));
    for (int i = 0; i < 8; ++i) EXPECT_EQ(la.data()[i], lb.data()[i]);
  }
}

TEST(Checkpoint, RejectsWrongMagicVersionAndTruncation) {
  Rng rng(53);
  NpeFlow flow({2, 2}, rng);
  std::stringstream ss;
  write_checkpoint(ss, make_checkpoint(flow));
  const std::string bytes = ss.str();

  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream s1(bad);
  EXPECT_THROW(read_checkpoint(s1), FormatError);

  std::string badver = bytes;
  badver[4] = 9;
  std::stringstream s2(badver);
  EXPECT_THROW(read_checkpoint(s2), FormatError);

  std::stringstream s3(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(read_checkpoint(s3), FormatError);
}

TEST(Checkpoint, LayoutIsLittleEndianWithMagicFirst) {
  Rng rng(54);
  NreModel m({1, 1, 2, 2, 1}, Prior::uniform({-1}, {1}), rng);
  std::stringstream ss;
  write_checkpoint(ss, make_checkpoint(m));
  const std::string b = ss.str();
  EXPECT_EQ(b.substr(0, 4), "CALC");
  EXPECT_EQ(static_cast<unsigned char>(b[4]), 1u);
  EXPECT_EQ(b[5], 0);
}
