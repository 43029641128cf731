#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "calsbi/estimators/estimator.hpp"
#include "calsbi/nn.hpp"

namespace calsbi {

struct NpeConfig {
  std::size_t dim_theta = 2;
  std::size_t dim_x = 2;
  std::size_t embedding_dim = 16;
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;
  std::size_t coupling_layers = 4;  // ignored for one-dimensional θ
  double scale_bound = 3.0;

  io::KeyValue to_kv() const {
    io::KeyValue kv;
    kv.set("npe.dim_theta", std::uint64_t{dim_theta});
    kv.set("npe.dim_x", std::uint64_t{dim_x});
    kv.set("npe.embedding_dim", std::uint64_t{embedding_dim});
    kv.set("npe.hidden", std::uint64_t{hidden});
    kv.set("npe.hidden_layers", std::uint64_t{hidden_layers});
    kv.set("npe.coupling_layers", std::uint64_t{coupling_layers});
    kv.set("npe.scale_bound", scale_bound);
    return kv;
  }

  static NpeConfig from_kv(const io::KeyValue& kv) {
    NpeConfig c;
    c.dim_theta = kv.get_u64("npe.dim_theta");
    c.dim_x = kv.get_u64("npe.dim_x");
    c.embedding_dim = kv.get_u64("npe.embedding_dim");
    c.hidden = kv.get_u64("npe.hidden");
    c.hidden_layers = kv.get_u64("npe.hidden_layers");
    c.coupling_layers = kv.get_u64("npe.coupling_layers");
    c.scale_bound = kv.get_double("npe.scale_bound");
    return c;
  }
};

// Conditional normalizing flow with affine coupling layers.
//
// The flow maps a standard normal base point z to θ. Layer k rescales and
// shifts the coordinates in `transformed` using a network fed with the
// `conditioning` coordinates and the observation embedding; masks alternate
// between layers. Log-scales are bound * tanh(pre / bound), so every layer is
// invertible. The last layer of each coupling net starts at zero, making a
// freshly built flow the identity. With one-dimensional θ there is nothing to
// condition on and the single layer reduces to an affine map of z whose
// shift and log-scale depend on the embedding only.
class NpeFlow final : public Estimator {
 public:
  NpeFlow(NpeConfig cfg, Rng& rng) : cfg_(cfg) {
    if (cfg_.dim_theta == 0 || cfg_.dim_x == 0) throw std::invalid_argument("npe: dimensions must be positive");
    embedding_ = nn::Mlp(cfg_.dim_x, cfg_.hidden, cfg_.hidden_layers, cfg_.embedding_dim, rng);
    const std::size_t n_layers = cfg_.dim_theta == 1 ? 1 : std::max<std::size_t>(cfg_.coupling_layers, 2);
    for (std::size_t k = 0; k < n_layers; ++k) {
      Coupling c;
      for (std::size_t j = 0; j < cfg_.dim_theta; ++j) {
        if (cfg_.dim_theta == 1 || j % 2 == k % 2)
          c.transformed.push_back(j);
        else
          c.conditioning.push_back(j);
      }
      c.net = nn::Mlp(c.conditioning.size() + cfg_.embedding_dim, cfg_.hidden, cfg_.hidden_layers,
                      2 * c.transformed.size(), rng, /*zero_last=*/true);
      // Column order that puts [conditioning | transformed] back in place.
      std::vector<std::size_t> order = c.conditioning;
      order.insert(order.end(), c.transformed.begin(), c.transformed.end());
      c.restore.resize(order.size());
      for (std::size_t p = 0; p < order.size(); ++p) c.restore[order[p]] = p;
      layers_.push_back(std::move(c));
    }
  }

  std::size_t dim_theta() const override { return cfg_.dim_theta; }
  std::size_t dim_x() const override { return cfg_.dim_x; }
  bool normalized() const override { return true; }
  std::string name() const override { return "npe"; }
  std::string method() const override { return "npe"; }
  const NpeConfig& settings() const { return cfg_; }
  std::size_t layer_count() const { return layers_.size(); }

  diff::ParameterList parameters() const override {
    diff::ParameterList out;
    embedding_.collect("embedding", out);
    for (std::size_t k = 0; k < layers_.size(); ++k) layers_[k].net.collect("coupling" + std::to_string(k), out);
    return out;
  }

  io::KeyValue config() const override { return cfg_.to_kv(); }

  // Base point z [M, d] to θ, one embedding row per θ row.
  Value push_forward(const Value& z, const Value& emb) const {
    Value y = z;
    for (std::size_t k = 0; k < layers_.size(); ++k) {
      const auto& c = layers_[k];
      auto [shift, log_scale] = affine_params(c, y, emb);
      Value yb = diff::add(diff::mul(gather(y, c.transformed), diff::exp(log_scale)), shift);
      y = recombine(c, y, yb);
    }
    return y;
  }

  // θ to base point z together with the per-row inverse log-determinant.
  std::pair<Value, Value> pull_back(const Value& theta, const Value& emb) const {
    Value y = theta;
    Value log_det = Value::constant(theta.rows(), 1, 0.0);
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const auto& c = layers_[k];
      auto [shift, log_scale] = affine_params(c, y, emb);
      check_finite(shift, k);
      check_finite(log_scale, k);
      Value xb = diff::mul(diff::sub(gather(y, c.transformed), shift), diff::exp(diff::neg(log_scale)));
      y = recombine(c, y, xb);
      log_det = diff::sub(log_det, diff::sum(log_scale, 1));
    }
    return {y, log_det};
  }

  bool can_sample() const override { return true; }

  Matrix sample(std::span<const double> x, Rng& rng, std::size_t count) const override {
    if (count == 0) return Matrix(0, cfg_.dim_theta);
    Matrix z(count, cfg_.dim_theta);
    for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = standard_normal(rng);
    Value e = embed(row_value(x));
    Value rep = diff::gather_rows(e, std::vector<std::size_t>(count, 0));
    return to_matrix(push_forward(to_value(z), rep));
  }

 protected:
  Value do_embed(const Value& x) const override { return embedding_(x); }

  Value do_log_density(const Value& theta, const Value& emb) const override {
    auto [z, log_det] = pull_back(theta, emb);
    Value base = diff::shift(diff::scale(diff::sum(diff::square(z), 1), -0.5),
                             -0.5 * kLog2Pi * static_cast<double>(cfg_.dim_theta));
    return diff::add(base, log_det);
  }

 private:
  struct Coupling {
    std::vector<std::size_t> conditioning;
    std::vector<std::size_t> transformed;
    std::vector<std::size_t> restore;
    nn::Mlp net;
  };

  static Value gather(const Value& y, const std::vector<std::size_t>& cols) {
    if (cols.size() == y.cols()) return y;
    return diff::gather_cols(y, cols);
  }

  std::pair<Value, Value> affine_params(const Coupling& c, const Value& y, const Value& emb) const {
    Value in = c.conditioning.empty() ? emb : diff::concat({diff::gather_cols(y, c.conditioning), emb});
    Value h = c.net(in);
    const std::size_t m = c.transformed.size();
    Value shift = diff::slice_cols(h, 0, m);
    const double b = cfg_.scale_bound;
    Value log_scale = diff::scale(diff::tanh(diff::scale(diff::slice_cols(h, m, 2 * m), 1.0 / b)), b);
    return {shift, log_scale};
  }

  static Value recombine(const Coupling& c, const Value& y, const Value& new_transformed) {
    if (c.conditioning.empty()) return new_transformed;
    return diff::gather_cols(diff::concat({diff::gather_cols(y, c.conditioning), new_transformed}), c.restore);
  }

  static void check_finite(const Value& v, std::size_t layer) {
    for (double d : v.data())
      if (!std::isfinite(d)) throw NumericError("npe: non-finite value in coupling layer " + std::to_string(layer));
  }

  NpeConfig cfg_;
  nn::Mlp embedding_;
  std::vector<Coupling> layers_;
};

}  // namespace calsbi
