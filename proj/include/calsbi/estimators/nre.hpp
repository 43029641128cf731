#pragma once

#include <cstddef>
#include <string>

#include "calsbi/estimators/estimator.hpp"
#include "calsbi/nn.hpp"

namespace calsbi {

struct NreConfig {
  std::size_t dim_theta = 2;
  std::size_t dim_x = 2;
  std::size_t embedding_dim = 16;
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;

  io::KeyValue to_kv() const {
    io::KeyValue kv;
    kv.set("nre.dim_theta", std::uint64_t{dim_theta});
    kv.set("nre.dim_x", std::uint64_t{dim_x});
    kv.set("nre.embedding_dim", std::uint64_t{embedding_dim});
    kv.set("nre.hidden", std::uint64_t{hidden});
    kv.set("nre.hidden_layers", std::uint64_t{hidden_layers});
    return kv;
  }

  static NreConfig from_kv(const io::KeyValue& kv) {
    NreConfig c;
    c.dim_theta = kv.get_u64("nre.dim_theta");
    c.dim_x = kv.get_u64("nre.dim_x");
    c.embedding_dim = kv.get_u64("nre.embedding_dim");
    c.hidden = kv.get_u64("nre.hidden");
    c.hidden_layers = kv.get_u64("nre.hidden_layers");
    return c;
  }
};

// Likelihood-to-evidence ratio classifier d(θ, x) = sigmoid(logit(θ, x)).
// The posterior is prior × d / (1 − d), i.e. log prior + logit, and is left
// unnormalized.
class NreModel final : public Estimator {
 public:
  NreModel(NreConfig cfg, Prior prior, Rng& rng) : cfg_(cfg), prior_(std::move(prior)) {
    if (prior_.dim() != cfg_.dim_theta) throw std::invalid_argument("nre: prior dimension does not match dim_theta");
    observation_ = nn::Mlp(cfg_.dim_x, cfg_.hidden, cfg_.hidden_layers, cfg_.embedding_dim, rng);
    parameter_ = nn::Linear(cfg_.dim_theta, cfg_.hidden, rng);
    head_ = nn::Mlp(cfg_.hidden + cfg_.embedding_dim, cfg_.hidden, cfg_.hidden_layers, 1, rng);
  }

  std::size_t dim_theta() const override { return cfg_.dim_theta; }
  std::size_t dim_x() const override { return cfg_.dim_x; }
  bool normalized() const override { return false; }
  std::string name() const override { return "nre"; }
  std::string method() const override { return "nre"; }
  const Prior& prior() const { return prior_; }
  const NreConfig& settings() const { return cfg_; }
  nn::Mlp& head() { return head_; }

  diff::ParameterList parameters() const override {
    diff::ParameterList out;
    observation_.collect("observation", out);
    parameter_.collect("parameter", out);
    head_.collect("head", out);
    return out;
  }

  io::KeyValue config() const override {
    auto kv = cfg_.to_kv();
    write_prior(kv, prior_);
    return kv;
  }

  // Classifier pre-activation, one embedding row per θ row; [M, 1].
  Value logit(const Value& theta, const Value& emb) const {
    return head_(diff::concat({diff::selu(parameter_(theta)), emb}));
  }

  Value classifier(const Value& theta, const Value& emb) const { return diff::sigmoid(logit(theta, emb)); }

 protected:
  Value do_embed(const Value& x) const override { return observation_(x); }

  // log(d / (1 - d)) is the logit itself.
  Value do_log_density(const Value& theta, const Value& emb) const override {
    return diff::add(prior_.log_density(theta), logit(theta, emb));
  }

 private:
  NreConfig cfg_;
  Prior prior_;
  nn::Mlp observation_;
  nn::Linear parameter_;
  nn::Mlp head_;
};

}  // namespace calsbi
