#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "calsbi/diff/ops.hpp"
#include "calsbi/diff/optim.hpp"
#include "calsbi/rng.hpp"

namespace calsbi::nn {

using diff::NamedParameter;
using diff::ParameterList;
using diff::Value;

// y = x W + b with W stored [in, out].
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool zero_init = false) : in_(in), out_(out) {
    std::vector<double> w(in * out, 0.0);
    if (!zero_init) {
      // LeCun normal, the pairing SELU expects.
      const double sd = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(in, 1)));
      for (double& v : w) v = sd * standard_normal(rng);
    }
    weight_ = Value::parameter(in, out, std::move(w));
    bias_ = Value::parameter(1, out, std::vector<double>(out, 0.0));
  }

  Value operator()(const Value& x) const { return diff::add(diff::matmul(x, weight_), bias_); }

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }
  Value& weight() { return weight_; }
  Value& bias() { return bias_; }

  void collect(const std::string& prefix, ParameterList& out) const {
    out.push_back({prefix + ".weight", weight_});
    out.push_back({prefix + ".bias", bias_});
  }

 private:
  std::size_t in_ = 0, out_ = 0;
  Value weight_, bias_;
};

// Feed-forward net with SELU between layers and a linear output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t hidden_layers, std::size_t out, Rng& rng,
      bool zero_last = false) {
    std::size_t width = in;
    for (std::size_t i = 0; i < hidden_layers; ++i) {
      layers_.emplace_back(width, hidden, rng);
      width = hidden;
    }
    layers_.emplace_back(width, out, rng, zero_last);
  }

  Value operator()(Value x) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](x);
      if (i + 1 < layers_.size()) x = diff::selu(x);
    }
    return x;
  }

  std::size_t out() const { return layers_.back().out(); }
  std::vector<Linear>& layers() { return layers_; }
  Linear& last() { return layers_.back(); }

  void collect(const std::string& prefix, ParameterList& out) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + "." + std::to_string(i), out);
  }

 private:
  std::vector<Linear> layers_;
};

}  // namespace calsbi::nn
