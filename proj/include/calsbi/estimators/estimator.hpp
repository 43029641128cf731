#pragma once

#include <string>

#include "calsbi/density.hpp"
#include "calsbi/diff/optim.hpp"
#include "calsbi/io/keyvalue.hpp"

namespace calsbi {

// A trainable posterior model.
class Estimator : public PosteriorDensity {
 public:
  virtual std::string method() const = 0;
  virtual diff::ParameterList parameters() const = 0;
  // Architecture description sufficient to rebuild an untrained twin.
  virtual io::KeyValue config() const = 0;
};

inline void write_prior(io::KeyValue& kv, const Prior& p) {
  kv.set("prior.kind", p.kind() == Prior::Kind::uniform_box ? std::string("uniform") : std::string("gaussian"));
  kv.set("prior.first", io::join_doubles(p.first()));
  kv.set("prior.second", io::join_doubles(p.second()));
}

inline Prior read_prior(const io::KeyValue& kv) {
  auto a = io::split_doubles(kv.get("prior.first"));
  auto b = io::split_doubles(kv.get("prior.second"));
  return kv.get("prior.kind") == "uniform" ? Prior::uniform(a, b) : Prior::gaussian(a, b);
}

}  // namespace calsbi
