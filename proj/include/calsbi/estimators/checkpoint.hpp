#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "calsbi/estimators/estimator.hpp"
#include "calsbi/estimators/npe.hpp"
#include "calsbi/estimators/nre.hpp"
#include "calsbi/io/binary.hpp"

namespace calsbi {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct ParameterRecord {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string method;
  io::KeyValue config;
  std::vector<ParameterRecord> parameters;
};

// Layout: "CALC", u32 version, method string, config blob string, u32 record
// count, then per record: name string, u32 rank, u64 dims, f64 values.
// Strings are u32 length + bytes; all integers and reals little-endian.
inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  io::put_magic(os, "CALC");
  io::put_u32(os, kCheckpointVersion);
  io::put_string(os, ck.method);
  io::put_string(os, ck.config.str());
  io::put_u32(os, static_cast<std::uint32_t>(ck.parameters.size()));
  for (const auto& p : ck.parameters) {
    io::put_string(os, p.name);
    io::put_u32(os, static_cast<std::uint32_t>(p.shape.size()));
    for (auto d : p.shape) io::put_u64(os, d);
    for (double v : p.values) io::put_f64(os, v);
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  io::expect_magic(is, "CALC");
  const auto version = io::get_u32(is, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ck;
  ck.method = io::get_string(is, "method tag");
  ck.config = io::KeyValue::parse(io::get_string(is, "config blob"));
  const auto n = io::get_u32(is, "record count");
  for (std::uint32_t i = 0; i < n; ++i) {
    ParameterRecord r;
    r.name = io::get_string(is, "parameter name");
    const auto rank = io::get_u32(is, "rank");
    if (rank > 8) throw FormatError("implausible rank for parameter " + r.name);
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      r.shape.push_back(io::get_u64(is, "dimension"));
      count *= r.shape.back();
    }
    if (count > (1ull << 32)) throw FormatError("implausible size for parameter " + r.name);
    r.values.resize(count);
    for (auto& v : r.values) v = io::get_f64(is, "parameter values");
    ck.parameters.push_back(std::move(r));
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_checkpoint(os, ck);
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(is);
}

// `extra` is merged into the blob (training recipe etc.).
inline Checkpoint make_checkpoint(const Estimator& model, const io::KeyValue& extra = {}) {
  Checkpoint ck;
  ck.method = model.method();
  ck.config = model.config();
  ck.config.merge(extra);
  for (const auto& p : model.parameters()) {
    ck.parameters.push_back({p.name, {p.value.rows(), p.value.cols()}, {p.value.data().begin(), p.value.data().end()}});
  }
  return ck;
}

inline void load_parameters(const Estimator& model, const std::vector<ParameterRecord>& records) {
  auto params = model.parameters();
  if (params.size() != records.size()) {
    throw FormatError("checkpoint holds " + std::to_string(records.size()) + " parameters, model expects " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    const auto& r = records[i];
    if (p.name != r.name || r.values.size() != p.value.numel()) {
      throw FormatError("checkpoint parameter '" + r.name + "' does not match model parameter '" + p.name + "'");
    }
    std::copy(r.values.begin(), r.values.end(), p.value.mutable_data().begin());
  }
}

inline std::unique_ptr<Estimator> restore_estimator(const Checkpoint& ck) {
  Rng rng(0);
  std::unique_ptr<Estimator> model;
  if (ck.method == "npe") {
    model = std::make_unique<NpeFlow>(NpeConfig::from_kv(ck.config), rng);
  } else if (ck.method == "nre") {
    model = std::make_unique<NreModel>(NreConfig::from_kv(ck.config), read_prior(ck.config), rng);
  } else {
    throw FormatError("unknown method tag '" + ck.method + "'");
  }
  load_parameters(*model, ck.parameters);
  return model;
}

}  // namespace calsbi
