#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>

#include "calsbi/io/binary.hpp"
#include "calsbi/io/keyvalue.hpp"
#include "calsbi/problems/problems.hpp"

namespace calsbi {

inline constexpr std::uint32_t kDatasetVersion = 1;

struct Dataset {
  std::string problem;
  std::uint64_t seed = 0;
  Matrix theta;  // [count, dim_theta]
  Matrix x;      // [count, dim_x]

  std::size_t count() const { return static_cast<std::size_t>(theta.rows()); }
  std::size_t dim_theta() const { return static_cast<std::size_t>(theta.cols()); }
  std::size_t dim_x() const { return static_cast<std::size_t>(x.cols()); }

  Dataset subset(const std::vector<std::size_t>& rows) const {
    Dataset d{problem, seed, Matrix(rows.size(), theta.cols()), Matrix(rows.size(), x.cols())};
    for (std::size_t i = 0; i < rows.size(); ++i) {
      d.theta.row(i) = theta.row(rows[i]);
      d.x.row(i) = x.row(rows[i]);
    }
    return d;
  }
};

// Row i draws θ_i ~ prior and x_i from its own substream of `seed`.
inline Dataset simulate_dataset(const Problem& problem, std::size_t count, std::uint64_t seed) {
  if (count == 0) throw std::invalid_argument("simulate_dataset: count must be at least 1");
  if (!problem.has_simulator()) throw std::invalid_argument("problem '" + problem.id() + "' has no simulator");
  Dataset d{problem.id(), seed, Matrix(count, problem.dim_theta()), Matrix(count, problem.dim_x())};
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = substream(seed, i);
    auto t = problem.prior().sample(rng);
    auto xs = problem.simulate(t, rng);
    for (std::size_t j = 0; j < t.size(); ++j) d.theta(i, j) = t[j];
    for (std::size_t j = 0; j < xs.size(); ++j) d.x(i, j) = xs[j];
  }
  return d;
}

inline Dataset simulate_dataset(const std::string& problem_id, std::size_t count, std::uint64_t seed) {
  return simulate_dataset(*make_problem(problem_id), count, seed);
}

// "SBID", u32 version, problem id string, u64 seed, u64 count, u32 dim_theta,
// u32 dim_x, then count rows of θ‖x as f64, all little-endian.
inline void write_dataset(std::ostream& os, const Dataset& d) {
  io::put_magic(os, "SBID");
  io::put_u32(os, kDatasetVersion);
  io::put_string(os, d.problem);
  io::put_u64(os, d.seed);
  io::put_u64(os, d.count());
  io::put_u32(os, static_cast<std::uint32_t>(d.dim_theta()));
  io::put_u32(os, static_cast<std::uint32_t>(d.dim_x()));
  for (std::size_t i = 0; i < d.count(); ++i) {
    for (std::size_t j = 0; j < d.dim_theta(); ++j) io::put_f64(os, d.theta(i, j));
    for (std::size_t j = 0; j < d.dim_x(); ++j) io::put_f64(os, d.x(i, j));
  }
}

inline Dataset read_dataset(std::istream& is) {
  io::expect_magic(is, "SBID");
  const auto version = io::get_u32(is, "version");
  if (version != kDatasetVersion) throw FormatError("dataset version " + std::to_string(version) + " not supported");
  Dataset d;
  d.problem = io::get_string(is, "problem id", 256);
  d.seed = io::get_u64(is, "seed");
  const auto count = io::get_u64(is, "count");
  const auto dt = io::get_u32(is, "dim_theta");
  const auto dx = io::get_u32(is, "dim_x");
  if (dt > 1024 || dx > (1u << 20) || count > (1ull << 32)) throw FormatError("implausible dataset header");
  d.theta.resize(static_cast<Eigen::Index>(count), dt);
  d.x.resize(static_cast<Eigen::Index>(count), dx);
  for (std::uint64_t i = 0; i < count; ++i) {
    for (std::uint32_t j = 0; j < dt; ++j) d.theta(i, j) = io::get_f64(is, "dataset rows");
    for (std::uint32_t j = 0; j < dx; ++j) d.x(i, j) = io::get_f64(is, "dataset rows");
  }
  return d;
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_dataset(os, d);
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset '" + path.string() + "'");
  return read_dataset(is);
}

inline void write_dataset_csv(std::ostream& os, const Dataset& d) {
  for (std::size_t j = 0; j < d.dim_theta(); ++j) os << (j ? "," : "") << 't' << j;
  for (std::size_t j = 0; j < d.dim_x(); ++j) os << ",x" << j;
  os << '\n';
  for (std::size_t i = 0; i < d.count(); ++i) {
    for (std::size_t j = 0; j < d.dim_theta(); ++j) os << (j ? "," : "") << io::format_g17(d.theta(i, j));
    for (std::size_t j = 0; j < d.dim_x(); ++j) os << ',' << io::format_g17(d.x(i, j));
    os << '\n';
  }
}

}  // namespace calsbi
