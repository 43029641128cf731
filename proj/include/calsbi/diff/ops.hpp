#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "calsbi/diff/value.hpp"

namespace calsbi::diff {

// Standard SELU constants.
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kSeluScale = 1.0507009873554804934193349852946;

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

[[noreturn]] inline void shape_fail(const std::string& op, const Value& a, const Value& b) {
  throw ShapeError(op + ": incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

// Broadcasting is limited to scalars, row vectors [1,c] and column vectors [r,1].
inline std::size_t bdim(const std::string& op, const Value& a, const Value& b, std::size_t da, std::size_t db) {
  if (da == db) return da;
  if (da == 1) return db;
  if (db == 1) return da;
  shape_fail(op, a, b);
}

template <class Fwd, class Da, class Db>
Value binary(const std::string& op, const Value& a, const Value& b, Fwd fwd, Da da, Db db) {
  const std::size_t r = bdim(op, a, b, a.rows(), b.rows());
  const std::size_t c = bdim(op, a, b, a.cols(), b.cols());
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  auto ia = [=](std::size_t i, std::size_t j) { return (ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j); };
  auto ib = [=](std::size_t i, std::size_t j) { return (br == 1 ? 0 : i) * bc + (bc == 1 ? 0 : j); };
  std::vector<double> out(r * c);
  const auto& x = a.node()->data;
  const auto& y = b.node()->data;
  const bool same = (ar == br && ac == bc);
  if (same) {
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = fwd(x[k], y[k]);
  } else {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] = fwd(x[ia(i, j)], y[ib(i, j)]);
  }
  return make_result(op, r, c, std::move(out), {a.node(), b.node()}, [=](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& g = self.grad;
    const auto& xv = pa.data;
    const auto& yv = pb.data;
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const std::size_t k = i * c + j;
        const std::size_t ka = same ? k : ia(i, j);
        const std::size_t kb = same ? k : ib(i, j);
        if (pa.requires_grad) pa.grad[ka] += g[k] * da(xv[ka], yv[kb], self.data[k]);
        if (pb.requires_grad) pb.grad[kb] += g[k] * db(xv[ka], yv[kb], self.data[k]);
      }
    }
  });
}

// Elementwise map; `deriv(x, y)` receives input and output.
template <class Fwd, class Deriv>
Value unary(const std::string& op, const Value& a, Fwd fwd, Deriv deriv) {
  const auto& x = a.node()->data;
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = fwd(x[k]);
  return make_result(op, a.rows(), a.cols(), std::move(out), {a.node()}, [=](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t k = 0; k < self.grad.size(); ++k) p.grad[k] += self.grad[k] * deriv(p.data[k], self.data[k]);
  });
}

}  // namespace detail

inline Value add(const Value& a, const Value& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

inline Value sub(const Value& a, const Value& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

inline Value mul(const Value& a, const Value& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

inline Value div(const Value& a, const Value& b) {
  return detail::binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double z) { return -z / y; });
}

inline Value scale(const Value& a, double s) {
  return detail::unary(
      "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Value shift(const Value& a, double s) {
  return detail::unary(
      "shift", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Value neg(const Value& a) { return scale(a, -1.0); }

inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator/(const Value& a, const Value& b) { return div(a, b); }
inline Value operator-(const Value& a) { return neg(a); }
inline Value operator*(double s, const Value& a) { return scale(a, s); }
inline Value operator*(const Value& a, double s) { return scale(a, s); }
inline Value operator+(const Value& a, double s) { return shift(a, s); }
inline Value operator-(const Value& a, double s) { return shift(a, -s); }

inline Value matmul(const Value& a, const Value& b) {
  if (a.cols() != b.rows()) detail::shape_fail("matmul", a, b);
  const std::size_t r = a.rows(), k = a.cols(), c = b.cols();
  std::vector<double> out(r * c);
  detail::Map(out.data(), r, c).noalias() =
      detail::ConstMap(a.data().data(), r, k) * detail::ConstMap(b.data().data(), k, c);
  return make_result("matmul", r, c, std::move(out), {a.node(), b.node()}, [=](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    detail::ConstMap g(self.grad.data(), r, c);
    if (pa.requires_grad) detail::Map(pa.grad.data(), r, k).noalias() += g * detail::ConstMap(pb.data.data(), k, c).transpose();
    if (pb.requires_grad) detail::Map(pb.grad.data(), k, c).noalias() += detail::ConstMap(pa.data.data(), r, k).transpose() * g;
  });
}

inline Value sum(const Value& a) {
  const auto& x = a.node()->data;
  double s = std::accumulate(x.begin(), x.end(), 0.0);
  return make_result("sum", 1, 1, {s}, {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (double& g : p.grad) g += self.grad[0];
  });
}

// axis 0 reduces rows ([r,c] -> [1,c]); axis 1 reduces columns ([r,c] -> [r,1]).
inline Value sum(const Value& a, int axis) {
  const std::size_t r = a.rows(), c = a.cols();
  if (axis != 0 && axis != 1) throw ShapeError("sum: axis must be 0 or 1, got " + std::to_string(axis));
  const auto& x = a.node()->data;
  const std::size_t orows = axis == 0 ? 1 : r, ocols = axis == 0 ? c : 1;
  std::vector<double> out(orows * ocols, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += x[i * c + j];
  return make_result("sum_axis", orows, ocols, std::move(out), {a.node()}, [=](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * c + j] += self.grad[axis == 0 ? j : i];
  });
}

inline Value mean(const Value& a) {
  if (a.numel() == 0) throw ShapeError("mean: empty value");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

inline Value exp(const Value& a) {
  return detail::unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Value log(const Value& a) {
  return detail::unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Value square(const Value& a) {
  return detail::unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Value abs(const Value& a) {
  return detail::unary(
      "abs", a, [](double x) { return std::abs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

// max(x, c); the rectifier when c == 0.
inline Value relu(const Value& a, double floor = 0.0) {
  return detail::unary(
      "relu", a, [floor](double x) { return x > floor ? x : floor; },
      [floor](double x, double) { return x > floor ? 1.0 : 0.0; });
}

inline Value tanh(const Value& a) {
  return detail::unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Value sigmoid(const Value& a) {
  return detail::unary(
      "sigmoid", a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Value selu(const Value& a) {
  return detail::unary(
      "selu", a,
      [](double x) { return x > 0 ? kSeluScale * x : kSeluScale * kSeluAlpha * std::expm1(x); },
      [](double x, double y) { return x > 0 ? kSeluScale : y + kSeluScale * kSeluAlpha; });
}

// log(1 + exp(x)) built from the primitive ops.
inline Value softplus(const Value& a) { return add(relu(a), log(shift(exp(neg(abs(a))), 1.0))); }

// 1 where a > b, else 0. Never carries a gradient.
inline Value greater(const Value& a, const Value& b) {
  Value r = detail::binary(
      "greater", a, b, [](double x, double y) { return x > y ? 1.0 : 0.0; },
      [](double, double, double) { return 0.0; }, [](double, double, double) { return 0.0; });
  return Value::constant(r.rows(), r.cols(), std::vector<double>(r.data().begin(), r.data().end()));
}

inline Value equal(const Value& a, const Value& b) {
  Value r = detail::binary(
      "equal", a, b, [](double x, double y) { return x == y ? 1.0 : 0.0; },
      [](double, double, double) { return 0.0; }, [](double, double, double) { return 0.0; });
  return Value::constant(r.rows(), r.cols(), std::vector<double>(r.data().begin(), r.data().end()));
}

inline Value detach(const Value& a) {
  return Value::constant(a.rows(), a.cols(), std::vector<double>(a.data().begin(), a.data().end()));
}

// axis 1 joins side by side (rows must match); axis 0 stacks (cols must match).
inline Value concat(const std::vector<Value>& parts, int axis = 1) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  std::size_t r = parts[0].rows(), c = parts[0].cols();
  for (std::size_t p = 1; p < parts.size(); ++p) {
    if (axis == 1) {
      if (parts[p].rows() != r) detail::shape_fail("concat", parts[0], parts[p]);
      c += parts[p].cols();
    } else {
      if (parts[p].cols() != c) detail::shape_fail("concat", parts[0], parts[p]);
      r += parts[p].rows();
    }
  }
  std::vector<double> out(r * c);
  std::vector<NodePtr> nodes;
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& v : parts) {
    nodes.push_back(v.node());
    offsets.push_back(off);
    const auto& x = v.node()->data;
    if (axis == 1) {
      for (std::size_t i = 0; i < v.rows(); ++i)
        std::copy_n(x.begin() + i * v.cols(), v.cols(), out.begin() + i * c + off);
      off += v.cols();
    } else {
      std::copy(x.begin(), x.end(), out.begin() + off * c);
      off += v.rows();
    }
  }
  return make_result("concat", r, c, std::move(out), std::move(nodes), [=](Node& self) {
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      Node& n = *self.parents[p];
      if (!n.requires_grad) continue;
      const std::size_t pr = n.rows(), pc = n.cols();
      for (std::size_t i = 0; i < pr; ++i)
        for (std::size_t j = 0; j < pc; ++j) {
          const std::size_t k = axis == 1 ? i * c + offsets[p] + j : (offsets[p] + i) * c + j;
          n.grad[i * pc + j] += self.grad[k];
        }
    }
  });
}

// Rows [r0, r1) and columns [c0, c1).
inline Value slice(const Value& a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
  if (r0 > r1 || r1 > a.rows() || c0 > c1 || c1 > a.cols()) {
    throw ShapeError("slice: range rows [" + std::to_string(r0) + "," + std::to_string(r1) + ") cols [" +
                     std::to_string(c0) + "," + std::to_string(c1) + ") outside " + shape_str(a.shape()));
  }
  const std::size_t r = r1 - r0, c = c1 - c0, ac = a.cols();
  std::vector<double> out(r * c);
  const auto& x = a.node()->data;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[(r0 + i) * ac + c0 + j];
  return make_result("slice", r, c, std::move(out), {a.node()}, [=](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[(r0 + i) * ac + c0 + j] += self.grad[i * c + j];
  });
}

inline Value slice_rows(const Value& a, std::size_t r0, std::size_t r1) { return slice(a, r0, r1, 0, a.cols()); }
inline Value slice_cols(const Value& a, std::size_t c0, std::size_t c1) { return slice(a, 0, a.rows(), c0, c1); }

// Row gather; repeated indices scatter-add on the way back.
inline Value gather_rows(const Value& a, std::vector<std::size_t> index) {
  const std::size_t c = a.cols();
  for (std::size_t i : index)
    if (i >= a.rows()) throw ShapeError("gather_rows: index " + std::to_string(i) + " outside " + shape_str(a.shape()));
  std::vector<double> out(index.size() * c);
  const auto& x = a.node()->data;
  for (std::size_t i = 0; i < index.size(); ++i) std::copy_n(x.begin() + index[i] * c, c, out.begin() + i * c);
  const std::size_t n = index.size();
  return make_result("gather_rows", n, c, std::move(out), {a.node()}, [c, idx = std::move(index)](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[idx[i] * c + j] += self.grad[i * c + j];
  });
}

inline Value gather_cols(const Value& a, std::vector<std::size_t> index) {
  const std::size_t r = a.rows(), ac = a.cols(), c = index.size();
  for (std::size_t j : index)
    if (j >= ac) throw ShapeError("gather_cols: index " + std::to_string(j) + " outside " + shape_str(a.shape()));
  std::vector<double> out(r * c);
  const auto& x = a.node()->data;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * ac + index[j]];
  return make_result("gather_cols", r, c, std::move(out), {a.node()}, [=, idx = std::move(index)](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) p.grad[i * ac + idx[j]] += self.grad[i * c + j];
  });
}

inline Value reshape(const Value& a, std::size_t rows, std::size_t cols) {
  if (rows * cols != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as [" + std::to_string(rows) + "," +
                     std::to_string(cols) + "]");
  }
  return make_result("reshape", rows, cols, a.node()->data, {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t k = 0; k < self.grad.size(); ++k) p.grad[k] += self.grad[k];
  });
}

}  // namespace calsbi::diff
