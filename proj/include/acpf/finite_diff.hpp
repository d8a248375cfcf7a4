#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace acpf::fd {

enum class Scheme { Forward, Central };

/// Default step for O(1)-scaled inputs.
inline constexpr double default_step = 1e-6;

/// Cost of a finite-difference Jacobian: calls of the vector function and
/// the resulting number of scalar output evaluations (calls x outputs).
struct EvalCount {
  std::size_t function_calls = 0;
  std::size_t scalar_evaluations = 0;
};

struct JacobianEstimate {
  Eigen::MatrixXd jacobian;
  EvalCount count;
};

namespace detail {
inline void require_finite(const std::vector<double>& values, std::size_t column) {
  for (double v : values)
    if (!std::isfinite(v))
      throw std::domain_error("non-finite function value at probe for column " + std::to_string(column));
}
}  // namespace detail

/// Column-wise finite-difference Jacobian of `f`. `visit(column, values)` is
/// called once per input coordinate with the difference quotient of every
/// output, so the full matrix never has to be stored.
///
/// Forward: (f(x + h e_i) - f(x)) / h, n + 1 calls.
/// Central: (f(x + h e_i) - f(x - h e_i)) / 2h, 2n calls.
template <class F, class Visit>
EvalCount for_each_column(F&& f, std::span<const double> x, double h, Scheme scheme, Visit&& visit) {
  if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  EvalCount count;
  std::vector<double> probe(x.begin(), x.end());
  auto call = [&](std::size_t column) {
    std::vector<double> out = f(std::span<const double>(probe));
    detail::require_finite(out, column);
    ++count.function_calls;
    count.scalar_evaluations += out.size();
    return out;
  };

  std::vector<double> base;
  if (scheme == Scheme::Forward) base = call(0);
  std::vector<double> column_values;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    auto plus = call(i);
    if (scheme == Scheme::Forward) {
      column_values.resize(plus.size());
      for (std::size_t r = 0; r < plus.size(); ++r) column_values[r] = (plus[r] - base[r]) / h;
    } else {
      probe[i] = x[i] - h;
      auto minus = call(i);
      column_values.resize(plus.size());
      for (std::size_t r = 0; r < plus.size(); ++r) column_values[r] = (plus[r] - minus[r]) / (2.0 * h);
    }
    probe[i] = x[i];
    visit(i, std::span<const double>(column_values));
  }
  return count;
}

/// Dense finite-difference Jacobian estimate (rows = outputs, cols = inputs).
template <class F>
JacobianEstimate numeric_gradient(F&& f, std::span<const double> x, double h = default_step,
                                  Scheme scheme = Scheme::Central) {
  JacobianEstimate est;
  est.count = for_each_column(f, x, h, scheme, [&](std::size_t col, std::span<const double> values) {
    if (est.jacobian.size() == 0) est.jacobian = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(values.size()),
                                                                      static_cast<Eigen::Index>(x.size()));
    for (std::size_t r = 0; r < values.size(); ++r)
      est.jacobian(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col)) = values[r];
  });
  return est;
}

}  // namespace acpf::fd
