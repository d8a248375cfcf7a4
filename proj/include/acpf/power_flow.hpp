#pragma once

#include <cmath>
#include <cstddef>
#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <memory>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "acpf/compgraph.hpp"
#include "acpf/finite_diff.hpp"
#include "acpf/network.hpp"

namespace acpf {

enum class Quantity : std::uint8_t { P, Q };
enum class Variable : std::uint8_t { Theta, V };

/// Which mismatch rows enter the residual and the loss.
/// Block: [dP_ref, dP_PV, dP_PQ, dQ_ref, dQ_PQ]. All additionally keeps dQ_PV
/// (against the scheduled reactive generation), placed between dQ_ref and dQ_PQ.
enum class ResidualRows : std::uint8_t { Block, All };

enum class DiffEngine : std::uint8_t { AutoDiff, NumericForward, NumericCentral };

inline std::string_view to_string(DiffEngine e) {
  switch (e) {
    case DiffEngine::AutoDiff: return "AutoDiff";
    case DiffEngine::NumericForward: return "NumericForward";
    case DiffEngine::NumericCentral: return "NumericCentral";
  }
  return "?";
}

struct RowLabel {
  std::size_t bus = 0;
  Quantity quantity = Quantity::P;
  bool operator==(const RowLabel&) const = default;
};

struct ColLabel {
  std::size_t bus = 0;
  Variable variable = Variable::Theta;
  bool operator==(const ColLabel&) const = default;
};

/// Which state components the iterative solvers may move: angles of every
/// non-reference bus and magnitudes of PQ buses.
struct UpdateMask {
  std::vector<bool> theta;
  std::vector<bool> v;

  static UpdateMask from_classes(const BusClasses& classes, std::size_t n) {
    UpdateMask m{std::vector<bool>(n, true), std::vector<bool>(n, false)};
    for (auto k : classes.ref) m.theta[k] = false;
    for (auto k : classes.pq) m.v[k] = true;
    return m;
  }

  /// Mask over the packed [theta; V] vector.
  bool free(std::size_t packed_index) const {
    const auto n = theta.size();
    return packed_index < n ? theta[packed_index] : v[packed_index - n];
  }
};

/// Voltage magnitudes and angles. Packed order everywhere is [theta; V].
struct StateVector {
  std::vector<double> v;
  std::vector<double> theta;
  UpdateMask mask;

  std::size_t size() const { return v.size(); }

  std::vector<double> packed() const {
    std::vector<double> x(theta);
    x.insert(x.end(), v.begin(), v.end());
    return x;
  }

  void unpack(std::span<const double> x) {
    const auto n = size();
    if (x.size() != 2 * n) throw std::invalid_argument("packed state size mismatch");
    std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n), theta.begin());
    std::copy(x.begin() + static_cast<std::ptrdiff_t>(n), x.end(), v.begin());
  }

  /// V = set-point on Ref/PV buses and 1 on PQ buses, all angles 0.
  static StateVector flat_start(const NetworkCase& net) {
    const auto n = net.size();
    StateVector s;
    s.v.assign(n, 1.0);
    s.theta.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k)
      if (net.buses[k].kind != BusKind::PQ) s.v[k] = net.buses[k].v_set;
    s.mask = UpdateMask::from_classes(classify_buses(net), n);
    return s;
  }
};

/// Row and column ordering of residuals and Jacobians.
struct Layout {
  std::size_t n = 0;
  std::vector<RowLabel> rows;
  std::vector<ColLabel> cols;
  std::vector<std::size_t> reduced_rows;  ///< rows of the square Newton system: dP non-ref, dQ_PQ
  std::vector<std::size_t> reduced_cols;  ///< free columns: theta non-ref, V_PQ
  std::vector<std::int64_t> row_of_p;     ///< bus -> row of its dP (-1 if absent)
  std::vector<std::int64_t> row_of_q;     ///< bus -> row of its dQ (-1 if absent)
  std::vector<std::size_t> col_of_var;    ///< packed variable -> column
  std::vector<std::size_t> var_of_col;    ///< column -> packed variable

  static Layout make(const BusClasses& c, std::size_t n, ResidualRows which) {
    Layout l;
    l.n = n;
    l.row_of_p.assign(n, -1);
    l.row_of_q.assign(n, -1);
    auto add_rows = [&](const std::vector<std::size_t>& buses, Quantity q) {
      for (auto k : buses) {
        (q == Quantity::P ? l.row_of_p : l.row_of_q)[k] = static_cast<std::int64_t>(l.rows.size());
        l.rows.push_back({k, q});
      }
    };
    add_rows(c.ref, Quantity::P);
    add_rows(c.pv, Quantity::P);
    add_rows(c.pq, Quantity::P);
    add_rows(c.ref, Quantity::Q);
    if (which == ResidualRows::All) add_rows(c.pv, Quantity::Q);
    add_rows(c.pq, Quantity::Q);

    auto add_cols = [&](const std::vector<std::size_t>& buses, Variable var) {
      for (auto k : buses) l.cols.push_back({k, var});
    };
    add_cols(c.ref, Variable::Theta);
    add_cols(c.pv, Variable::Theta);
    add_cols(c.pq, Variable::Theta);
    add_cols(c.ref, Variable::V);
    add_cols(c.pv, Variable::V);
    add_cols(c.pq, Variable::V);

    l.col_of_var.assign(2 * n, 0);
    l.var_of_col.assign(2 * n, 0);
    for (std::size_t j = 0; j < l.cols.size(); ++j) {
      const auto var = l.cols[j].bus + (l.cols[j].variable == Variable::V ? n : 0);
      l.col_of_var[var] = j;
      l.var_of_col[j] = var;
    }
    const auto mask = UpdateMask::from_classes(c, n);
    for (std::size_t j = 0; j < l.cols.size(); ++j)
      if (mask.free(l.var_of_col[j])) l.reduced_cols.push_back(j);
    for (std::size_t r = 0; r < l.rows.size(); ++r) {
      const auto& row = l.rows[r];
      const bool is_ref = row_is(c.ref, row.bus);
      if (row.quantity == Quantity::P ? !is_ref : row_is(c.pq, row.bus)) l.reduced_rows.push_back(r);
    }
    return l;
  }

 private:
  static bool row_is(const std::vector<std::size_t>& set, std::size_t k) {
    return std::find(set.begin(), set.end(), k) != set.end();
  }
};

/// Mismatch s - g(V, theta) in layout row order.
struct Residual {
  std::vector<double> values;
  std::shared_ptr<const Layout> layout;

  std::size_t size() const { return values.size(); }

  double inf_norm() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }
};

/// Per admittance entry (k, m), aligned with AdmittanceMatrix::row(k).
struct NestedIntermediates {
  std::vector<std::size_t> row_offsets;  ///< entries of row k: [row_offsets[k], row_offsets[k+1])
  std::vector<double> c;                 ///< V_k V_m cos(theta_k - theta_m)
  std::vector<double> s;                 ///< V_k V_m sin(theta_k - theta_m)
  std::vector<double> pl;                ///< G_km c_km + B_km s_km
  std::vector<double> ql;                ///< G_km s_km - B_km c_km
};

struct Injections {
  std::vector<double> p;
  std::vector<double> q;
  NestedIntermediates nested;
};

/// Active and reactive injections through the nested c/s -> PL/QL -> P/Q form.
inline Injections injections(const StateVector& state, const AdmittanceMatrix& y) {
  const auto n = y.size();
  if (state.size() != n || state.theta.size() != n) throw std::invalid_argument("state/admittance dimension mismatch");
  Injections out;
  out.p.assign(n, 0.0);
  out.q.assign(n, 0.0);
  auto& nest = out.nested;
  nest.row_offsets.reserve(n + 1);
  nest.row_offsets.push_back(0);
  const auto nnz = y.nonzeros();
  nest.c.reserve(nnz);
  nest.s.reserve(nnz);
  nest.pl.reserve(nnz);
  nest.ql.reserve(nnz);
  for (std::size_t k = 0; k < n; ++k) {
    for (const auto& e : y.row(k)) {
      const auto m = e.col;
      double c = 0.0;
      double s = 0.0;
      if (m == k) {
        c = state.v[k] * state.v[k];
      } else {
        const double vv = state.v[k] * state.v[m];
        const double d = state.theta[k] - state.theta[m];
        c = vv * std::cos(d);
        s = vv * std::sin(d);
      }
      const double g = e.value.real();
      const double b = e.value.imag();
      const double pl = g * c + b * s;
      const double ql = g * s - b * c;
      nest.c.push_back(c);
      nest.s.push_back(s);
      nest.pl.push_back(pl);
      nest.ql.push_back(ql);
      out.p[k] += pl;
      out.q[k] += ql;
    }
    nest.row_offsets.push_back(nest.c.size());
  }
  return out;
}

inline double loss(const Residual& res) {
  double total = 0.0;
  for (double v : res.values) total += v * v;
  return 0.5 * total;
}

inline double loss(std::span<const double> residual_values) {
  double total = 0.0;
  for (double v : residual_values) total += v * v;
  return 0.5 * total;
}

/// A case bound to its admittance matrix, row/column layout and the recorded
/// computational graph of the injections and the loss.
///
/// Graph inputs are the packed state [theta_0..theta_{n-1}, V_0..V_{n-1}];
/// outputs are P_0..P_{n-1}, Q_0..Q_{n-1}; `loss_node()` is the scalar loss
/// over the layout rows. The graph is mutated by evaluation, so a FlowModel is
/// used by one thread at a time.
class FlowModel {
 public:
  explicit FlowModel(NetworkCase net, ResidualRows rows = ResidualRows::Block)
      : net_(std::move(net)), rows_option_(rows) {
    validate(net_);
    if (!is_connected(net_)) throw CaseError("cannot solve a disconnected network");
    y_ = build_admittance(net_);
    classes_ = classify_buses(net_);
    layout_ = std::make_shared<const Layout>(Layout::make(classes_, net_.size(), rows));
    scheduled_.reserve(layout_->rows.size());
    for (const auto& r : layout_->rows) {
      const auto& bus = net_.buses[r.bus];
      scheduled_.push_back(r.quantity == Quantity::P ? bus.p_net() : bus.q_net());
    }
    build_graph();
  }

  const NetworkCase& network() const { return net_; }
  const AdmittanceMatrix& admittance() const { return y_; }
  const BusClasses& classes() const { return classes_; }
  const Layout& layout() const { return *layout_; }
  std::shared_ptr<const Layout> layout_ptr() const { return layout_; }
  ResidualRows residual_rows() const { return rows_option_; }
  std::size_t size() const { return net_.size(); }
  std::span<const double> scheduled() const { return scheduled_; }

  ad::CompGraph& graph() { return graph_; }
  ad::NodeId loss_node() const { return loss_node_; }

  StateVector flat_start() const { return StateVector::flat_start(net_); }

  /// Injections g(x) in layout row order for a packed state.
  std::vector<double> injection_rows(std::span<const double> packed) const {
    StateVector s = scratch_state();
    s.unpack(packed);
    return select_rows(injections(s, y_));
  }

  std::vector<double> select_rows(const Injections& inj) const {
    std::vector<double> out(layout_->rows.size());
    for (std::size_t r = 0; r < out.size(); ++r) {
      const auto& row = layout_->rows[r];
      out[r] = row.quantity == Quantity::P ? inj.p[row.bus] : inj.q[row.bus];
    }
    return out;
  }

  void check(const StateVector& state) const {
    if (state.size() != size() || state.theta.size() != size()) throw std::invalid_argument("state dimension mismatch");
  }

 private:
  StateVector scratch_state() const {
    StateVector s;
    s.v.assign(size(), 1.0);
    s.theta.assign(size(), 0.0);
    return s;
  }

  // Builds a*x + b*y, dropping zero coefficients.
  ad::NodeId linear(double a, ad::NodeId x, double b, ad::NodeId y) {
    const bool use_x = a != 0.0 && x.valid();
    const bool use_y = b != 0.0 && y.valid();
    if (use_x && use_y) return graph_.add(graph_.mul(graph_.constant(a), x), graph_.mul(graph_.constant(b), y));
    if (use_x) return graph_.mul(graph_.constant(a), x);
    if (use_y) return graph_.mul(graph_.constant(b), y);
    return graph_.constant(0.0);
  }

  void build_graph() {
    const auto n = size();
    std::vector<ad::NodeId> theta(n), v(n);
    for (auto& t : theta) t = graph_.input();
    for (auto& m : v) m = graph_.input();

    // c_km and s_km for k < m; c_mk = c_km and s_mk = -s_km reuse them.
    std::vector<std::vector<std::pair<ad::NodeId, ad::NodeId>>> pairs(n);
    for (std::size_t k = 0; k < n; ++k) {
      const auto row = y_.row(k);
      pairs[k].resize(row.size());
      for (std::size_t j = 0; j < row.size(); ++j) {
        const auto m = row[j].col;
        if (m <= k) continue;
        const auto d = graph_.sub(theta[k], theta[m]);
        const auto vv = graph_.mul(v[k], v[m]);
        pairs[k][j] = {graph_.mul(vv, graph_.cos(d)), graph_.mul(vv, graph_.sin(d))};
      }
    }
    auto lookup = [&](std::size_t k, std::size_t m) {
      const auto row = y_.row(k);
      for (std::size_t j = 0; j < row.size(); ++j)
        if (row[j].col == m) return pairs[k][j];
      throw std::logic_error("admittance pattern is not structurally symmetric");
    };

    std::vector<ad::NodeId> p(n), q(n);
    for (std::size_t k = 0; k < n; ++k) {
      ad::NodeId p_sum, q_sum;
      for (const auto& e : y_.row(k)) {
        const auto m = e.col;
        const double g = e.value.real();
        const double b = e.value.imag();
        ad::NodeId pl, ql;
        if (m == k) {
          const auto c = graph_.square(v[k]);
          pl = linear(g, c, 0.0, {});
          ql = linear(-b, c, 0.0, {});
        } else if (m > k) {
          const auto [c, s] = lookup(k, m);
          pl = linear(g, c, b, s);
          ql = linear(g, s, -b, c);
        } else {
          const auto [c, s_mk] = lookup(m, k);
          pl = linear(g, c, -b, s_mk);
          ql = linear(-g, s_mk, -b, c);
        }
        p_sum = p_sum.valid() ? graph_.add(p_sum, pl) : pl;
        q_sum = q_sum.valid() ? graph_.add(q_sum, ql) : ql;
      }
      p[k] = p_sum;
      q[k] = q_sum;
    }
    for (auto id : p) graph_.mark_output(id);
    for (auto id : q) graph_.mark_output(id);

    ad::NodeId total;
    for (std::size_t r = 0; r < layout_->rows.size(); ++r) {
      const auto& row = layout_->rows[r];
      const auto g = row.quantity == Quantity::P ? p[row.bus] : q[row.bus];
      const auto sq = graph_.square(graph_.sub(graph_.constant(scheduled_[r]), g));
      total = total.valid() ? graph_.add(total, sq) : sq;
    }
    loss_node_ = graph_.mul(graph_.constant(0.5), total);
  }

  NetworkCase net_;
  ResidualRows rows_option_;
  AdmittanceMatrix y_;
  BusClasses classes_;
  std::shared_ptr<const Layout> layout_;
  std::vector<double> scheduled_;
  ad::CompGraph graph_;
  ad::NodeId loss_node_;
};

inline Residual residual(const FlowModel& model, const StateVector& state) {
  model.check(state);
  Residual res;
  res.layout = model.layout_ptr();
  res.values = model.select_rows(injections(state, model.admittance()));
  const auto sched = model.scheduled();
  for (std::size_t r = 0; r < res.values.size(); ++r) res.values[r] = sched[r] - res.values[r];
  return res;
}

/// Residual restricted to the square Newton rows (dP non-ref, dQ_PQ).
inline std::vector<double> reduced(const Residual& res) {
  std::vector<double> out;
  out.reserve(res.layout->reduced_rows.size());
  for (auto r : res.layout->reduced_rows) out.push_back(res.values[r]);
  return out;
}

inline double inf_norm(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

/// d g / d x in layout order: rows are residual rows, columns are
/// [theta_ref | theta_PV | theta_PQ | V_ref, V_PV | V_PQ]. To first order
/// residual(x + dx) = residual(x) - J dx. Pinned columns are zero.
struct JacobianFull {
  Eigen::SparseMatrix<double> matrix;
  std::shared_ptr<const Layout> layout;

  Eigen::MatrixXd dense() const { return Eigen::MatrixXd(matrix); }

  double at(std::size_t row, std::size_t col) const {
    return matrix.coeff(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
  }

  /// Classical blocks: H = (P, Theta), N = (P, V), J = (Q, Theta), L = (Q, V).
  Eigen::MatrixXd block(Quantity q, Variable var) const {
    std::vector<std::size_t> rs, cs;
    for (std::size_t r = 0; r < layout->rows.size(); ++r)
      if (layout->rows[r].quantity == q) rs.push_back(r);
    for (std::size_t c = 0; c < layout->cols.size(); ++c)
      if (layout->cols[c].variable == var) cs.push_back(c);
    const Eigen::MatrixXd full = dense();
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rs.size()), static_cast<Eigen::Index>(cs.size()));
    for (std::size_t i = 0; i < rs.size(); ++i)
      for (std::size_t j = 0; j < cs.size(); ++j)
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            full(static_cast<Eigen::Index>(rs[i]), static_cast<Eigen::Index>(cs[j]));
    return out;
  }

  /// Square Newton matrix: reduced rows x free columns.
  Eigen::SparseMatrix<double> reduced() const {
    const auto& l = *layout;
    std::vector<std::int64_t> row_map(l.rows.size(), -1), col_map(l.cols.size(), -1);
    for (std::size_t i = 0; i < l.reduced_rows.size(); ++i) row_map[l.reduced_rows[i]] = static_cast<std::int64_t>(i);
    for (std::size_t j = 0; j < l.reduced_cols.size(); ++j) col_map[l.reduced_cols[j]] = static_cast<std::int64_t>(j);
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(matrix.nonZeros()));
    for (Eigen::Index c = 0; c < matrix.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator it(matrix, c); it; ++it) {
        const auto rr = row_map[static_cast<std::size_t>(it.row())];
        const auto cc = col_map[static_cast<std::size_t>(it.col())];
        if (rr >= 0 && cc >= 0) trips.emplace_back(rr, cc, it.value());
      }
    Eigen::SparseMatrix<double> out(static_cast<Eigen::Index>(l.reduced_rows.size()),
                                    static_cast<Eigen::Index>(l.reduced_cols.size()));
    out.setFromTriplets(trips.begin(), trips.end());
    return out;
  }
};

namespace detail {

inline JacobianFull assemble(const FlowModel& model, std::vector<Eigen::Triplet<double>>& trips) {
  JacobianFull j;
  j.layout = model.layout_ptr();
  j.matrix.resize(static_cast<Eigen::Index>(j.layout->rows.size()), static_cast<Eigen::Index>(j.layout->cols.size()));
  j.matrix.setFromTriplets(trips.begin(), trips.end());
  return j;
}

inline std::int64_t row_for_output(const Layout& l, std::size_t output) {
  return output < l.n ? l.row_of_p[output] : l.row_of_q[output - l.n];
}

}  // namespace detail

/// Jacobian from the computational graph: one forward-mode column per free
/// state variable, each visiting only the nodes that depend on it.
/// With `include_pinned` the pinned columns are filled too (used for loss
/// gradients that report every component).
inline JacobianFull jacobian_ad(FlowModel& model, const StateVector& state, bool include_pinned = false) {
  model.check(state);
  auto& g = model.graph();
  const auto x = state.packed();
  g.forward_eval(x);
  const auto& l = model.layout();
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t var = 0; var < x.size(); ++var) {
    if (!include_pinned && !state.mask.free(var)) continue;
    const auto col = static_cast<Eigen::Index>(l.col_of_var[var]);
    g.visit_column(var, [&](std::size_t output, double d) {
      const auto row = detail::row_for_output(l, output);
      if (row >= 0) trips.emplace_back(row, col, d);
    });
  }
  return detail::assemble(model, trips);
}

/// Closed-form trigonometric partials of the injection equations. Independent
/// of the graph; serves as its oracle.
inline JacobianFull jacobian_analytic(const FlowModel& model, const StateVector& state, bool include_pinned = false) {
  model.check(state);
  const auto& y = model.admittance();
  const auto& l = model.layout();
  const auto n = model.size();
  const auto inj = injections(state, y);
  const auto& V = state.v;
  const auto& th = state.theta;
  std::vector<Eigen::Triplet<double>> trips;
  auto put = [&](std::size_t k, Quantity q, std::size_t m, Variable var, double value) {
    const auto packed = m + (var == Variable::V ? n : 0);
    if (!include_pinned && !state.mask.free(packed)) return;
    const auto row = q == Quantity::P ? l.row_of_p[k] : l.row_of_q[k];
    if (row < 0) return;
    trips.emplace_back(row, static_cast<Eigen::Index>(l.col_of_var[packed]), value);
  };
  for (std::size_t k = 0; k < n; ++k) {
    const double gkk = y.conductance(k, k);
    const double bkk = y.susceptance(k, k);
    put(k, Quantity::P, k, Variable::Theta, -inj.q[k] - bkk * V[k] * V[k]);
    put(k, Quantity::P, k, Variable::V, inj.p[k] / V[k] + gkk * V[k]);
    put(k, Quantity::Q, k, Variable::Theta, inj.p[k] - gkk * V[k] * V[k]);
    put(k, Quantity::Q, k, Variable::V, inj.q[k] / V[k] - bkk * V[k]);
    for (const auto& e : y.row(k)) {
      const auto m = e.col;
      if (m == k) continue;
      const double g = e.value.real();
      const double b = e.value.imag();
      const double d = th[k] - th[m];
      const double gc_bs = g * std::cos(d) + b * std::sin(d);
      const double gs_bc = g * std::sin(d) - b * std::cos(d);
      put(k, Quantity::P, m, Variable::Theta, V[k] * V[m] * gs_bc);
      put(k, Quantity::P, m, Variable::V, V[k] * gc_bs);
      put(k, Quantity::Q, m, Variable::Theta, -V[k] * V[m] * gc_bs);
      put(k, Quantity::Q, m, Variable::V, V[k] * gs_bc);
    }
  }
  return detail::assemble(model, trips);
}

/// Finite-difference Jacobian of the injection rows. Only exact zeros are
/// dropped, which is exact for untouched rows since they are recomputed
/// bit-identically. `count` receives the evaluation tally.
inline JacobianFull jacobian_numeric(const FlowModel& model, const StateVector& state, fd::Scheme scheme,
                                     double h = fd::default_step, bool include_pinned = false,
                                     fd::EvalCount* count = nullptr) {
  model.check(state);
  const auto x = state.packed();
  const auto& l = model.layout();
  std::vector<std::size_t> vars;
  for (std::size_t var = 0; var < x.size(); ++var)
    if (include_pinned || state.mask.free(var)) vars.push_back(var);
  std::vector<double> sub(vars.size());
  for (std::size_t i = 0; i < vars.size(); ++i) sub[i] = x[vars[i]];

  std::vector<double> full(x);
  auto f = [&](std::span<const double> z) {
    for (std::size_t i = 0; i < vars.size(); ++i) full[vars[i]] = z[i];
    return model.injection_rows(full);
  };
  std::vector<Eigen::Triplet<double>> trips;
  const auto tally = fd::for_each_column(f, sub, h, scheme, [&](std::size_t i, std::span<const double> column) {
    const auto col = static_cast<Eigen::Index>(l.col_of_var[vars[i]]);
    for (std::size_t r = 0; r < column.size(); ++r)
      if (column[r] != 0.0) trips.emplace_back(static_cast<Eigen::Index>(r), col, column[r]);
  });
  if (count) *count = tally;
  return detail::assemble(model, trips);
}

inline JacobianFull jacobian(FlowModel& model, const StateVector& state, DiffEngine engine,
                             bool include_pinned = false, fd::EvalCount* count = nullptr) {
  switch (engine) {
    case DiffEngine::AutoDiff: return jacobian_ad(model, state, include_pinned);
    case DiffEngine::NumericForward:
      return jacobian_numeric(model, state, fd::Scheme::Forward, fd::default_step, include_pinned, count);
    case DiffEngine::NumericCentral:
      return jacobian_numeric(model, state, fd::Scheme::Central, fd::default_step, include_pinned, count);
  }
  throw std::invalid_argument("unknown differentiation engine");
}

/// Loss gradient -J^T residual in packed [theta; V] order.
inline std::vector<double> gradient_from_jacobian(const JacobianFull& j, const Residual& res) {
  const Eigen::Map<const Eigen::VectorXd> r(res.values.data(), static_cast<Eigen::Index>(res.values.size()));
  const Eigen::VectorXd by_col = -(j.matrix.transpose() * r);
  std::vector<double> out(j.layout->cols.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[j.layout->var_of_col[c]] = by_col(static_cast<Eigen::Index>(c));
  return out;
}

/// Gradient of the loss over every state component (pinned ones included;
/// solvers mask them). AutoDiff uses one reverse sweep of the loss node;
/// the numeric engines difference the injection rows and form -J^T residual.
inline std::vector<double> gradient_loss(FlowModel& model, const StateVector& state,
                                         DiffEngine engine = DiffEngine::AutoDiff) {
  model.check(state);
  if (engine == DiffEngine::AutoDiff) {
    auto& g = model.graph();
    g.forward_eval(state.packed());
    return g.reverse_sweep(model.loss_node());
  }
  const auto j = jacobian(model, state, engine, true);
  return gradient_from_jacobian(j, residual(model, state));
}

inline std::string label(const NetworkCase& net, const RowLabel& r) {
  return std::string(r.quantity == Quantity::P ? "P_" : "Q_") + std::to_string(net.buses[r.bus].id);
}

inline std::string label(const NetworkCase& net, const ColLabel& c) {
  return std::string(c.variable == Variable::Theta ? "theta_" : "V_") + std::to_string(net.buses[c.bus].id);
}

/// CSV `row,value`.
inline void write_residual_csv(std::ostream& os, const NetworkCase& net, const Residual& res) {
  os << std::setprecision(17) << "row,value\n";
  for (std::size_t r = 0; r < res.values.size(); ++r) os << label(net, res.layout->rows[r]) << ',' << res.values[r] << '\n';
}

/// CSV `row,col,value` over the stored nonzeros, column-major.
inline void write_jacobian_csv(std::ostream& os, const NetworkCase& net, const JacobianFull& j) {
  os << std::setprecision(17) << "row,col,value\n";
  for (Eigen::Index c = 0; c < j.matrix.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator it(j.matrix, c); it; ++it)
      os << label(net, j.layout->rows[static_cast<std::size_t>(it.row())]) << ','
         << label(net, j.layout->cols[static_cast<std::size_t>(it.col())]) << ',' << it.value() << '\n';
}

}  // namespace acpf
