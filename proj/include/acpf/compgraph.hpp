#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace acpf::ad {

enum class Op : std::uint8_t { Input, Const, Add, Sub, Mul, Sin, Cos, Square, Neg };

constexpr int arity(Op op) {
  switch (op) {
    case Op::Input:
    case Op::Const: return 0;
    case Op::Sin:
    case Op::Cos:
    case Op::Square:
    case Op::Neg: return 1;
    case Op::Add:
    case Op::Sub:
    case Op::Mul: return 2;
  }
  return -1;
}

constexpr std::string_view op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::Const: return "const";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Square: return "square";
    case Op::Neg: return "neg";
  }
  return "?";
}

/// Position of a node on the tape.
struct NodeId {
  static constexpr std::uint32_t none = std::numeric_limits<std::uint32_t>::max();
  std::uint32_t index = none;

  bool valid() const { return index != none; }
  auto operator<=>(const NodeId&) const = default;
};

struct Node {
  Op op = Op::Const;
  NodeId lhs;
  NodeId rhs;
  double value = 0.0;
  double adjoint = 0.0;
};

/// Scalar computational graph recorded as a tape.
///
/// Nodes are appended in construction order and may only reference earlier
/// nodes, so tape order is always a topological order. The structure is built
/// once; values are refreshed by forward_eval with new inputs.
class CompGraph {
 public:
  NodeId input() {
    const NodeId id = push(Op::Input, {}, {});
    inputs_.push_back(id);
    return id;
  }

  NodeId constant(double value) {
    const NodeId id = push(Op::Const, {}, {});
    tape_[id.index].value = value;
    return id;
  }

  NodeId add(NodeId a, NodeId b) { return push(Op::Add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return push(Op::Sub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return push(Op::Mul, a, b); }
  NodeId sin(NodeId a) { return push(Op::Sin, a, {}); }
  NodeId cos(NodeId a) { return push(Op::Cos, a, {}); }
  NodeId square(NodeId a) { return push(Op::Square, a, {}); }
  NodeId neg(NodeId a) { return push(Op::Neg, a, {}); }

  /// Appends a node after checking its arity and that parents precede it.
  NodeId push(Op op, NodeId lhs, NodeId rhs) {
    const int given = int(lhs.valid()) + int(rhs.valid());
    if (given != arity(op) || (rhs.valid() && !lhs.valid()))
      throw std::invalid_argument("arity mismatch for op '" + std::string(op_name(op)) + "'");
    const auto next = static_cast<std::uint32_t>(tape_.size());
    if ((lhs.valid() && lhs.index >= next) || (rhs.valid() && rhs.index >= next))
      throw std::invalid_argument("parent is not on the tape");
    tape_.push_back(Node{op, lhs, rhs, 0.0, 0.0});
    output_slot_.push_back(-1);
    cones_ready_ = false;
    evaluated_ = false;
    return NodeId{next};
  }

  void mark_output(NodeId id) {
    check(id);
    if (output_slot_[id.index] >= 0) throw std::invalid_argument("node already marked as output");
    output_slot_[id.index] = static_cast<std::int32_t>(outputs_.size());
    outputs_.push_back(id);
    cones_ready_ = false;
  }

  std::size_t size() const { return tape_.size(); }
  std::span<const Node> tape() const { return tape_; }
  std::span<const NodeId> inputs() const { return inputs_; }
  std::span<const NodeId> outputs() const { return outputs_; }
  const Node& node(NodeId id) const {
    check(id);
    return tape_[id.index];
  }
  double value(NodeId id) const { return node(id).value; }
  double adjoint(NodeId id) const { return node(id).adjoint; }

  /// Evaluates every node in tape order and returns the output values.
  std::vector<double> forward_eval(std::span<const double> input_values) {
    load_inputs(input_values);
    for (auto& nd : tape_) {
      switch (nd.op) {
        case Op::Input:
        case Op::Const: break;
        case Op::Add: nd.value = tape_[nd.lhs.index].value + tape_[nd.rhs.index].value; break;
        case Op::Sub: nd.value = tape_[nd.lhs.index].value - tape_[nd.rhs.index].value; break;
        case Op::Mul: nd.value = tape_[nd.lhs.index].value * tape_[nd.rhs.index].value; break;
        case Op::Sin: nd.value = std::sin(tape_[nd.lhs.index].value); break;
        case Op::Cos: nd.value = std::cos(tape_[nd.lhs.index].value); break;
        case Op::Square: {
          const double a = tape_[nd.lhs.index].value;
          nd.value = a * a;
          break;
        }
        case Op::Neg: nd.value = -tape_[nd.lhs.index].value; break;
      }
    }
    evaluated_ = true;
    std::vector<double> out(outputs_.size());
    for (std::size_t i = 0; i < outputs_.size(); ++i) out[i] = tape_[outputs_[i].index].value;
    return out;
  }

  /// Reverse accumulation from `output`; returns d(output)/d(input) per input.
  /// Requires a preceding forward_eval on the current inputs.
  std::vector<double> reverse_sweep(NodeId output) {
    if (!output.valid() || output.index >= tape_.size()) throw std::out_of_range("output not on tape");
    if (!evaluated_) throw std::logic_error("reverse_sweep before forward_eval");
    for (auto& nd : tape_) nd.adjoint = 0.0;
    tape_[output.index].adjoint = 1.0;
    for (std::size_t i = output.index + 1; i-- > 0;) {
      const Node& nd = tape_[i];
      const double g = nd.adjoint;
      if (g == 0.0) continue;
      switch (nd.op) {
        case Op::Input:
        case Op::Const: break;
        case Op::Add:
          tape_[nd.lhs.index].adjoint += g;
          tape_[nd.rhs.index].adjoint += g;
          break;
        case Op::Sub:
          tape_[nd.lhs.index].adjoint += g;
          tape_[nd.rhs.index].adjoint -= g;
          break;
        case Op::Mul: {
          const double a = tape_[nd.lhs.index].value;
          const double b = tape_[nd.rhs.index].value;
          tape_[nd.lhs.index].adjoint += g * b;
          tape_[nd.rhs.index].adjoint += g * a;
          break;
        }
        case Op::Sin: tape_[nd.lhs.index].adjoint += g * std::cos(tape_[nd.lhs.index].value); break;
        case Op::Cos: tape_[nd.lhs.index].adjoint -= g * std::sin(tape_[nd.lhs.index].value); break;
        case Op::Square: tape_[nd.lhs.index].adjoint += g * 2.0 * tape_[nd.lhs.index].value; break;
        case Op::Neg: tape_[nd.lhs.index].adjoint -= g; break;
      }
    }
    std::vector<double> grad(inputs_.size());
    for (std::size_t i = 0; i < inputs_.size(); ++i) grad[i] = tape_[inputs_[i].index].adjoint;
    return grad;
  }

  /// Dual-number propagation: returns the directional derivative of every
  /// output along `tangent`. Also refreshes node values.
  std::vector<double> forward_jvp(std::span<const double> input_values, std::span<const double> tangent) {
    if (tangent.size() != inputs_.size()) throw std::invalid_argument("tangent size mismatch");
    load_inputs(input_values);
    std::vector<double> dot(tape_.size(), 0.0);
    for (std::size_t i = 0; i < inputs_.size(); ++i) dot[inputs_[i].index] = tangent[i];
    for (std::size_t i = 0; i < tape_.size(); ++i) {
      auto& nd = tape_[i];
      const double av = nd.lhs.valid() ? tape_[nd.lhs.index].value : 0.0;
      const double bv = nd.rhs.valid() ? tape_[nd.rhs.index].value : 0.0;
      const double ad = nd.lhs.valid() ? dot[nd.lhs.index] : 0.0;
      const double bd = nd.rhs.valid() ? dot[nd.rhs.index] : 0.0;
      switch (nd.op) {
        case Op::Input:
        case Op::Const: break;
        case Op::Add: nd.value = av + bv; dot[i] = ad + bd; break;
        case Op::Sub: nd.value = av - bv; dot[i] = ad - bd; break;
        case Op::Mul: nd.value = av * bv; dot[i] = ad * bv + av * bd; break;
        case Op::Sin: nd.value = std::sin(av); dot[i] = std::cos(av) * ad; break;
        case Op::Cos: nd.value = std::cos(av); dot[i] = -std::sin(av) * ad; break;
        case Op::Square: nd.value = av * av; dot[i] = 2.0 * av * ad; break;
        case Op::Neg: nd.value = -av; dot[i] = -ad; break;
      }
    }
    evaluated_ = true;
    std::vector<double> out(outputs_.size());
    for (std::size_t i = 0; i < outputs_.size(); ++i) out[i] = dot[outputs_[i].index];
    return out;
  }

  /// Forward-mode column for a unit tangent on input `input_pos`, visiting only
  /// the nodes reachable from that input. Calls `visit(output_pos, derivative)`
  /// for every output in the reachable set. Requires forward_eval first.
  template <class Visit>
  void visit_column(std::size_t input_pos, Visit&& visit) {
    if (!evaluated_) throw std::logic_error("visit_column before forward_eval");
    if (input_pos >= inputs_.size()) throw std::out_of_range("input position");
    prepare_cones();
    if (scratch_.size() != tape_.size()) scratch_.assign(tape_.size(), 0.0);
    const auto begin = cone_offsets_[input_pos];
    const auto end = cone_offsets_[input_pos + 1];
    for (auto c = begin; c < end; ++c) {
      const auto i = cone_nodes_[c];
      const auto& nd = tape_[i];
      double d = 0.0;
      switch (nd.op) {
        case Op::Input: d = 1.0; break;
        case Op::Const: break;
        case Op::Add: d = scratch_[nd.lhs.index] + scratch_[nd.rhs.index]; break;
        case Op::Sub: d = scratch_[nd.lhs.index] - scratch_[nd.rhs.index]; break;
        case Op::Mul:
          d = scratch_[nd.lhs.index] * tape_[nd.rhs.index].value +
              tape_[nd.lhs.index].value * scratch_[nd.rhs.index];
          break;
        case Op::Sin: d = std::cos(tape_[nd.lhs.index].value) * scratch_[nd.lhs.index]; break;
        case Op::Cos: d = -std::sin(tape_[nd.lhs.index].value) * scratch_[nd.lhs.index]; break;
        case Op::Square: d = 2.0 * tape_[nd.lhs.index].value * scratch_[nd.lhs.index]; break;
        case Op::Neg: d = -scratch_[nd.lhs.index]; break;
      }
      scratch_[i] = d;
      if (output_slot_[i] >= 0) visit(static_cast<std::size_t>(output_slot_[i]), d);
    }
    for (auto c = begin; c < end; ++c) scratch_[cone_nodes_[c]] = 0.0;
  }

  /// Total number of nodes over all input cones (work for a full Jacobian).
  std::size_t cone_work() {
    prepare_cones();
    return cone_nodes_.size();
  }

  /// Line-oriented tape dump: `id op parent1 parent2 value adjoint`, `-` for
  /// missing parents.
  void dump(std::ostream& os) const {
    os << std::setprecision(17);
    for (std::size_t i = 0; i < tape_.size(); ++i) {
      const auto& nd = tape_[i];
      os << i << ' ' << op_name(nd.op) << ' ';
      if (nd.lhs.valid()) os << nd.lhs.index; else os << '-';
      os << ' ';
      if (nd.rhs.valid()) os << nd.rhs.index; else os << '-';
      os << ' ' << nd.value << ' ' << nd.adjoint << '\n';
    }
  }

  std::string dump() const {
    std::ostringstream os;
    dump(os);
    return os.str();
  }

 private:
  void check(NodeId id) const {
    if (!id.valid() || id.index >= tape_.size()) throw std::out_of_range("node not on tape");
  }

  void load_inputs(std::span<const double> values) {
    if (values.size() != inputs_.size()) throw std::invalid_argument("input size mismatch");
    for (std::size_t i = 0; i < inputs_.size(); ++i) tape_[inputs_[i].index].value = values[i];
  }

  // Forward-reachable node sets per input, restricted to the tape prefix that
  // ends at the last output. Stored flat, each set in tape order.
  void prepare_cones() {
    if (cones_ready_) return;
    std::size_t limit = 0;
    for (auto o : outputs_) limit = std::max<std::size_t>(limit, o.index + 1);

    std::vector<std::uint32_t> child_offsets(limit + 1, 0);
    for (std::size_t i = 0; i < limit; ++i) {
      const auto& nd = tape_[i];
      if (nd.lhs.valid()) ++child_offsets[nd.lhs.index + 1];
      if (nd.rhs.valid() && nd.rhs != nd.lhs) ++child_offsets[nd.rhs.index + 1];
    }
    for (std::size_t i = 0; i < limit; ++i) child_offsets[i + 1] += child_offsets[i];
    std::vector<std::uint32_t> children(child_offsets[limit]);
    std::vector<std::uint32_t> fill(child_offsets.begin(), child_offsets.end() - 1);
    for (std::size_t i = 0; i < limit; ++i) {
      const auto& nd = tape_[i];
      if (nd.lhs.valid()) children[fill[nd.lhs.index]++] = static_cast<std::uint32_t>(i);
      if (nd.rhs.valid() && nd.rhs != nd.lhs) children[fill[nd.rhs.index]++] = static_cast<std::uint32_t>(i);
    }

    cone_offsets_.assign(1, 0);
    cone_nodes_.clear();
    std::vector<std::size_t> stamp(limit, 0);
    std::vector<std::uint32_t> stack;
    for (std::size_t k = 0; k < inputs_.size(); ++k) {
      const auto start = inputs_[k].index;
      const auto first = cone_nodes_.size();
      if (start < limit) {
        stack.assign(1, start);
        stamp[start] = k + 1;
        while (!stack.empty()) {
          const auto i = stack.back();
          stack.pop_back();
          cone_nodes_.push_back(i);
          for (auto c = child_offsets[i]; c < child_offsets[i + 1]; ++c) {
            const auto ch = children[c];
            if (stamp[ch] != k + 1) {
              stamp[ch] = k + 1;
              stack.push_back(ch);
            }
          }
        }
        std::sort(cone_nodes_.begin() + static_cast<std::ptrdiff_t>(first), cone_nodes_.end());
      }
      cone_offsets_.push_back(cone_nodes_.size());
    }
    cones_ready_ = true;
  }

  std::vector<Node> tape_;
  std::vector<NodeId> inputs_;
  std::vector<NodeId> outputs_;
  std::vector<std::int32_t> output_slot_;
  bool evaluated_ = false;

  bool cones_ready_ = false;
  std::vector<std::size_t> cone_offsets_;
  std::vector<std::uint32_t> cone_nodes_;
  std::vector<double> scratch_;
};

}  // namespace acpf::ad
