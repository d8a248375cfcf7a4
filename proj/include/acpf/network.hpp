#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace acpf {

enum class BusKind : std::uint8_t { Ref, PV, PQ };

inline std::string_view to_string(BusKind kind) {
  switch (kind) {
    case BusKind::Ref: return "Ref";
    case BusKind::PV: return "PV";
    case BusKind::PQ: return "PQ";
  }
  return "?";
}

/// Electrical data of one bus, all quantities in per-unit on the case base.
struct Bus {
  int id = 0;  ///< external (case-file) bus number
  BusKind kind = BusKind::PQ;
  double p_demand = 0.0;
  double q_demand = 0.0;
  double p_gen = 0.0;
  double q_gen = 0.0;
  double v_set = 1.0;
  double v_min = 0.9;
  double v_max = 1.1;
  double shunt_g = 0.0;
  double shunt_b = 0.0;

  double p_net() const { return p_gen - p_demand; }
  double q_net() const { return q_gen - q_demand; }

  bool operator==(const Bus&) const = default;
};

/// Series branch in the standard pi model. `from`/`to` are internal indices.
struct Branch {
  std::size_t from = 0;
  std::size_t to = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charging = 0.0;
  double tap = 1.0;
  double phase_shift = 0.0;  ///< radians

  bool operator==(const Branch&) const = default;
};

/// Raised for malformed case text and for violated case invariants.
/// `line()` is 0 when the problem is not tied to a particular line.
class CaseError : public std::runtime_error {
 public:
  CaseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

struct NetworkCase {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  /// Non-fatal findings from parsing (disconnected islands, PV buses demoted to PQ, ...).
  std::vector<std::string> warnings;

  std::size_t size() const { return buses.size(); }

  std::optional<std::size_t> index_of(int external_id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == external_id) return i;
    return std::nullopt;
  }
};

struct BusClasses {
  std::vector<std::size_t> ref;
  std::vector<std::size_t> pv;
  std::vector<std::size_t> pq;
};

inline BusClasses classify_buses(const NetworkCase& net) {
  BusClasses out;
  for (std::size_t i = 0; i < net.buses.size(); ++i) {
    switch (net.buses[i].kind) {
      case BusKind::Ref: out.ref.push_back(i); break;
      case BusKind::PV: out.pv.push_back(i); break;
      case BusKind::PQ: out.pq.push_back(i); break;
    }
  }
  return out;
}

inline bool is_connected(const NetworkCase& net) {
  const std::size_t n = net.size();
  if (n <= 1) return true;
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& br : net.branches) {
    adj[br.from].push_back(br.to);
    adj[br.to].push_back(br.from);
  }
  std::vector<bool> seen(n, false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!stack.empty()) {
    const auto k = stack.back();
    stack.pop_back();
    for (auto m : adj[k]) {
      if (!seen[m]) {
        seen[m] = true;
        ++count;
        stack.push_back(m);
      }
    }
  }
  return count == n;
}

/// Checks every NetworkCase invariant; throws CaseError on the first violation.
inline void validate(const NetworkCase& net) {
  if (net.buses.empty()) throw CaseError("case has no buses");
  if (!(net.base_mva > 0.0)) throw CaseError("baseMVA must be positive");
  std::size_t refs = 0;
  for (const auto& bus : net.buses) {
    if (bus.kind == BusKind::Ref) ++refs;
    if (!(bus.v_min > 0.0) || bus.v_min > bus.v_max)
      throw CaseError("bus " + std::to_string(bus.id) + ": invalid voltage bounds");
    if (bus.kind != BusKind::PQ && (bus.v_set < bus.v_min || bus.v_set > bus.v_max))
      throw CaseError("bus " + std::to_string(bus.id) + ": voltage set-point outside bounds");
  }
  if (refs == 0) throw CaseError("no reference bus");
  if (refs > 1) throw CaseError("multiple reference buses");
  for (const auto& br : net.branches) {
    if (br.from >= net.size() || br.to >= net.size())
      throw CaseError("branch references unknown bus");
    if (br.from == br.to) throw CaseError("branch connects a bus to itself");
    if (br.r < 0.0) throw CaseError("branch with negative resistance");
    if (br.r == 0.0 && br.x == 0.0) throw CaseError("branch with zero impedance");
  }
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::string_view strip_comment(std::string_view line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\'') in_string = !in_string;
    if (line[i] == '%' && !in_string) return line.substr(0, i);
  }
  return line;
}

inline double parse_number(std::string_view tok, std::size_t line) {
  if (tok == "Inf" || tok == "inf") return std::numeric_limits<double>::infinity();
  if (tok == "-Inf" || tok == "-inf") return -std::numeric_limits<double>::infinity();
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  double value = 0.0;
  const auto* end = tok.data() + tok.size();
  const auto [ptr, ec] = std::from_chars(tok.data(), end, value);
  if (ec != std::errc{} || ptr != end)
    throw CaseError("invalid number '" + std::string(tok) + "'", line);
  return value;
}

struct MatrixRow {
  std::vector<double> values;
  std::size_t line = 0;
};

// Splits the body of a `[ ... ]` literal into rows. Rows end at ';' or newline.
inline void split_rows(std::string_view body, std::size_t line, std::vector<MatrixRow>& rows) {
  std::size_t start = 0;
  for (std::size_t i = 0; i <= body.size(); ++i) {
    if (i == body.size() || body[i] == ';') {
      auto chunk = body.substr(start, i - start);
      MatrixRow row;
      row.line = line;
      std::size_t j = 0;
      while (j < chunk.size()) {
        while (j < chunk.size() && (chunk[j] == ' ' || chunk[j] == '\t' || chunk[j] == ',' ||
                                    chunk[j] == '\r'))
          ++j;
        std::size_t k = j;
        while (k < chunk.size() && chunk[k] != ' ' && chunk[k] != '\t' && chunk[k] != ',' &&
               chunk[k] != '\r')
          ++k;
        if (k > j) row.values.push_back(parse_number(chunk.substr(j, k - j), line));
        j = k;
      }
      if (!row.values.empty()) rows.push_back(std::move(row));
      start = i + 1;
    }
  }
}

struct RawCase {
  std::optional<double> base_mva;
  std::map<std::string, std::vector<MatrixRow>, std::less<>> matrices;
  std::string name;
};

inline RawCase scan_case(std::string_view text) {
  RawCase raw;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  std::string current;     // name of the open matrix, empty when none
  char closing = 0;        // closing bracket of a skipped or open literal
  std::size_t open_line = 0;

  while (pos <= text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    ++line_no;
    auto line = trim(strip_comment(text.substr(pos, eol - pos)));
    pos = eol + 1;

    if (closing != 0) {
      const auto close = line.find(closing);
      auto body = close == std::string_view::npos ? line : line.substr(0, close);
      if (!current.empty()) split_rows(body, line_no, raw.matrices[current]);
      if (close != std::string_view::npos) {
        closing = 0;
        current.clear();
      }
      continue;
    }
    if (line.empty()) continue;

    if (line.starts_with("function")) {
      const auto eq = line.find('=');
      if (eq != std::string_view::npos) raw.name = std::string(trim(line.substr(eq + 1)));
      continue;
    }
    if (!line.starts_with("mpc.")) {
      throw CaseError("unexpected statement '" + std::string(line) + "'", line_no);
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw CaseError("expected '='", line_no);
    const auto field = trim(line.substr(4, eq - 4));
    auto rhs = trim(line.substr(eq + 1));

    const bool wanted = field == "bus" || field == "gen" || field == "branch";
    if (!rhs.empty() && (rhs.front() == '[' || rhs.front() == '{')) {
      const char close_ch = rhs.front() == '[' ? ']' : '}';
      rhs.remove_prefix(1);
      const auto close = rhs.find(close_ch);
      if (wanted) {
        if (raw.matrices.contains(field)) throw CaseError("duplicate matrix mpc." + std::string(field), line_no);
        auto& rows = raw.matrices[std::string(field)];
        split_rows(close == std::string_view::npos ? rhs : rhs.substr(0, close), line_no, rows);
      }
      if (close == std::string_view::npos) {
        closing = close_ch;
        open_line = line_no;
        current = wanted ? std::string(field) : std::string{};
      }
      continue;
    }
    if (field == "baseMVA") {
      auto value = rhs;
      if (!value.empty() && value.back() == ';') value.remove_suffix(1);
      raw.base_mva = parse_number(trim(value), line_no);
      continue;
    }
    // Scalar or string fields we do not use (version, ...).
  }
  if (closing != 0) throw CaseError("unterminated matrix literal", open_line);
  return raw;
}

inline void require_columns(const MatrixRow& row, std::size_t count, std::string_view table) {
  if (row.values.size() < count)
    throw CaseError(std::string(table) + " row has " + std::to_string(row.values.size()) +
                        " columns, expected at least " + std::to_string(count),
                    row.line);
}

inline int as_int(double v, std::size_t line) {
  if (v != std::floor(v)) throw CaseError("expected integer, got " + std::to_string(v), line);
  return static_cast<int>(v);
}

}  // namespace detail

/// Parses a MATPOWER-style case (baseMVA, bus, gen and branch matrices).
///
/// Loads, generation and shunts are converted to per-unit. Generators on one
/// bus are summed; the first in-service generator's Vg becomes the set-point.
/// Out-of-service branches and generators are dropped. A PV bus without an
/// in-service generator is demoted to PQ. Set-points outside the bus voltage
/// limits widen the limits (the magnitude of such buses is pinned anyway).
inline NetworkCase parse_case(std::string_view text) {
  using detail::as_int;
  using detail::require_columns;
  auto raw = detail::scan_case(text);

  NetworkCase net;
  net.name = raw.name;
  if (!raw.base_mva) throw CaseError("missing mpc.baseMVA");
  net.base_mva = *raw.base_mva;
  if (!(net.base_mva > 0.0)) throw CaseError("baseMVA must be positive");
  for (const char* table : {"bus", "gen", "branch"})
    if (!raw.matrices.contains(table)) throw CaseError(std::string("missing mpc.") + table);

  const double base = net.base_mva;
  std::unordered_map<int, std::size_t> index;
  std::size_t ref_count = 0;
  std::size_t ref_line = 0;
  for (const auto& row : raw.matrices["bus"]) {
    require_columns(row, 13, "bus");
    const auto& c = row.values;
    Bus bus;
    bus.id = as_int(c[0], row.line);
    if (index.contains(bus.id)) throw CaseError("duplicate bus id " + std::to_string(bus.id), row.line);
    switch (as_int(c[1], row.line)) {
      case 1: bus.kind = BusKind::PQ; break;
      case 2: bus.kind = BusKind::PV; break;
      case 3:
        bus.kind = BusKind::Ref;
        if (++ref_count > 1) throw CaseError("multiple reference buses", row.line);
        ref_line = row.line;
        break;
      default:
        throw CaseError("unsupported bus type " + std::to_string(as_int(c[1], row.line)), row.line);
    }
    bus.p_demand = c[2] / base;
    bus.q_demand = c[3] / base;
    bus.shunt_g = c[4] / base;
    bus.shunt_b = c[5] / base;
    bus.v_set = c[7];
    bus.v_max = c[11];
    bus.v_min = c[12];
    if (!(bus.v_min > 0.0) || bus.v_min > bus.v_max)
      throw CaseError("invalid voltage bounds for bus " + std::to_string(bus.id), row.line);
    index.emplace(bus.id, net.buses.size());
    net.buses.push_back(bus);
  }
  if (ref_count == 0) throw CaseError("no reference bus");
  (void)ref_line;

  std::vector<bool> has_gen(net.buses.size(), false);
  for (const auto& row : raw.matrices["gen"]) {
    require_columns(row, 8, "gen");
    const auto& c = row.values;
    const int id = as_int(c[0], row.line);
    const auto it = index.find(id);
    if (it == index.end()) throw CaseError("generator references unknown bus " + std::to_string(id), row.line);
    if (c[7] <= 0.0) continue;
    auto& bus = net.buses[it->second];
    bus.p_gen += c[1] / base;
    bus.q_gen += c[2] / base;
    if (!has_gen[it->second] && bus.kind != BusKind::PQ) bus.v_set = c[5];
    has_gen[it->second] = true;
  }
  for (std::size_t i = 0; i < net.buses.size(); ++i) {
    auto& bus = net.buses[i];
    if (bus.kind == BusKind::PV && !has_gen[i]) {
      bus.kind = BusKind::PQ;
      net.warnings.push_back("bus " + std::to_string(bus.id) + ": PV bus without generator treated as PQ");
    }
    if (bus.kind != BusKind::PQ) {
      bus.v_min = std::min(bus.v_min, bus.v_set);
      bus.v_max = std::max(bus.v_max, bus.v_set);
    }
  }

  for (const auto& row : raw.matrices["branch"]) {
    require_columns(row, 11, "branch");
    const auto& c = row.values;
    if (c[10] <= 0.0) continue;
    const int f = as_int(c[0], row.line);
    const int t = as_int(c[1], row.line);
    const auto fi = index.find(f);
    const auto ti = index.find(t);
    if (fi == index.end()) throw CaseError("branch references unknown bus " + std::to_string(f), row.line);
    if (ti == index.end()) throw CaseError("branch references unknown bus " + std::to_string(t), row.line);
    Branch br;
    br.from = fi->second;
    br.to = ti->second;
    br.r = c[2];
    br.x = c[3];
    br.b_charging = c[4];
    br.tap = c[8] == 0.0 ? 1.0 : c[8];
    br.phase_shift = c[9] * std::numbers::pi / 180.0;
    if (br.from == br.to) throw CaseError("branch connects bus " + std::to_string(f) + " to itself", row.line);
    if (br.r < 0.0) throw CaseError("branch with negative resistance", row.line);
    if (br.r == 0.0 && br.x == 0.0) throw CaseError("branch with zero impedance", row.line);
    net.branches.push_back(br);
  }

  if (!is_connected(net)) net.warnings.push_back("network graph is not connected");
  validate(net);
  return net;
}

/// Writes `net` in the same MATPOWER subset that parse_case reads.
/// Numbers are printed with round-trip precision.
inline std::string serialize_case(const NetworkCase& net) {
  std::ostringstream out;
  out << std::setprecision(17);
  const double base = net.base_mva;
  const std::string name = net.name.empty() ? "mpc_case" : net.name;
  out << "function mpc = " << name << "\n";
  out << "mpc.version = '2';\n";
  out << "mpc.baseMVA = " << base << ";\n\n";

  auto type_code = [](BusKind k) { return k == BusKind::Ref ? 3 : k == BusKind::PV ? 2 : 1; };

  out << "%% bus data\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\n";
  out << "mpc.bus = [\n";
  for (const auto& b : net.buses) {
    out << '\t' << b.id << '\t' << type_code(b.kind) << '\t' << b.p_demand * base << '\t'
        << b.q_demand * base << '\t' << b.shunt_g * base << '\t' << b.shunt_b * base << "\t1\t"
        << b.v_set << "\t0\t0\t1\t" << b.v_max << '\t' << b.v_min << ";\n";
  }
  out << "];\n\n";

  out << "%% generator data\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\n";
  out << "mpc.gen = [\n";
  for (const auto& b : net.buses) {
    if (b.kind == BusKind::PQ && b.p_gen == 0.0 && b.q_gen == 0.0) continue;
    out << '\t' << b.id << '\t' << b.p_gen * base << '\t' << b.q_gen * base << "\t9999\t-9999\t"
        << b.v_set << '\t' << base << "\t1\t9999\t0;\n";
  }
  out << "];\n\n";

  out << "%% branch data\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\n";
  out << "mpc.branch = [\n";
  for (const auto& br : net.branches) {
    out << '\t' << net.buses[br.from].id << '\t' << net.buses[br.to].id << '\t' << br.r << '\t' << br.x
        << '\t' << br.b_charging << "\t0\t0\t0\t" << (br.tap == 1.0 ? 0.0 : br.tap) << '\t'
        << br.phase_shift * 180.0 / std::numbers::pi << "\t1\t-360\t360;\n";
  }
  out << "];\n";
  return out.str();
}

struct AdmittanceEntry {
  std::size_t col = 0;
  std::complex<double> value;
};

/// Sparse complex nodal admittance matrix Y = G + jB, stored by rows.
/// Every row keeps its diagonal entry, so `row(k)` enumerates the
/// neighbourhood of k including k itself.
class AdmittanceMatrix {
 public:
  AdmittanceMatrix() = default;

  explicit AdmittanceMatrix(std::size_t n) : rows_(n) {
    for (std::size_t k = 0; k < n; ++k) rows_[k].push_back({k, {0.0, 0.0}});
  }

  std::size_t size() const { return rows_.size(); }

  std::size_t nonzeros() const {
    std::size_t total = 0;
    for (const auto& r : rows_) total += r.size();
    return total;
  }

  std::span<const AdmittanceEntry> row(std::size_t k) const { return rows_.at(k); }

  std::complex<double> at(std::size_t k, std::size_t m) const {
    const auto& r = rows_.at(k);
    const auto it = std::lower_bound(r.begin(), r.end(), m,
                                     [](const AdmittanceEntry& e, std::size_t c) { return e.col < c; });
    return (it != r.end() && it->col == m) ? it->value : std::complex<double>{};
  }

  double conductance(std::size_t k, std::size_t m) const { return at(k, m).real(); }
  double susceptance(std::size_t k, std::size_t m) const { return at(k, m).imag(); }

  std::vector<std::size_t> neighbors(std::size_t k) const {
    std::vector<std::size_t> out;
    for (const auto& e : rows_.at(k)) out.push_back(e.col);
    return out;
  }

  std::complex<double> row_sum(std::size_t k) const {
    std::complex<double> s;
    for (const auto& e : rows_.at(k)) s += e.value;
    return s;
  }

  void add(std::size_t k, std::size_t m, std::complex<double> v) {
    auto& r = rows_.at(k);
    auto it = std::lower_bound(r.begin(), r.end(), m,
                               [](const AdmittanceEntry& e, std::size_t c) { return e.col < c; });
    if (it != r.end() && it->col == m)
      it->value += v;
    else
      r.insert(it, {m, v});
  }

 private:
  std::vector<std::vector<AdmittanceEntry>> rows_;
};

/// Standard pi-model Y-bus assembly with off-nominal taps and phase shifters.
inline AdmittanceMatrix build_admittance(const NetworkCase& net) {
  AdmittanceMatrix y(net.size());
  for (std::size_t k = 0; k < net.size(); ++k)
    y.add(k, k, {net.buses[k].shunt_g, net.buses[k].shunt_b});
  for (const auto& br : net.branches) {
    if (br.r == 0.0 && br.x == 0.0) throw std::invalid_argument("branch with zero impedance");
    const std::complex<double> ys = 1.0 / std::complex<double>(br.r, br.x);
    const std::complex<double> half_charging(0.0, br.b_charging / 2.0);
    const std::complex<double> tap = std::polar(br.tap, br.phase_shift);
    const std::complex<double> ytt = ys + half_charging;
    y.add(br.from, br.from, ytt / (br.tap * br.tap));
    y.add(br.to, br.to, ytt);
    y.add(br.from, br.to, -ys / std::conj(tap));
    y.add(br.to, br.from, -ys / tap);
  }
  return y;
}

}  // namespace acpf
