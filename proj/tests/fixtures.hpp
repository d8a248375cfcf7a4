#pragma once

#include <string>

#include "acpf/bench.hpp"
#include "acpf/network.hpp"

namespace acpf::testing {

inline std::string data_path(const std::string& file) { return std::string(ACPF_TEST_DATA_DIR) + "/" + file; }

inline NetworkCase load_fixture(const std::string& name) { return load_case(data_path(name + ".m")); }

/// Bus 1 reference, bus 2 PQ with a 0.9983 + j0.0500 p.u. load, one lossless
/// x = 0.1 line.
inline const char* two_bus_text() {
  return R"(function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
  1  3  0      0    0  0  1  1.0  0  0  1  1.1  0.9;
  2  1  99.83  5.00 0  0  1  1.0  0  0  1  1.1  0.9;
];
%% generator data
mpc.gen = [
  1  0  0  9999  -9999  1.0  100  1  9999  0;
];
%% branch data
mpc.branch = [
  1  2  0  0.1  0  0  0  0  0  0  1  -360  360;
];
)";
}

inline NetworkCase two_bus() { return parse_case(two_bus_text()); }

// Same network with the slack dispatch set to the solved flow, so the full
// loss has a zero at the Newton solution.
inline NetworkCase two_bus_balanced() {
  auto net = two_bus();
  net.buses[0].p_gen = 0.9983;
  net.buses[0].q_gen = 0.1520;
  return net;
}

}  // namespace acpf::testing
