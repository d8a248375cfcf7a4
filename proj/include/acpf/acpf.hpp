#pragma once

#include "acpf/network.hpp"
#include "acpf/compgraph.hpp"
#include "acpf/finite_diff.hpp"
#include "acpf/power_flow.hpp"
#include "acpf/solvers.hpp"
#include "acpf/bench.hpp"
