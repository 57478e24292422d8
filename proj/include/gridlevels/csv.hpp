#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gridlevels/dynamics.hpp"
#include "gridlevels/errors.hpp"

namespace gridlevels {

/// Write a grid trajectory as CSV. Columns: t, then per node theta/omega/v,
/// then per node u_omega/u_v. Floating-point values use 17 significant
/// digits, so parsing the file back reproduces every double bit-exactly.
inline void write_trace_csv(const std::string& path, const Trace& trace, int n_nodes) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write trace file: " + path);
    out << "t";
    for (int i = 0; i < n_nodes; ++i)
        out << ",node" << i << "_theta,node" << i << "_omega,node" << i << "_v";
    for (int i = 0; i < n_nodes; ++i) out << ",node" << i << "_u_omega,node" << i << "_u_v";
    out << "\n";
    char buf[64];
    auto put = [&](double x) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        out << ',' << buf;
    };
    for (std::size_t s = 0; s < trace.states.size(); ++s) {
        if (trace.states[s].size() != 3 * n_nodes)
            throw DimensionError("write_trace_csv: state dimension does not match node count");
        std::snprintf(buf, sizeof buf, "%.17g", trace.times[s]);
        out << buf;
        for (int c = 0; c < 3 * n_nodes; ++c) put(trace.states[s][c]);
        const Eigen::VectorXd& u = trace.inputs[s];
        if (u.size() != 0 && u.size() != 2 * n_nodes)
            throw DimensionError("write_trace_csv: input dimension does not match node count");
        for (int c = 0; c < 2 * n_nodes; ++c) put(u.size() ? u[c] : 0.0);
        out << "\n";
    }
}

/// Parse a trace CSV written by write_trace_csv.
inline Trace read_trace_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open trace file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("trace file is empty: " + path);
    int columns = 1;
    for (char ch : line)
        if (ch == ',') ++columns;
    if ((columns - 1) % 5 != 0)
        throw ConfigError("trace header has unexpected column count: " + std::to_string(columns));
    const int n_nodes = (columns - 1) / 5;
    Trace trace;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const char* p = line.c_str();
        char* end = nullptr;
        std::vector<double> vals;
        vals.reserve(columns);
        for (int c = 0; c < columns; ++c) {
            vals.push_back(std::strtod(p, &end));
            if (end == p) throw ConfigError("trace row has too few fields");
            p = (*end == ',') ? end + 1 : end;
        }
        trace.times.push_back(vals[0]);
        Eigen::VectorXd x(3 * n_nodes), u(2 * n_nodes);
        for (int c = 0; c < 3 * n_nodes; ++c) x[c] = vals[1 + c];
        for (int c = 0; c < 2 * n_nodes; ++c) u[c] = vals[1 + 3 * n_nodes + c];
        trace.states.push_back(std::move(x));
        trace.inputs.push_back(std::move(u));
    }
    return trace;
}

}  // namespace gridlevels
