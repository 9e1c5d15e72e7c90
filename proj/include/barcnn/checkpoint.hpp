#pragma once

// Parameter checkpoint text format (version 1):
//
//   barcnn-checkpoint 1
//   param <name> <rank> <dim_0> ... <dim_{rank-1}>
//   <value_0> <value_1> ...          (one line, %.17g, row-major)
//   ...
//   end
//
// Values printed with 17 significant digits parse back to the same bits.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "barcnn/numerics.hpp"

namespace barcnn::nn {

inline std::string format_double(double v) {
    char buf[32];
    const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf, static_cast<std::size_t>(n));
}

inline void save_checkpoint(std::ostream& os, std::span<const Parameter> params) {
    os << "barcnn-checkpoint 1\n";
    for (const auto& p : params) {
        os << "param " << p.name << ' ' << p.array.rank();
        for (auto d : p.array.shape()) os << ' ' << d;
        os << '\n';
        bool first = true;
        for (double v : p.array.values()) {
            if (!first) os << ' ';
            os << format_double(v);
            first = false;
        }
        os << '\n';
    }
    os << "end\n";
}

/// Loads values into `params`, which must match the file in name, order and
/// shape. Momentum buffers are reset.
inline void load_checkpoint(std::istream& is, std::span<Parameter> params) {
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != "barcnn-checkpoint" || version != 1) {
        throw ParseError("checkpoint: missing 'barcnn-checkpoint 1' header");
    }
    for (auto& p : params) {
        std::string tag, name;
        std::size_t rank = 0;
        if (!(is >> tag >> name >> rank) || tag != "param") {
            throw ParseError("checkpoint: expected record for parameter '" + p.name + "'");
        }
        if (name != p.name) {
            throw ParseError("checkpoint: expected parameter '" + p.name + "', found '" + name + "'");
        }
        Shape shape(rank);
        for (auto& d : shape) {
            if (!(is >> d)) throw ParseError("checkpoint: bad shape for '" + name + "'");
        }
        if (shape != p.array.shape()) {
            throw ParseError("checkpoint: parameter '" + name + "' has shape " + to_string(shape) +
                             ", model expects " + to_string(p.array.shape()));
        }
        auto values = p.array.mutable_values();
        for (auto& v : values) {
            std::string token;
            if (!(is >> token)) throw ParseError("checkpoint: truncated values for '" + name + "'");
            char* end = nullptr;
            v = std::strtod(token.c_str(), &end);
            if (end != token.c_str() + token.size()) {
                throw ParseError("checkpoint: bad number '" + token + "' in '" + name + "'");
            }
        }
        std::fill(p.momentum_buffer.begin(), p.momentum_buffer.end(), 0.0);
    }
    std::string tail;
    if (!(is >> tail) || tail != "end") throw ParseError("checkpoint: missing 'end' marker");
}

inline void save_checkpoint(const std::string& path, std::span<const Parameter> params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot write checkpoint " + path);
    save_checkpoint(os, params);
}

inline void load_checkpoint(const std::string& path, std::span<Parameter> params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot read checkpoint " + path);
    load_checkpoint(is, params);
}

}  // namespace barcnn::nn
