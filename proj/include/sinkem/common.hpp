#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sinkem {

// Dense row-major matrix. Kernels operate on the flat buffer directly.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    double* row(std::size_t r) { return data.data() + r * cols; }
    const double* row(std::size_t r) const { return data.data() + r * cols; }
    std::size_t size() const { return data.size(); }
};

// Bad user input (files, flags, parameter values). CLI maps this to exit code 1.
struct InvalidInput : std::runtime_error {
    explicit InvalidInput(const std::string& msg) : std::runtime_error(msg) {}
};

// A mixture component lost all responsibility mass during fitting. CLI maps
// a run terminated by this to exit code 2.
struct DegenerateCluster : std::runtime_error {
    int component;
    DegenerateCluster(int k, const std::string& msg) : std::runtime_error(msg), component(k) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// FNV-1a, used to fingerprint traces for the replay command.
inline std::uint64_t fnv1a64(const void* bytes, std::size_t len, std::uint64_t seed = 14695981039346656037ULL) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(const std::string& s, std::uint64_t seed = 14695981039346656037ULL) {
    return fnv1a64(s.data(), s.size(), seed);
}

// Canonical float formatting (shortest round-trip) shared by all CSV writers
// so reruns are byte-comparable.
std::string format_double(double v);

}  // namespace sinkem
