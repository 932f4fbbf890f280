#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace proex {

using Vec = std::vector<double>;

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& message) : std::runtime_error(message) {}
};

class ParseError : public Error {
public:
    explicit ParseError(const std::string& message) : Error(message) {}
};

class FormatError : public Error {
public:
    explicit FormatError(const std::string& message) : Error(message) {}
};

// Row-major dense matrix.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }
    std::span<double> row_span(std::size_t i) { return {row(i), cols}; }
    std::span<const double> row_span(std::size_t i) const { return {row(i), cols}; }
    double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
    void fill(double v) { a.assign(a.size(), v); }
};

inline double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + e^x) without overflow
inline double softplus(double x) {
    if (x > 30.0) return x;
    return std::log1p(std::exp(x));
}

inline bool all_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

// Named parameter block with a matching gradient buffer.
struct ParamBlock {
    std::string name;
    Vec value;
    Vec grad;
};

class ParamSet {
public:
    ParamBlock& add(const std::string& name, std::size_t n) {
        if (index_.count(name)) throw Error("duplicate parameter block: " + name);
        index_[name] = blocks_.size();
        blocks_.push_back(ParamBlock{name, Vec(n, 0.0), Vec(n, 0.0)});
        return blocks_.back();
    }
    ParamBlock& operator[](const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter block: " + name);
        return blocks_[it->second];
    }
    const ParamBlock& operator[](const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("unknown parameter block: " + name);
        return blocks_[it->second];
    }
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    std::vector<ParamBlock>& blocks() { return blocks_; }
    const std::vector<ParamBlock>& blocks() const { return blocks_; }
    std::size_t size() const { return blocks_.size(); }

    void zero_grad() {
        for (auto& b : blocks_) b.grad.assign(b.grad.size(), 0.0);
    }

private:
    std::vector<ParamBlock> blocks_;
    std::unordered_map<std::string, std::size_t> index_;
};

// FNV-1a, used for config hashing and the mock embedder seed.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t seed = 1469598103934665603ull) {
    std::uint64_t h = seed;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace proex
