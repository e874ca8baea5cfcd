#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace costpred::ag {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); i++) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Dense row-major tensor. Gradient buffer is allocated lazily and, when
// present, always matches the value shape.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> v;
    bool requires_grad = false;
    std::vector<T> g;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0))
        : shape(std::move(s)), v(static_cast<size_t>(shape_numel(shape)), fill) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), v(std::move(values)) {
        if (static_cast<std::int64_t>(v.size()) != shape_numel(shape))
            throw std::invalid_argument("tensor value count does not match shape " + shape_str(shape));
    }

    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i < 0 ? static_cast<int>(shape.size()) + i : i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    T& at(std::initializer_list<int> idx) { return v[static_cast<size_t>(offset(idx))]; }
    const T& at(std::initializer_list<int> idx) const { return v[static_cast<size_t>(offset(idx))]; }

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), T(0));
    }
    void zero_grad() { std::fill(g.begin(), g.end(), T(0)); }

    static Tensor zeros(Shape s) { return Tensor(std::move(s), T(0)); }
    static Tensor full(Shape s, T x) { return Tensor(std::move(s), x); }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (size_t i = 0; i < v.size(); i++) out.v[i] = static_cast<U>(v[i]);
        return out;
    }

  private:
    std::int64_t offset(std::initializer_list<int> idx) const {
        if (idx.size() != shape.size()) throw std::out_of_range("index rank mismatch");
        std::int64_t off = 0;
        size_t d = 0;
        for (int i : idx) {
            if (i < 0 || i >= shape[d]) throw std::out_of_range("tensor index out of range");
            off = off * shape[d] + i;
            d++;
        }
        return off;
    }
};

struct IntTensor {
    Shape shape;
    std::vector<int> v;

    IntTensor() = default;
    explicit IntTensor(Shape s, int fill = 0)
        : shape(std::move(s)), v(static_cast<size_t>(shape_numel(shape)), fill) {}
    IntTensor(Shape s, std::vector<int> values) : shape(std::move(s)), v(std::move(values)) {
        if (static_cast<std::int64_t>(v.size()) != shape_numel(shape))
            throw std::invalid_argument("int tensor value count does not match shape");
    }
    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    int& at2(int i, int j) { return v[static_cast<size_t>(i) * shape[1] + j]; }
    int at2(int i, int j) const { return v[static_cast<size_t>(i) * shape[1] + j]; }
};

// Portable draws on top of a seeded engine. std::*_distribution output is
// implementation-defined, these are not.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

// Box-Muller, one value per call.
inline double normal01(std::mt19937_64& rng) {
    double u1 = uniform01(rng), u2 = uniform01(rng);
    while (u1 <= 1e-300) u1 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

// Uniform integer in [0, n) without modulo bias.
inline std::int64_t uniform_index(std::mt19937_64& rng, std::int64_t n) {
    if (n <= 0) throw std::invalid_argument("uniform_index: empty range");
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() / un * un;
    std::uint64_t x = rng();
    while (x >= limit) x = rng();
    return static_cast<std::int64_t>(x % un);
}

template <typename T>
Tensor<T> randn(Shape s, std::mt19937_64& rng, double stddev) {
    Tensor<T> t(std::move(s));
    for (auto& x : t.v) x = static_cast<T>(normal01(rng) * stddev);
    return t;
}

}  // namespace costpred::ag
