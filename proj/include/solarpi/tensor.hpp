#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace solarpi {

/// Thrown when a numeric contract is violated (non-finite values, bad shapes).
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of 64-bit reals. The differentiation substrate:
/// every activation, parameter and gradient in this library is one of these.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> values;

    Tensor() = default;

    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        values.assign(static_cast<size_t>(count(shape)), 0.0);
    }

    Tensor(std::vector<int64_t> s, std::vector<double> v)
        : shape(std::move(s)), values(std::move(v)) {
        if (static_cast<int64_t>(values.size()) != count(shape))
            throw std::invalid_argument("Tensor: value count does not match shape");
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static int64_t count(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) {
            if (d < 0) throw std::invalid_argument("Tensor: negative extent");
            n *= d;
        }
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(values.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    int64_t dim(int i) const { return shape.at(static_cast<size_t>(i)); }

    double* data() { return values.data(); }
    const double* data() const { return values.data(); }

    double& operator[](int64_t i) { return values[static_cast<size_t>(i)]; }
    double operator[](int64_t i) const { return values[static_cast<size_t>(i)]; }

    /// Element access for rank-2 tensors.
    double& at2(int64_t r, int64_t c) { return values[static_cast<size_t>(r * shape[1] + c)]; }
    double at2(int64_t r, int64_t c) const { return values[static_cast<size_t>(r * shape[1] + c)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { std::fill(values.begin(), values.end(), v); }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
}

}  // namespace solarpi
