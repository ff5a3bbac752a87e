#pragma once

// Dense row-major tensors (64-bit floats) plus the handful of matrix kernels
// everything else is built from. Kernels keep a fixed per-row accumulation
// order so batched and row-by-row evaluation agree bitwise.

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "itts/common.hpp"

namespace itts {

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
        data_.assign(element_count(shape_), 0.0);
    }

    Tensor(std::size_t rows, std::size_t cols) : Tensor(std::vector<std::size_t>{rows, cols}) {}

    static Tensor scalar(double v) {
        Tensor t(1, 1);
        t.data_[0] = v;
        return t;
    }

    static std::size_t element_count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t rows() const { return shape_.size() == 2 ? shape_[0] : (shape_.size() == 1 ? shape_[0] : 0); }
    std::size_t cols() const { return shape_.size() == 2 ? shape_[1] : (shape_.size() == 1 ? 1 : 0); }
    bool is_matrix() const { return shape_.size() == 2; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    double* row(std::size_t r) { return data_.data() + r * cols(); }
    const double* row(std::size_t r) const { return data_.data() + r * cols(); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) { data_.assign(data_.size(), v); }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

    bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

inline void require_matrix(const Tensor& t, const char* name) {
    if (!t.is_matrix()) throw ShapeError(std::string(name) + " must be 2-D, got " + t.shape_str());
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* a_name, const char* b_name) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(a_name) + " " + a.shape_str() + " vs " + b_name + " " + b.shape_str());
}

// ----------------------------- kernels -----------------------------

/// y = a[BxK] * w[KxN]. k is the outermost loop so each output row accumulates
/// in identical k-order no matter how many rows are present.
inline Tensor matmul_value(const Tensor& a, const Tensor& w, const char* a_name = "lhs",
                           const char* w_name = "rhs") {
    require_matrix(a, a_name);
    require_matrix(w, w_name);
    if (a.cols() != w.rows())
        throw ShapeError(std::string(a_name) + " " + a.shape_str() + " incompatible with " + w_name + " " +
                         w.shape_str());
    const std::size_t B = a.rows(), K = a.cols(), N = w.cols();
    Tensor y(B, N);
    for (std::size_t k = 0; k < K; ++k) {
        const double* wk = w.row(k);
        for (std::size_t i = 0; i < B; ++i) {
            const double aik = a.at(i, k);
            if (aik == 0.0) continue;
            double* yi = y.row(i);
            for (std::size_t n = 0; n < N; ++n) yi[n] += aik * wk[n];
        }
    }
    return y;
}

/// y = a[BxK] * b[NxK]^T (rows of b as columns). Per-(i,n) sequential dot.
inline Tensor matmul_nt_value(const Tensor& a, const Tensor& b) {
    require_matrix(a, "lhs");
    require_matrix(b, "rhs");
    if (a.cols() != b.cols())
        throw ShapeError("lhs " + a.shape_str() + " incompatible with rhs^T " + b.shape_str());
    const std::size_t B = a.rows(), K = a.cols(), N = b.rows();
    Tensor y(B, N);
    for (std::size_t i = 0; i < B; ++i) {
        const double* ai = a.row(i);
        double* yi = y.row(i);
        for (std::size_t n = 0; n < N; ++n) {
            const double* bn = b.row(n);
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) acc += ai[k] * bn[k];
            yi[n] = acc;
        }
    }
    return y;
}

/// y = a[BxK]^T * c[BxN] -> [KxN]; used by matmul backward for weight grads.
inline Tensor matmul_tn_value(const Tensor& a, const Tensor& c) {
    require_matrix(a, "lhs");
    require_matrix(c, "rhs");
    if (a.rows() != c.rows())
        throw ShapeError("lhs^T " + a.shape_str() + " incompatible with rhs " + c.shape_str());
    const std::size_t B = a.rows(), K = a.cols(), N = c.cols();
    Tensor y(K, N);
    for (std::size_t i = 0; i < B; ++i) {
        const double* ai = a.row(i);
        const double* ci = c.row(i);
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            double* yk = y.row(k);
            for (std::size_t n = 0; n < N; ++n) yk[n] += aik * ci[n];
        }
    }
    return y;
}

inline void add_inplace(Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "accumulator", "increment");
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace itts
