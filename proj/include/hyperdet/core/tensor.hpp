#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hyperdet/core/error.hpp"
#include "hyperdet/core/rng.hpp"

namespace hyperdet {

// Dense row-major array of doubles. Copies are shallow (they share storage);
// use clone() for an independent buffer. Everything in the model path treats
// tensors as immutable once built, so sharing is safe; the optimizer and
// builders mutate through data() on buffers they own.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
        buf_ = std::make_shared<std::vector<double>>(count(shape_), 0.0);
    }

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<std::size_t> shape, double v) {
        Tensor t(std::move(shape));
        for (auto& x : *t.buf_) x = v;
        return t;
    }

    static Tensor scalar(double v) { return full({1}, v); }

    static Tensor from(std::vector<std::size_t> shape, std::vector<double> values) {
        Tensor t;
        t.shape_ = std::move(shape);
        require(values.size() == count(t.shape_), errc::shape, "value count does not match shape");
        t.buf_ = std::make_shared<std::vector<double>>(std::move(values));
        return t;
    }

    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (auto& x : *t.buf_) x = rng.normal(0.0, stddev);
        return t;
    }

    Tensor clone() const {
        Tensor t;
        t.shape_ = shape_;
        t.buf_ = buf_ ? std::make_shared<std::vector<double>>(*buf_)
                      : std::make_shared<std::vector<double>>();
        return t;
    }

    Tensor reshaped(std::vector<std::size_t> shape) const {
        require(count(shape) == size(), errc::shape, "reshape changes element count");
        Tensor t = *this;  // shares buffer
        t.shape_ = std::move(shape);
        return t;
    }

    bool defined() const { return buf_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return buf_ ? buf_->size() : 0; }

    std::size_t rows() const { return ndim() >= 1 ? shape_[0] : 0; }
    std::size_t cols() const { return ndim() >= 2 ? shape_[1] : 1; }

    double* data() { return buf_->data(); }
    const double* data() const { return buf_->data(); }

    double& operator[](std::size_t i) { return (*buf_)[i]; }
    double operator[](std::size_t i) const { return (*buf_)[i]; }

    double& operator()(std::size_t i, std::size_t j) { return (*buf_)[i * cols() + j]; }
    double operator()(std::size_t i, std::size_t j) const { return (*buf_)[i * cols() + j]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(double v) {
        for (auto& x : *buf_) x = v;
    }

    void add_(const Tensor& o) {
        require(same_shape(o), errc::shape, "add_: shape mismatch");
        const double* s = o.data();
        double* d = data();
        for (std::size_t i = 0, n = size(); i < n; ++i) d[i] += s[i];
    }

    void axpy_(double a, const Tensor& o) {
        require(same_shape(o), errc::shape, "axpy_: shape mismatch");
        const double* s = o.data();
        double* d = data();
        for (std::size_t i = 0, n = size(); i < n; ++i) d[i] += a * s[i];
    }

    void scale_(double a) {
        for (auto& x : *buf_) x *= a;
    }

    double max_abs() const {
        double m = 0.0;
        for (double x : *buf_) m = std::max(m, std::fabs(x));
        return m;
    }

    double sum() const {
        double s = 0.0;
        for (double x : *buf_) s += x;
        return s;
    }

    bool all_finite() const {
        for (double x : *buf_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
        os << "]";
        return os.str();
    }

    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return shape.empty() ? 0 : n;
    }

private:
    std::vector<std::size_t> shape_;
    std::shared_ptr<std::vector<double>> buf_;
};

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), errc::shape, "max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

// -- raw matrix kernels; all accumulate into C ------------------------------

// C[m x n] += A[m x k] * B[k x n]
inline void mm_nn_acc(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// C[m x n] += A[m x k] * B[n x k]^T
inline void mm_nt_acc(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

// C[m x n] += A[k x m]^T * B[k x n]
inline void mm_tn_acc(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = ap[i];
            if (av == 0.0) continue;
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace hyperdet
