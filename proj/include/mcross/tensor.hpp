#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "mcross/common.hpp"

namespace mcross {

// Dense row-major tensor of doubles. Rank 1 or 2 is all the encoder needs.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;

    static Tensor zeros(std::vector<int> shp) {
        Tensor t;
        size_t n = 1;
        for (int s : shp) n *= static_cast<size_t>(s);
        t.shape = std::move(shp);
        t.v.assign(n, 0.0);
        return t;
    }

    size_t size() const { return v.size(); }
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() > 1 ? shape[1] : 1; }

    double& at(int i) { return v[static_cast<size_t>(i)]; }
    double at(int i) const { return v[static_cast<size_t>(i)]; }
    double& at(int i, int j) { return v[static_cast<size_t>(i) * cols() + j]; }
    double at(int i, int j) const { return v[static_cast<size_t>(i) * cols() + j]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(double x) { std::fill(v.begin(), v.end(), x); }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }
};

// out[m x n] = a[m x k] * b[k x n], b row-major. Accumulates when acc is true.
inline void matmul(const double* a, const double* b, double* out, int m, int k, int n,
                   bool acc = false) {
    if (!acc) std::fill(out, out + static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* orow = out + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out[m x n] += a[m x k] * b^T where b is [n x k] row-major.
inline void matmul_bt(const double* a, const double* b, double* out, int m, int k, int n,
                      bool acc = false) {
    if (!acc) std::fill(out, out + static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* orow = out + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
            orow[j] += s;
        }
    }
}

// out[k x n] += a^T * g where a is [m x k], g is [m x n].
inline void matmul_at(const double* a, const double* g, double* out, int m, int k, int n,
                      bool acc = true) {
    if (!acc) std::fill(out, out + static_cast<size_t>(k) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        const double* grow = g + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            double* orow = out + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * grow[j];
        }
    }
}

inline double dot(const double* a, const double* b, int n) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

// log(sum_i exp(x_i)) with max subtraction; finite for any finite inputs.
inline double log_sum_exp(const std::vector<double>& xs) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : xs)
        if (x > mx) mx = x;
    if (!std::isfinite(mx)) return mx;
    double s = 0.0;
    for (double x : xs) s += std::exp(x - mx);
    return mx + std::log(s);
}

} // namespace mcross
