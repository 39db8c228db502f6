#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace sgg {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. Deliberately unclever: every tensor in
// this project fits comfortably in cache at desk scale, and keeping the loops
// visible keeps the hand-written backward passes auditable.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) {
        assert(i < rows && j < cols);
        return a[i * cols + j];
    }
    double operator()(std::size_t i, std::size_t j) const {
        assert(i < rows && j < cols);
        return a[i * cols + j];
    }

    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }

    std::size_t size() const { return a.size(); }
    void fill(double v) { a.assign(a.size(), v); }

    bool operator==(const Matrix& o) const { return rows == o.rows && cols == o.cols && a == o.a; }
};

inline double dot(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

// out = M x
inline void matvec(const Matrix& m, const double* x, double* out) {
    for (std::size_t i = 0; i < m.rows; ++i) out[i] = dot(m.row(i), x, m.cols);
}

// out += Mᵀ x  (x has m.rows entries, out has m.cols)
inline void matvec_transposed_acc(const Matrix& m, const double* x, double* out) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        const double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) out[j] += xi * r[j];
    }
}

// M += s · u vᵀ
inline void add_outer(Matrix& m, const double* u, const double* v, double s = 1.0) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double ui = s * u[i];
        if (ui == 0.0) continue;
        double* r = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) r[j] += ui * v[j];
    }
}

// y += a x
inline void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

} // namespace sgg
