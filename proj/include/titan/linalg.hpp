#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "titan/errors.hpp"

// Dense vector helpers. Everything is double precision and reduces in index
// order so results are bit-reproducible.
namespace titan::linalg {

using Vector = std::vector<double>;

inline void require_same_size(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("vector size mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    require_same_size(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double squared_norm(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v * v;
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    require_same_size(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    require_same_size(x, y);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale(std::span<double> x, double alpha) {
    for (double& v : x) v *= alpha;
}

inline Vector mean(std::span<const Vector> rows) {
    if (rows.empty()) return {};
    Vector m(rows.front().size(), 0.0);
    for (const auto& r : rows) axpy(1.0, r, m);
    scale(m, 1.0 / static_cast<double>(rows.size()));
    return m;
}

}  // namespace titan::linalg
