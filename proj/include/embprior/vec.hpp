#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace embprior {

using Vec = std::vector<double>;

inline void check_same_dim(const Vec& a, const Vec& b, const char* where) {
    if (a.size() != b.size()) throw std::invalid_argument(std::string(where) + ": dimension mismatch");
}

inline double dot(const Vec& a, const Vec& b) {
    check_same_dim(a, b, "dot");
    double s = 0.0;
    for (size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
    return s;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

// cosine similarity; NaN if either vector has zero norm
inline double cosine(const Vec& a, const Vec& b) {
    double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) return std::numeric_limits<double>::quiet_NaN();
    return dot(a, b) / (na * nb);
}

inline Vec normalized(Vec a) {
    double n = norm(a);
    if (n == 0.0) throw std::invalid_argument("normalized: zero-norm vector");
    for (double& x : a) x /= n;
    return a;
}

inline Vec zeros(size_t d) { return Vec(d, 0.0); }

}  // namespace embprior
