#pragma once

#include "qndspin/types.hpp"

#include <Eigen/Dense>

#include <random>

namespace qndspin::testing {

inline Vec3 random_vec(Rng& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    return {n(rng), n(rng), n(rng)};
}

inline Vec3 random_unit(Rng& rng) {
    Vec3 v = random_vec(rng);
    while (v.norm() < 1e-6) v = random_vec(rng);
    return v.normalized();
}

inline Mat3 random_psd(Rng& rng, double scale = 1.0) {
    Mat3 a;
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a(i, j) = n(rng);
    return scale * a * a.transpose();
}

inline Mat3 random_rotation(Rng& rng) {
    Mat3 a;
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a(i, j) = n(rng);
    Eigen::HouseholderQR<Mat3> qr(a);
    Mat3 q = qr.householderQ();
    if (q.determinant() < 0) q.col(0) *= -1.0;
    return q;
}

inline double rel_diff(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace qndspin::testing
