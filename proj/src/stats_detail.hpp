#pragma once

#include "qndspin/error.hpp"
#include "qndspin/types.hpp"

#include <span>

namespace qndspin::detail {

inline Vec3 mean_of(std::span<const Vec3> v) {
    Vec3 m = Vec3::Zero();
    for (const auto& x : v) m += x;
    return m / static_cast<double>(v.size());
}

// Two-pass unbiased cross-covariance cov(a_i, b_j).
inline Mat3 cross_covariance(std::span<const Vec3> a, std::span<const Vec3> b) {
    if (a.size() != b.size()) throw EstimationError("cross covariance: length mismatch");
    if (a.size() < 2) throw EstimationError("covariance needs at least two vectors");
    const Vec3 ma = mean_of(a);
    const Vec3 mb = mean_of(b);
    Mat3 c = Mat3::Zero();
    for (std::size_t i = 0; i < a.size(); ++i) c.noalias() += (a[i] - ma) * (b[i] - mb).transpose();
    return c / static_cast<double>(a.size() - 1);
}

inline Mat3 covariance(std::span<const Vec3> v) { return symmetrize(cross_covariance(v, v)); }

}  // namespace qndspin::detail
