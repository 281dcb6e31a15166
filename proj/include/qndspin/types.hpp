#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>

namespace qndspin {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

// All randomness flows through explicitly passed engines. Substreams are
// derived from (master seed, stream id, tag) so results do not depend on
// evaluation order or worker count.
using Rng = std::mt19937_64;

inline Rng make_stream(std::uint64_t master_seed, std::uint64_t stream_id,
                       std::uint64_t tag = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(master_seed),
                      static_cast<std::uint32_t>(master_seed >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(stream_id >> 32),
                      static_cast<std::uint32_t>(tag),
                      static_cast<std::uint32_t>(tag >> 32)};
    return Rng(seq);
}

// Symmetric within `rel_tol` of the largest entry and with eigenvalues
// >= -rel_tol * trace.
bool is_symmetric_psd(const Mat3& m, double rel_tol = 1e-9);

inline Mat3 symmetrize(const Mat3& m) { return 0.5 * (m + m.transpose()); }

}  // namespace qndspin
