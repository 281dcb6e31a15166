#include "qndspin/spin.hpp"

#include "qndspin/error.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace qndspin {

bool is_symmetric_psd(const Mat3& m, double rel_tol) {
    if (!m.allFinite()) return false;
    const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > rel_tol * scale) return false;
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(symmetrize(m), Eigen::EigenvaluesOnly);
    const double trace = std::abs(m.trace());
    return eig.eigenvalues().minCoeff() >= -rel_tol * std::max(trace, scale);
}

}  // namespace qndspin

namespace qndspin::spin {

namespace {

bool valid_spin_number(double f) {
    return f == 0.5 || f == 1.0 || f == 1.5 || f == 2.0;
}

}  // namespace

void validate(const CollectiveSpinState& state) {
    if (!(state.n_atoms >= 0.0)) throw DomainError("n_atoms must be >= 0");
    if (!valid_spin_number(state.f)) throw DomainError("f must be one of 1/2, 1, 3/2, 2");
    if (!state.mean.allFinite()) throw DomainError("mean must be finite");
    if (!is_symmetric_psd(state.cov)) throw DomainError("cov must be symmetric PSD");
}

double PhysicalConstants::sigma0() const {
    return wavelength * wavelength / std::numbers::pi;
}

double tss_variance(double n_atoms, double f) {
    return f * (f + 1.0) * n_atoms / 3.0;
}

CollectiveSpinState make_tss(double n_atoms, double f) {
    if (!(n_atoms >= 0.0)) throw DomainError("make_tss: n_atoms must be >= 0");
    if (!valid_spin_number(f)) throw DomainError("make_tss: unsupported spin quantum number");
    CollectiveSpinState s;
    s.n_atoms = n_atoms;
    s.f = f;
    s.cov = Mat3::Identity() * tss_variance(n_atoms, f);
    return s;
}

CollectiveSpinState add_technical_noise(const CollectiveSpinState& state, const Mat3& extra_cov,
                                        const Vec3& mean_offset) {
    if (!is_symmetric_psd(extra_cov))
        throw DomainError("add_technical_noise: extra_cov must be symmetric PSD");
    CollectiveSpinState out = state;
    out.cov = symmetrize(state.cov + extra_cov);
    out.mean += mean_offset;
    return out;
}

Mat3 axis_angle_rotation(const Vec3& axis, double angle) {
    const Vec3 k = axis.normalized();
    Mat3 kx;
    kx << 0, -k.z(), k.y(),
          k.z(), 0, -k.x(),
          -k.y(), k.x(), 0;
    return Mat3::Identity() + std::sin(angle) * kx + (1.0 - std::cos(angle)) * kx * kx;
}

Mat3 larmor_rotation_matrix(const MagneticField& field, double t) {
    if (!(t >= 0.0)) throw DomainError("larmor_rotation_matrix: t must be >= 0");
    const double b = field.magnitude();
    if (t == 0.0 || b == 0.0) return Mat3::Identity();
    return axis_angle_rotation(field.b / b, field.gyromagnetic_ratio * b * t);
}

CollectiveSpinState apply_rotation(const CollectiveSpinState& state, const Mat3& rotation) {
    if ((rotation * rotation.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
        throw DomainError("apply_rotation: matrix is not orthogonal");
    CollectiveSpinState out = state;
    out.mean = rotation * state.mean;
    out.cov = symmetrize(rotation * state.cov * rotation.transpose());
    return out;
}

double larmor_period(const MagneticField& field) {
    const double b = field.magnitude();
    if (b == 0.0) throw DomainError("larmor_period: zero field has no finite period");
    if (!(field.gyromagnetic_ratio > 0.0))
        throw DomainError("larmor_period: gyromagnetic ratio must be > 0");
    return 2.0 * std::numbers::pi / (field.gyromagnetic_ratio * b);
}

double optical_depth(double n_atoms, const PhysicalConstants& consts) {
    if (!(consts.interaction_area > 0.0))
        throw DomainError("optical_depth: interaction area must be > 0");
    return consts.sigma0() / consts.interaction_area * n_atoms;
}

}  // namespace qndspin::spin
