#pragma once

#include "qndspin/types.hpp"

namespace qndspin::spin {

// gamma (rad s^-1 G^-1) reproducing T_L = 85 us at |B| = 16.9 mG.
inline constexpr double kDefaultGyromagneticRatio = 4.374e6;
inline constexpr double kRubidiumD2Wavelength = 780.241e-9;

/// Gaussian model of the collective spin of the ensemble (hbar = 1).
///
/// `mean` and `cov` are expressed in the initial (preparation) frame with
/// components ordered (x, y, z).
struct CollectiveSpinState {
    Vec3 mean = Vec3::Zero();
    Mat3 cov = Mat3::Zero();
    double n_atoms = 0.0;
    double f = 1.0;
};

/// Throws DomainError unless cov is symmetric PSD, n_atoms >= 0 and f is
/// one of 1/2, 1, 3/2, 2.
void validate(const CollectiveSpinState& state);

struct MagneticField {
    Vec3 b = Vec3::Zero();  // gauss
    double gyromagnetic_ratio = kDefaultGyromagneticRatio;

    double magnitude() const { return b.norm(); }
};

struct PhysicalConstants {
    double wavelength = kRubidiumD2Wavelength;  // m
    double interaction_area = 2.7e-9;           // m^2

    double sigma0() const;
};

/// Per-component collective variance of a thermal spin state: f(f+1)/3 per atom.
double tss_variance(double n_atoms, double f = 1.0);

/// Thermal spin state: zero mean, isotropic covariance tss_variance(n, f).
CollectiveSpinState make_tss(double n_atoms, double f = 1.0);

/// Adds preparation noise: cov += extra_cov, mean += mean_offset.
CollectiveSpinState add_technical_noise(const CollectiveSpinState& state, const Mat3& extra_cov,
                                        const Vec3& mean_offset = Vec3::Zero());

/// Rotation by `angle` about the unit vector `axis` (right-handed, Rodrigues).
Mat3 axis_angle_rotation(const Vec3& axis, double angle);

/// Spin precession over time t: right-handed rotation about b/|b| by gamma|b|t.
///
/// With b along (1,1,1) and t = T_L/3 this maps e_z -> e_x, e_x -> e_y and
/// e_y -> e_z, i.e. the cycle F_z -> F_x -> F_y. A zero field (or t = 0)
/// gives the identity.
Mat3 larmor_rotation_matrix(const MagneticField& field, double t);

/// Gaussian pushforward under a rotation: mean' = R mean, cov' = R cov R^T.
CollectiveSpinState apply_rotation(const CollectiveSpinState& state, const Mat3& rotation);

/// T_L = 2 pi / (gamma |b|). Throws DomainError for a zero field.
double larmor_period(const MagneticField& field);

/// d0 = (sigma0 / A) N_A.
double optical_depth(double n_atoms, const PhysicalConstants& consts);

}  // namespace qndspin::spin
