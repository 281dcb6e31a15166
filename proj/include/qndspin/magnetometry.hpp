#pragma once

#include "qndspin/spin.hpp"
#include "qndspin/types.hpp"

#include <span>
#include <string>
#include <vector>

namespace qndspin::magnetometry {

/// Initial polarization of a free-induction-decay trace.
enum class FidBranch { z, y };

struct FidSample {
    double t = 0.0;      // s
    double theta = 0.0;  // rad
};

/// Faraday angle of a precessing polarized sample:
///   z: (g1/B^2) (Bz^2 + (Bx^2 + By^2) cos(w) e) F(0)
///   y: (g1/B^2) (By Bz (1 - cos(w) e) + Bx B sin(w) e) F(0)
/// with w = gamma B t and e = exp(-t^2/T2^2). The envelope applies to the
/// oscillating terms only. A zero field gives g1 F(0) (z) and 0 (y).
double fid_signal(double t, const Vec3& b, FidBranch branch, double f0, double g1, double t2,
                  double gamma = spin::kDefaultGyromagneticRatio);

struct FidFitOptions {
    int max_evaluations = 4000;
    double tolerance = 1e-12;
};

struct FieldEstimate {
    Vec3 b = Vec3::Zero();  // gauss
    double t2 = 0.0;        // s
    double f0 = 0.0;        // spins
    double residual_norm = 0.0;
    // Parameter covariance over (bx_mG, by_mG, bz_mG, t2_us, f0).
    Eigen::Matrix<double, 5, 5> covariance = Eigen::Matrix<double, 5, 5>::Zero();
    // Parameter vectors (bx, by, bz) producing identical signals.
    std::vector<Vec3> equivalent_solutions;
    bool transverse_unidentifiable = false;
    bool magnitude_unidentifiable = false;
    int evaluations = 0;
    std::vector<std::string> flags;
};

/// Joint damped least-squares fit of both branches sharing B, T2 and F(0).
///
/// The z branch is required: without it F(0) cannot be separated from the
/// field direction. A z-only fit cannot split the transverse field between
/// Bx and By (reported as bx, flagged), and a field-aligned z-only trace does
/// not oscillate, leaving |B| unidentifiable (NaN, flagged). The signals are
/// invariant under (By, Bz) -> (-By, -Bz); both solutions are listed and the
/// one with Bz >= 0 is returned. Throws FitError on non-convergence or
/// insufficient data.
FieldEstimate fit_fid(std::span<const FidSample> z_samples, std::span<const FidSample> y_samples,
                      double g1, double gamma = spin::kDefaultGyromagneticRatio,
                      const FidFitOptions& options = {});

struct T2Estimate {
    double t2 = 0.0;  // s; +inf when flagged
    bool infinite = false;
};

/// T2 = 1 / (sigma gamma dB/dz). A zero width or gradient yields an infinite,
/// flagged result.
T2Estimate t2_from_gradient(double sigma_cloud, double gradient,
                            double gamma = spin::kDefaultGyromagneticRatio);

/// Uniformly sampled noiseless trace, `dt` spacing from t = 0 to `duration`.
std::vector<FidSample> synthesize_fid(const Vec3& b, FidBranch branch, double f0, double g1,
                                      double t2, double gamma, double dt, double duration);

}  // namespace qndspin::magnetometry
