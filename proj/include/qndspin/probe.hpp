#pragma once

#include "qndspin/spin.hpp"
#include "qndspin/types.hpp"

#include <optional>
#include <span>
#include <utility>

namespace qndspin::probe {

/// Faraday probe parameters. Defaults are the experiment's operating point.
struct ProbeConfig {
    double g1 = 9.0e-8;             // rad per spin, vector coupling
    double g2 = -4.1e-9;            // rad per spin, tensor coupling
    double n_photons = 2.8e8;       // per pulse
    double pulse_duration = 1e-6;   // s
    double efficiency = 0.75;       // b, scales the information per pulse
    // Replaces 1/(g1 sqrt(b N_L)) as the per-pulse readout sigma when set.
    std::optional<double> readout_sigma_override;
    // Random rotation about the probe axis per pulse, angle std g1 sqrt(N_L)/2.
    bool transverse_backaction = false;
};

void validate(const ProbeConfig& probe);

/// Initial-frame spin component addressed by a pulse.
enum class Component { x = 0, y = 1, z = 2 };

char component_name(Component c);

struct PulseOutcome {
    double measured_value = 0.0;  // spins
    Component component = Component::z;
    double rotation_angle = 0.0;  // phi = g1 * measured_value
};

/// Per-pulse readout noise in spins: 1/(g1 sqrt(b N_L)) or the override.
double readout_noise_sigma(const ProbeConfig& probe);

/// Ideal SNR zeta = (2/3) g1^2 N_L N_A. Detection efficiency is not included.
double snr(const ProbeConfig& probe, double n_atoms);

/// Ratio of TSS projection noise to readout variance. Equals b * zeta for
/// f = 1 without a sigma override.
double effective_snr(const ProbeConfig& probe, double n_atoms, double f = 1.0);

/// Kalman update on a scalar linear readout m = h . F + noise.
spin::CollectiveSpinState condition_on_readout(const spin::CollectiveSpinState& state,
                                               const Vec3& h, double measured,
                                               double noise_variance);

/// Kalman update on a measurement of the z component.
spin::CollectiveSpinState condition_on_z(const spin::CollectiveSpinState& state, double measured,
                                         double noise_variance);

/// Readout of a concrete spin vector: z component plus readout noise.
PulseOutcome measure(const Vec3& spin, const ProbeConfig& probe, Rng& rng);

/// One QND pulse on a Gaussian state. The true z value is drawn from the
/// state's z marginal, the outcome adds readout noise, and the returned state
/// is the posterior conditioned on the outcome.
std::pair<PulseOutcome, spin::CollectiveSpinState> simulate_pulse(
    const spin::CollectiveSpinState& state, const ProbeConfig& probe, Rng& rng);

/// Covariance added by the optional transverse back-action (linearized
/// random rotation about z with std g1 sqrt(N_L)/2).
Mat3 backaction_covariance(const spin::CollectiveSpinState& state, const ProbeConfig& probe);

/// Alignment-to-orientation angle: theta = arctan(g2 N_L / 4). Never applied
/// to the state.
double tensor_angle(const ProbeConfig& probe);

/// Precession angle during one pulse: gamma |B| tau.
double intra_pulse_angle(const spin::MagneticField& field, double pulse_duration);

/// Atom number from the rotation of a fully pumped sample (F_z = f N_A).
double danm_estimate(double phi, const ProbeConfig& probe, double f = 1.0);

struct CalibrationPair {
    double phi = 0.0;      // rad
    double n_atoms = 0.0;  // independent count
};

struct G1Calibration {
    double g1 = 0.0;
    double standard_error = 0.0;
    double residual_norm = 0.0;
    std::size_t n_pairs = 0;
};

/// Slope through the origin of phi against f * n_atoms.
/// Throws EstimationError with fewer than two pairs or constant n_atoms.
G1Calibration calibrate_g1(std::span<const CalibrationPair> pairs, double f = 1.0);

}  // namespace qndspin::probe
