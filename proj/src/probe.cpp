#include "qndspin/probe.hpp"

#include "qndspin/error.hpp"

#include <cmath>

namespace qndspin::probe {

void validate(const ProbeConfig& probe) {
    if (!(probe.g1 > 0.0)) throw DomainError("probe.g1 must be > 0");
    if (!(probe.n_photons > 0.0)) throw DomainError("probe.n_photons must be > 0");
    if (!(probe.efficiency > 0.0 && probe.efficiency <= 1.0))
        throw DomainError("probe.efficiency must lie in (0, 1]");
    if (!(probe.pulse_duration >= 0.0)) throw DomainError("probe.pulse_duration must be >= 0");
    if (probe.readout_sigma_override && !(*probe.readout_sigma_override >= 0.0))
        throw DomainError("probe.readout_sigma_override must be >= 0");
}

char component_name(Component c) {
    switch (c) {
        case Component::x: return 'x';
        case Component::y: return 'y';
        case Component::z: return 'z';
    }
    return '?';
}

double readout_noise_sigma(const ProbeConfig& probe) {
    if (probe.readout_sigma_override) return *probe.readout_sigma_override;
    return 1.0 / (probe.g1 * std::sqrt(probe.efficiency * probe.n_photons));
}

double snr(const ProbeConfig& probe, double n_atoms) {
    return 2.0 / 3.0 * probe.g1 * probe.g1 * probe.n_photons * n_atoms;
}

double effective_snr(const ProbeConfig& probe, double n_atoms, double f) {
    const double sigma = readout_noise_sigma(probe);
    const double prior = spin::tss_variance(n_atoms, f);
    if (sigma == 0.0) return prior > 0.0 ? INFINITY : 0.0;
    return prior / (sigma * sigma);
}

spin::CollectiveSpinState condition_on_readout(const spin::CollectiveSpinState& state,
                                               const Vec3& h, double measured,
                                               double noise_variance) {
    const Vec3 sh = state.cov * h;
    const double total = h.dot(sh) + noise_variance;
    if (!(total > 0.0)) return state;
    const Vec3 gain = sh / total;
    spin::CollectiveSpinState out = state;
    out.mean = state.mean + gain * (measured - h.dot(state.mean));
    out.cov = symmetrize(state.cov - gain * sh.transpose());
    return out;
}

spin::CollectiveSpinState condition_on_z(const spin::CollectiveSpinState& state, double measured,
                                         double noise_variance) {
    return condition_on_readout(state, Vec3::UnitZ(), measured, noise_variance);
}

PulseOutcome measure(const Vec3& spin, const ProbeConfig& probe, Rng& rng) {
    std::normal_distribution<double> noise(0.0, 1.0);
    PulseOutcome out;
    out.measured_value = spin.z() + readout_noise_sigma(probe) * noise(rng);
    out.component = Component::z;
    out.rotation_angle = probe.g1 * out.measured_value;
    return out;
}

std::pair<PulseOutcome, spin::CollectiveSpinState> simulate_pulse(
    const spin::CollectiveSpinState& state, const ProbeConfig& probe, Rng& rng) {
    const double sigma = readout_noise_sigma(probe);
    const double prior_var = state.cov(2, 2);
    PulseOutcome out;
    out.component = Component::z;
    if (prior_var + sigma * sigma <= 0.0) {
        out.measured_value = state.mean.z();
        out.rotation_angle = probe.g1 * out.measured_value;
        return {out, state};
    }
    std::normal_distribution<double> unit(0.0, 1.0);
    const double true_z = state.mean.z() + std::sqrt(std::max(prior_var, 0.0)) * unit(rng);
    out.measured_value = true_z + sigma * unit(rng);
    out.rotation_angle = probe.g1 * out.measured_value;
    return {out, condition_on_z(state, out.measured_value, sigma * sigma)};
}

Mat3 backaction_covariance(const spin::CollectiveSpinState& state, const ProbeConfig& probe) {
    // F' = F + delta * (-F_y, F_x, 0) to first order in the rotation angle.
    const double s = probe.g1 * std::sqrt(probe.n_photons) / 2.0;
    const Mat3 second = state.cov + state.mean * state.mean.transpose();
    Mat3 c = Mat3::Zero();
    c(0, 0) = second(1, 1);
    c(1, 1) = second(0, 0);
    c(0, 1) = c(1, 0) = -second(0, 1);
    return s * s * c;
}

double tensor_angle(const ProbeConfig& probe) {
    return std::atan(probe.g2 * probe.n_photons / 4.0);
}

double intra_pulse_angle(const spin::MagneticField& field, double pulse_duration) {
    if (!(pulse_duration >= 0.0)) throw DomainError("intra_pulse_angle: tau must be >= 0");
    return field.gyromagnetic_ratio * field.magnitude() * pulse_duration;
}

double danm_estimate(double phi, const ProbeConfig& probe, double f) {
    if (f == 0.0) throw DomainError("danm_estimate: f must be nonzero");
    if (!(probe.g1 > 0.0)) throw DomainError("danm_estimate: g1 must be > 0");
    return phi / (probe.g1 * f);
}

G1Calibration calibrate_g1(std::span<const CalibrationPair> pairs, double f) {
    if (pairs.size() < 2) throw EstimationError("calibrate_g1: need at least two pairs");
    if (f == 0.0) throw DomainError("calibrate_g1: f must be nonzero");
    bool varying = false;
    for (const auto& p : pairs) varying |= (p.n_atoms != pairs.front().n_atoms);
    if (!varying) throw EstimationError("calibrate_g1: rank deficient, n_atoms is constant");

    double sxx = 0.0, sxy = 0.0;
    for (const auto& p : pairs) {
        const double x = f * p.n_atoms;
        sxx += x * x;
        sxy += x * p.phi;
    }
    G1Calibration out;
    out.n_pairs = pairs.size();
    out.g1 = sxy / sxx;
    double rss = 0.0;
    for (const auto& p : pairs) {
        const double r = p.phi - out.g1 * f * p.n_atoms;
        rss += r * r;
    }
    out.residual_norm = std::sqrt(rss);
    out.standard_error = std::sqrt(rss / static_cast<double>(pairs.size() - 1) / sxx);
    return out;
}

}  // namespace qndspin::probe
