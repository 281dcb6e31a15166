#pragma once

#include "qndspin/probe.hpp"
#include "qndspin/spin.hpp"
#include "qndspin/types.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace qndspin::sequence {

/// Field along [1,1,1] with |B| = 16.9 mG.
spin::MagneticField default_field();

struct SequenceConfig {
    spin::MagneticField field = default_field();
    probe::ProbeConfig probe;
    int n_pulses = 6;
    int pulses_per_period = 3;
    double f = 1.0;
    // Atomic preparation noise in the initial (x, y, z) frame.
    Mat3 prep_noise_cov = Mat3::Zero();
    Vec3 prep_mean_offset = Vec3::Zero();
    // When > 0 the noise covariance scales as (N/ref)^2 and the offset as N/ref;
    // otherwise both are applied unchanged to every shot with atoms.
    double prep_noise_ref_atoms = 0.0;
    // Correlated detection noise per round, in pulse order (z, y, x).
    Mat3 detector_noise_cov = Mat3::Zero();
    // Isotropic diffusion of the true spin between the two Larmor periods (spins^2).
    double diffusion_per_period = 0.0;
    // Read each pulse at mid-pulse, rotated by half the intra-pulse angle.
    bool intra_pulse_rotation = false;
};

void validate(const SequenceConfig& cfg);

/// One state preparation. f1 and f2 are ordered (F_z, F_y, F_x).
struct ShotRecord {
    Vec3 f1 = Vec3::Zero();
    Vec3 f2 = Vec3::Zero();
    double n_atoms = 0.0;
    bool is_reference = false;
    std::int64_t cycle_id = 0;
    std::int64_t seq_index = 0;
    // Initial-frame component read by each pulse, in pulse order.
    std::array<probe::Component, 6> pulse_labels{};
};

using Dataset = std::vector<ShotRecord>;

/// Component of the preparation frame read by each pulse of the schedule.
/// Throws ConfigError if a Larmor period does not visit all three components.
std::array<probe::Component, 6> pulse_schedule(const SequenceConfig& cfg);

/// Optional estimator trace of a sequence: the Gaussian posterior after each
/// pulse, rotated back to the preparation frame.
struct SequenceTrace {
    spin::CollectiveSpinState prior;
    std::array<spin::CollectiveSpinState, 6> posteriors;
};

/// Prepare, then alternate T_L/3 rotations with QND pulses six times.
ShotRecord run_sequence(const SequenceConfig& cfg, double n_atoms, Rng& rng,
                        SequenceTrace* trace = nullptr);

/// Atomic state at preparation: TSS plus the configured technical noise.
spin::CollectiveSpinState prepared_state(const SequenceConfig& cfg, double n_atoms);

/// Analytic estimator covariance after k pulses (no sampling), preparation frame.
spin::CollectiveSpinState predicted_posterior(const SequenceConfig& cfg, double n_atoms,
                                              int n_pulses);

/// Analytic covariance of the second-round readings given the first round,
/// in record order (z, y, x). This is what the Schur complement estimates.
Mat3 predicted_conditional_covariance(const SequenceConfig& cfg, double n_atoms);

struct CampaignConfig {
    int n_cycles = 602;
    int sequences_per_cycle = 12;
    double loss_fraction = 0.15;
    double initial_atoms = 1.5e6;
    // N0 of each cycle is drawn uniformly in initial_atoms * (1 +- jitter).
    double atom_jitter = 0.05;
    int reference_shots_per_cycle = 2;
    std::uint64_t master_seed = 1;
};

void validate(const CampaignConfig& cfg);

/// N0 (1 - loss)^s for 0-based sequence index s.
double atoms_at_sequence(double n0, double loss_fraction, int seq_index);

/// Full campaign: per cycle, the atom shots followed by the reference shots.
/// Cycles run on up to `workers` threads; the result is independent of it.
Dataset run_campaign(const CampaignConfig& cfg, const SequenceConfig& seq_cfg, int workers = 1);

/// Readout noise estimated from the reference shots.
struct ReferenceNoise {
    Mat3 gamma0_first = Mat3::Zero();   // from f1
    Mat3 gamma0_second = Mat3::Zero();  // from f2
    Mat3 gamma0 = Mat3::Zero();         // mean of the two rounds
    double v0 = 0.0;                    // trace(gamma0)
    std::size_t n_shots = 0;
};

/// Throws EstimationError with fewer than two reference shots.
ReferenceNoise reference_variance(const Dataset& dataset);

inline constexpr const char* kDatasetHeader =
    "cycle_id,seq_index,is_reference,n_atoms,f1_z,f1_y,f1_x,f2_z,f2_y,f2_x";

void write_dataset_csv(std::ostream& out, const Dataset& dataset);
/// Throws SchemaError naming the offending column or line.
Dataset read_dataset_csv(std::istream& in);

}  // namespace qndspin::sequence
