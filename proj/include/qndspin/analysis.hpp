#pragma once

#include "qndspin/probe.hpp"
#include "qndspin/sequence.hpp"
#include "qndspin/types.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace qndspin::analysis {

// Relative singular-value cutoff of the pseudo-inverse used for Gamma_1.
inline constexpr double kPinvTolerance = 1e-10;

/// Unbiased sample mean and covariance, explicitly symmetrized.
/// Throws EstimationError for fewer than two vectors.
Mat3 sample_covariance(std::span<const Vec3> vectors);
Vec3 sample_mean(std::span<const Vec3> vectors);
/// Unbiased cross-covariance cov(a_i, b_j).
Mat3 sample_cross_covariance(std::span<const Vec3> a, std::span<const Vec3> b);

struct ConditionalCovariance {
    Mat3 value = Mat3::Zero();
    bool singular = false;  // pseudo-inverse was needed for g1
};

/// Schur complement g2 - g12^T g1^{-1} g12, with g12 = cov(F1, F2).
ConditionalCovariance conditional_covariance(const Mat3& g1, const Mat3& g2, const Mat3& g12);

struct ScalarConditional {
    double variance = 0.0;
    double chi = 0.0;
    bool degenerate = false;  // var(x1) == 0; variance is var(x2), chi is 0
};

/// chi = cov(x1, x2) / var(x1), variance = var(x2 - chi x1).
ScalarConditional conditional_variance_scalar(std::span<const double> x1,
                                              std::span<const double> x2);

/// Indices of shots with |f1 - center|^2 < cutoff * n_atoms.
std::vector<std::size_t> select_shots(std::span<const sequence::ShotRecord> shots, double cutoff,
                                      const Vec3& center);

struct WitnessResult {
    double xi2 = 0.0;
    double xi2_stderr = 0.0;
    double entangled_atoms_lower_bound = 0.0;
    double significance_sigmas = 0.0;  // (1 - xi2) / stderr when xi2 < 1
    bool negative_variance = false;    // readout subtraction overshot
};

/// xi^2 = v_tilde / (f N_A) and the entangled-atom bound max(0, (1 - xi^2) N_A).
/// `v_tilde_stderr` propagates into xi2_stderr.
WitnessResult squeezing_parameter(double v_tilde, double n_atoms, double f = 1.0,
                                  double v_tilde_stderr = 0.0);

/// Standard deviation of `statistic` over seeded bootstrap resamples of
/// {0..n-1}. Each resample has its own substream, so the result does not
/// depend on `workers`.
double bootstrap_stderr(std::size_t n, std::size_t resamples, std::uint64_t seed,
                        const std::function<double(std::span<const std::size_t>)>& statistic,
                        int workers = 1);

struct FitResult {
    std::string model_tag;
    std::vector<std::string> names;
    std::vector<double> params;
    std::vector<double> stderrs;
    double residual_norm = 0.0;

    double param(const std::string& name) const;
    double stderr_of(const std::string& name) const;
};

struct NoisePoint {
    double n_atoms = 0.0;
    double v = 0.0;
};

/// Least squares of V(N) = V0 + a N + c N^2. With `fix_linear` the slope a
/// is held at `linear_value` (2 for f = 1). Throws FitError on rank deficiency.
FitResult fit_noise_scaling(std::span<const NoisePoint> points, bool fix_linear,
                            double linear_value = 2.0);

/// Damped least squares of V(N) = f(f+1) N / (1 + b zeta(N)) for the efficiency b
/// (2N / (1 + b zeta) for f = 1).
FitResult fit_snr_model(std::span<const NoisePoint> points, const probe::ProbeConfig& probe,
                        double f = 1.0);

/// Pearson correlations among (f1_z, f1_y, f1_x, f2_z, f2_y, f2_x) of the
/// atom shots. Entries involving a zero-variance channel are NaN.
struct CorrelationMatrix {
    Mat6 rho = Mat6::Zero();
    std::vector<int> degenerate_channels;
};
CorrelationMatrix correlation_matrix(std::span<const sequence::ShotRecord> shots);

/// |mean(F)| / (f N_A) for the first and second round.
std::array<double, 2> residual_polarization(std::span<const sequence::ShotRecord> shots,
                                            double f = 1.0);

struct CovarianceReport {
    Mat3 gamma1 = Mat3::Zero();
    Mat3 gamma2 = Mat3::Zero();
    Mat3 gamma12 = Mat3::Zero();
    Mat3 gamma_cond = Mat3::Zero();
    double v1 = 0.0, v2 = 0.0, v_cond = 0.0;
    double v0 = 0.0;
    double v1_tilde = 0.0, v2_tilde = 0.0, v_cond_tilde = 0.0;
    std::size_t n_shots = 0;
    double n_atoms_mean = 0.0;
    bool gamma1_singular = false;
};

/// Covariance blocks of a set of shots with `v0` subtracted from each total
/// variance. Throws EstimationError for fewer than two shots, and
/// NumericalError if trace(Gamma_2|1) exceeds trace(Gamma_2).
CovarianceReport covariance_report(std::span<const sequence::ShotRecord> shots, double v0);

enum class SelectionMean { per_bin, global };
enum class ReadoutSubtraction { reference, analytic };

struct AnalysisOptions {
    std::size_t n_bins = 10;
    std::size_t min_shots_per_bin = 10;
    double cutoff = 0.75;
    std::vector<double> cutoff_scan;  // empty: no scan
    double scan_n_atoms = 1.1e6;      // the scan runs on the bin closest to this
    SelectionMean selection_mean = SelectionMean::per_bin;
    ReadoutSubtraction readout = ReadoutSubtraction::reference;
    std::size_t bootstrap_resamples = 1000;
    std::uint64_t seed = 7;
    double f = 1.0;
    probe::ProbeConfig probe;        // zeta for the SNR fit, sigma for analytic V0
    Mat3 detector_noise_cov = Mat3::Zero();  // added to the analytic V0
    int workers = 1;
};

void validate(const AnalysisOptions& options);

struct SelectionResult {
    double cutoff = 0.0;
    std::size_t n_selected = 0;
    double v2_tilde = 0.0;
    WitnessResult witness;
};

struct BinResult {
    std::size_t index = 0;
    double n_atoms_min = 0.0, n_atoms_max = 0.0;
    CovarianceReport cov;
    WitnessResult first;        // from v1_tilde
    WitnessResult second;       // from v2_tilde
    WitnessResult conditional;  // from v_cond_tilde
    SelectionResult selection;  // at options.cutoff
};

struct SkippedBin {
    std::size_t index = 0;
    std::size_t n_shots = 0;
    std::string reason;
};

struct FitEntry {
    std::optional<FitResult> result;
    std::string error;
};

struct DatasetAnalysis {
    sequence::ReferenceNoise reference;
    double v0 = 0.0;
    // First/second-round total variance of the reference shots minus v0.
    double reference_v1_tilde = 0.0, reference_v2_tilde = 0.0;
    std::size_t n_atom_shots = 0;
    std::vector<BinResult> bins;
    std::vector<SkippedBin> skipped;
    std::map<std::string, FitEntry> fits;  // unconditional_1, unconditional_2, conditional, snr_model
    std::vector<SelectionResult> cutoff_scan;
    std::optional<std::size_t> scan_bin;
    std::optional<CorrelationMatrix> correlation;
    // Residual polarization (first, second round) of the scan bin, or of the
    // highest-N bin when no scan was requested.
    std::optional<std::array<double, 2>> residual_polarization;
};

/// Shots bucketed into equal-population bins by n_atoms (ascending).
std::vector<std::vector<std::size_t>> equal_population_bins(
    std::span<const sequence::ShotRecord> shots, std::size_t n_bins);

/// Selection-path witness on one bin: select by the first round, evaluate
/// xi^2 on the second round of the selected shots.
SelectionResult selection_witness(std::span<const sequence::ShotRecord> bin, double cutoff,
                                  const Vec3& center, double v0, const AnalysisOptions& options,
                                  std::uint64_t stream);

/// Full pipeline: reference noise, binning, per-bin covariance and witnesses,
/// noise-scaling and SNR fits, optional cutoff scan.
DatasetAnalysis analyze_dataset(const sequence::Dataset& dataset, const AnalysisOptions& options);

}  // namespace qndspin::analysis
