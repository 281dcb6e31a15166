#include "qndspin/analysis.hpp"

#include "least_squares.hpp"
#include "parallel.hpp"
#include "qndspin/error.hpp"
#include "stats_detail.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace qndspin::analysis {

using sequence::ShotRecord;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

enum StreamPurpose : std::uint64_t { kBinBootstrap = 1, kSelectionBootstrap = 2 };

// Per-shot (f1, f2) stacked into 6-vectors, centered on the sample mean so
// resampled moments do not suffer from cancellation.
struct PairedShots {
    std::vector<Vec6> rows;
};

PairedShots stack(std::span<const ShotRecord> shots) {
    PairedShots p;
    p.rows.reserve(shots.size());
    Vec6 mean = Vec6::Zero();
    for (const auto& s : shots) {
        Vec6 v;
        v << s.f1, s.f2;
        p.rows.push_back(v);
        mean += v;
    }
    mean /= static_cast<double>(shots.size());
    for (auto& v : p.rows) v -= mean;
    return p;
}

Mat6 resampled_covariance(const PairedShots& p, std::span<const std::size_t> idx) {
    Vec6 sum = Vec6::Zero();
    Mat6 outer = Mat6::Zero();
    for (std::size_t i : idx) {
        const Vec6& v = p.rows[i];
        sum += v;
        outer.noalias() += v * v.transpose();
    }
    const double n = static_cast<double>(idx.size());
    return (outer - sum * sum.transpose() / n) / (n - 1.0);
}

// Standard deviations of a vector-valued statistic over bootstrap resamples.
Eigen::VectorXd bootstrap_stderrs(
    std::size_t n, std::size_t resamples, std::uint64_t seed, std::uint64_t tag,
    const std::function<Eigen::VectorXd(std::span<const std::size_t>)>& statistic, int workers) {
    if (resamples < 2 || n < 2) return Eigen::VectorXd();
    std::vector<Eigen::VectorXd> values(resamples);
    detail::parallel_for(resamples, workers, [&](std::size_t r) {
        Rng rng = make_stream(seed, r, tag);
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = pick(rng);
        values[r] = statistic(idx);
    });
    const Eigen::Index k = values.front().size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(k);
    for (const auto& v : values) mean += v;
    mean /= static_cast<double>(resamples);
    Eigen::VectorXd var = Eigen::VectorXd::Zero(k);
    for (const auto& v : values) var += (v - mean).cwiseAbs2();
    return (var / static_cast<double>(resamples - 1)).cwiseSqrt();
}

std::uint64_t stream_tag(std::size_t bin, StreamPurpose purpose, std::size_t extra = 0) {
    return (static_cast<std::uint64_t>(bin) << 32) | (static_cast<std::uint64_t>(extra) << 8) |
           purpose;
}

double mean_atoms(std::span<const ShotRecord> shots) {
    double s = 0.0;
    for (const auto& r : shots) s += r.n_atoms;
    return s / static_cast<double>(shots.size());
}

}  // namespace

Mat3 sample_covariance(std::span<const Vec3> vectors) { return detail::covariance(vectors); }

Vec3 sample_mean(std::span<const Vec3> vectors) {
    if (vectors.empty()) throw EstimationError("sample_mean: no vectors");
    return detail::mean_of(vectors);
}

Mat3 sample_cross_covariance(std::span<const Vec3> a, std::span<const Vec3> b) {
    return detail::cross_covariance(a, b);
}

ConditionalCovariance conditional_covariance(const Mat3& g1, const Mat3& g2, const Mat3& g12) {
    const Eigen::JacobiSVD<Mat3> svd(g1, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3& s = svd.singularValues();
    const double cutoff = kPinvTolerance * s.maxCoeff();
    ConditionalCovariance out;
    Vec3 inv = Vec3::Zero();
    for (int i = 0; i < 3; ++i) {
        if (s[i] > cutoff && s[i] > 0.0)
            inv[i] = 1.0 / s[i];
        else
            out.singular = true;
    }
    const Mat3 g1_inv = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
    out.value = symmetrize(g2 - g12.transpose() * g1_inv * g12);
    return out;
}

ScalarConditional conditional_variance_scalar(std::span<const double> x1,
                                              std::span<const double> x2) {
    if (x1.size() != x2.size()) throw EstimationError("conditional_variance_scalar: length mismatch");
    const std::size_t n = x1.size();
    if (n < 2) throw EstimationError("conditional_variance_scalar: need at least two samples");
    const double m1 = std::accumulate(x1.begin(), x1.end(), 0.0) / n;
    const double m2 = std::accumulate(x2.begin(), x2.end(), 0.0) / n;
    double s11 = 0.0, s12 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s11 += (x1[i] - m1) * (x1[i] - m1);
        s12 += (x1[i] - m1) * (x2[i] - m2);
    }
    ScalarConditional out;
    out.degenerate = s11 == 0.0;
    out.chi = out.degenerate ? 0.0 : s12 / s11;
    double mr = 0.0;
    for (std::size_t i = 0; i < n; ++i) mr += x2[i] - out.chi * x1[i];
    mr /= n;
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x2[i] - out.chi * x1[i] - mr;
        v += d * d;
    }
    out.variance = v / (n - 1);
    return out;
}

std::vector<std::size_t> select_shots(std::span<const ShotRecord> shots, double cutoff,
                                      const Vec3& center) {
    if (!(cutoff > 0.0)) throw DomainError("select_shots: cutoff must be > 0");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < shots.size(); ++i) {
        if (std::isinf(cutoff) || (shots[i].f1 - center).squaredNorm() < cutoff * shots[i].n_atoms)
            out.push_back(i);
    }
    return out;
}

WitnessResult squeezing_parameter(double v_tilde, double n_atoms, double f, double v_tilde_stderr) {
    if (!(n_atoms > 0.0)) throw DomainError("squeezing_parameter: n_atoms must be > 0");
    if (!(f > 0.0)) throw DomainError("squeezing_parameter: f must be > 0");
    WitnessResult w;
    w.xi2 = v_tilde / (f * n_atoms);
    w.xi2_stderr = v_tilde_stderr / (f * n_atoms);
    w.entangled_atoms_lower_bound = std::max(0.0, (1.0 - w.xi2) * n_atoms);
    w.significance_sigmas = (w.xi2 < 1.0 && w.xi2_stderr > 0.0) ? (1.0 - w.xi2) / w.xi2_stderr : 0.0;
    w.negative_variance = v_tilde < 0.0;
    return w;
}

double bootstrap_stderr(std::size_t n, std::size_t resamples, std::uint64_t seed,
                        const std::function<double(std::span<const std::size_t>)>& statistic,
                        int workers) {
    const auto se = bootstrap_stderrs(
        n, resamples, seed, 0,
        [&](std::span<const std::size_t> idx) {
            Eigen::VectorXd v(1);
            v[0] = statistic(idx);
            return v;
        },
        workers);
    return se.size() ? se[0] : 0.0;
}

double FitResult::param(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return params[i];
    throw std::out_of_range("FitResult: no parameter " + name);
}

double FitResult::stderr_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return stderrs[i];
    throw std::out_of_range("FitResult: no parameter " + name);
}

FitResult fit_noise_scaling(std::span<const NoisePoint> points, bool fix_linear,
                            double linear_value) {
    std::vector<double> distinct;
    for (const auto& p : points) distinct.push_back(p.n_atoms);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    const std::size_t needed = fix_linear ? 3 : 4;
    if (distinct.size() < needed)
        throw FitError(fmt::format("fit_noise_scaling: basis {} is rank deficient with {} distinct "
                                   "n_atoms values (need {})",
                                   fix_linear ? "{1, N^2}" : "{1, N, N^2}", distinct.size(), needed));

    const int p = fix_linear ? 2 : 3;
    const auto n = static_cast<Eigen::Index>(points.size());
    Eigen::MatrixXd x(n, p);
    Eigen::VectorXd y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double na = points[i].n_atoms;
        y[i] = points[i].v - (fix_linear ? linear_value * na : 0.0);
        x(i, 0) = 1.0;
        if (fix_linear) {
            x(i, 1) = na * na;
        } else {
            x(i, 1) = na;
            x(i, 2) = na * na;
        }
    }
    const Eigen::VectorXd scale = x.colwise().norm().transpose();
    const Eigen::MatrixXd xs = x * scale.cwiseInverse().asDiagonal();
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
    if (qr.rank() < p) {
        throw FitError(fmt::format("fit_noise_scaling: design matrix in basis {} has rank {} < {}",
                                   fix_linear ? "{1, N^2}" : "{1, N, N^2}", qr.rank(), p));
    }
    const Eigen::VectorXd beta_s = qr.solve(y);
    const Eigen::VectorXd beta = beta_s.cwiseQuotient(scale);
    const double rss = (y - xs * beta_s).squaredNorm();
    const Eigen::MatrixXd cov_s = detail::parameter_covariance(xs, rss, static_cast<int>(n) - p);
    const Eigen::VectorXd se = (cov_s.diagonal().cwiseMax(0.0).cwiseSqrt()).cwiseQuotient(scale);

    FitResult out;
    out.model_tag = fix_linear ? "quadratic_fixed_linear" : "quadratic";
    out.names = {"V0", "a", "c"};
    if (fix_linear) {
        out.params = {beta[0], linear_value, beta[1]};
        out.stderrs = {se[0], 0.0, se[1]};
    } else {
        out.params = {beta[0], beta[1], beta[2]};
        out.stderrs = {se[0], se[1], se[2]};
    }
    out.residual_norm = std::sqrt(rss);
    return out;
}

FitResult fit_snr_model(std::span<const NoisePoint> points, const probe::ProbeConfig& probe,
                        double f) {
    if (points.size() < 2) throw FitError("fit_snr_model: need at least two points");
    // Total TSS variance per atom, f(f+1) (= 2 for f = 1).
    const double tss_total = f * (f + 1.0);
    std::vector<double> zeta(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) zeta[i] = probe::snr(probe, points[i].n_atoms);

    // Start from the median of the per-point inversions b_i = (f(f+1) N / V - 1) / zeta.
    std::vector<double> guesses;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].v > 0.0 && zeta[i] > 0.0)
            guesses.push_back((tss_total * points[i].n_atoms / points[i].v - 1.0) / zeta[i]);
    }
    double b0 = 1.0;
    if (!guesses.empty()) {
        std::nth_element(guesses.begin(), guesses.begin() + guesses.size() / 2, guesses.end());
        b0 = guesses[guesses.size() / 2];
        if (!std::isfinite(b0) || b0 <= 0.0) b0 = 1.0;
    }

    detail::LsqProblem problem;
    problem.n_params = 1;
    problem.n_residuals = static_cast<int>(points.size());
    problem.residuals = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
        for (std::size_t i = 0; i < points.size(); ++i)
            r[i] = points[i].v - tss_total * points[i].n_atoms / (1.0 + x[0] * zeta[i]);
    };
    problem.jacobian = [&](const Eigen::VectorXd& x, Eigen::MatrixXd& j) {
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double d = 1.0 + x[0] * zeta[i];
            j(i, 0) = tss_total * points[i].n_atoms * zeta[i] / (d * d);
        }
    };
    Eigen::VectorXd x0(1);
    x0[0] = b0;
    const auto res = detail::least_squares(problem, x0, {});
    if (!res.converged)
        throw FitError("fit_snr_model: damped least squares did not converge", res.trace);

    const Eigen::MatrixXd cov = detail::parameter_covariance(
        res.jacobian, res.rss, static_cast<int>(points.size()) - 1);
    FitResult out;
    out.model_tag = "snr_efficiency";
    out.names = {"b"};
    out.params = {res.x[0]};
    out.stderrs = {std::sqrt(std::max(cov(0, 0), 0.0))};
    out.residual_norm = std::sqrt(res.rss);
    return out;
}

CorrelationMatrix correlation_matrix(std::span<const ShotRecord> shots) {
    std::vector<const ShotRecord*> atoms;
    for (const auto& s : shots)
        if (!s.is_reference) atoms.push_back(&s);
    if (atoms.size() < 2) throw EstimationError("correlation_matrix: need at least two shots");
    std::vector<ShotRecord> copy;
    copy.reserve(atoms.size());
    for (auto* a : atoms) copy.push_back(*a);
    const auto p = stack(copy);
    std::vector<std::size_t> idx(copy.size());
    std::iota(idx.begin(), idx.end(), 0);
    const Mat6 c = resampled_covariance(p, idx);

    CorrelationMatrix out;
    for (int i = 0; i < 6; ++i)
        if (!(c(i, i) > 0.0)) out.degenerate_channels.push_back(i);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 6; ++j) {
            if (i == j) {
                out.rho(i, j) = c(i, i) > 0.0 ? 1.0 : kNaN;
            } else if (c(i, i) > 0.0 && c(j, j) > 0.0) {
                out.rho(i, j) = std::clamp(c(i, j) / std::sqrt(c(i, i) * c(j, j)), -1.0, 1.0);
            } else {
                out.rho(i, j) = kNaN;
            }
        }
    }
    return out;
}

std::array<double, 2> residual_polarization(std::span<const ShotRecord> shots, double f) {
    if (shots.empty()) throw EstimationError("residual_polarization: no shots");
    Vec3 m1 = Vec3::Zero(), m2 = Vec3::Zero();
    for (const auto& s : shots) {
        m1 += s.f1;
        m2 += s.f2;
    }
    const double n = static_cast<double>(shots.size());
    const double scale = f * mean_atoms(shots);
    if (!(scale > 0.0)) throw DomainError("residual_polarization: mean n_atoms must be > 0");
    return {(m1 / n).norm() / scale, (m2 / n).norm() / scale};
}

CovarianceReport covariance_report(std::span<const ShotRecord> shots, double v0) {
    if (shots.size() < 2) throw EstimationError("covariance_report: need at least two shots");
    const auto p = stack(shots);
    std::vector<std::size_t> idx(shots.size());
    std::iota(idx.begin(), idx.end(), 0);
    const Mat6 c = resampled_covariance(p, idx);

    CovarianceReport r;
    r.gamma1 = symmetrize(c.topLeftCorner<3, 3>());
    r.gamma2 = symmetrize(c.bottomRightCorner<3, 3>());
    r.gamma12 = c.topRightCorner<3, 3>();
    const auto cond = conditional_covariance(r.gamma1, r.gamma2, r.gamma12);
    r.gamma_cond = cond.value;
    r.gamma1_singular = cond.singular;
    r.v1 = r.gamma1.trace();
    r.v2 = r.gamma2.trace();
    r.v_cond = r.gamma_cond.trace();
    r.v0 = v0;
    r.v1_tilde = r.v1 - v0;
    r.v2_tilde = r.v2 - v0;
    r.v_cond_tilde = r.v_cond - v0;
    r.n_shots = shots.size();
    r.n_atoms_mean = mean_atoms(shots);
    if (r.v_cond > r.v2 * (1.0 + 1e-9) + 1e-9)
        throw NumericalError(fmt::format("trace(Gamma_2|1) = {} exceeds trace(Gamma_2) = {}",
                                         r.v_cond, r.v2));
    return r;
}

void validate(const AnalysisOptions& o) {
    if (o.n_bins < 1) throw ConfigError("analysis.bins must be >= 1");
    if (o.min_shots_per_bin < 2) throw ConfigError("analysis.min_shots_per_bin must be >= 2");
    if (!(o.cutoff > 0.0)) throw ConfigError("analysis.cutoff must be > 0");
    for (double c : o.cutoff_scan)
        if (!(c > 0.0)) throw ConfigError("analysis.cutoff_scan values must be > 0");
    if (!(o.f > 0.0)) throw ConfigError("analysis.f must be > 0");
}

std::vector<std::vector<std::size_t>> equal_population_bins(std::span<const ShotRecord> shots,
                                                            std::size_t n_bins) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < shots.size(); ++i)
        if (!shots[i].is_reference) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return shots[a].n_atoms < shots[b].n_atoms;
    });
    const std::size_t n = order.size();
    const std::size_t bins = std::min(n_bins, n);
    std::vector<std::vector<std::size_t>> out(bins);
    for (std::size_t b = 0; b < bins; ++b)
        out[b].assign(order.begin() + static_cast<std::ptrdiff_t>(b * n / bins),
                      order.begin() + static_cast<std::ptrdiff_t>((b + 1) * n / bins));
    return out;
}

SelectionResult selection_witness(std::span<const ShotRecord> bin, double cutoff,
                                  const Vec3& center, double v0, const AnalysisOptions& options,
                                  std::uint64_t stream) {
    const auto idx = select_shots(bin, cutoff, center);
    SelectionResult out;
    out.cutoff = cutoff;
    out.n_selected = idx.size();
    if (idx.size() < 2) {
        out.v2_tilde = kNaN;
        out.witness.xi2 = out.witness.xi2_stderr = kNaN;
        out.witness.entangled_atoms_lower_bound = 0.0;
        return out;
    }
    std::vector<Vec3> f2;
    double n_sum = 0.0;
    for (std::size_t i : idx) {
        f2.push_back(bin[i].f2);
        n_sum += bin[i].n_atoms;
    }
    const Vec3 m = detail::mean_of(f2);
    for (auto& v : f2) v -= m;
    auto trace_of = [&](std::span<const std::size_t> pick) {
        Vec3 s = Vec3::Zero();
        Vec3 sq = Vec3::Zero();
        for (std::size_t i : pick) {
            s += f2[i];
            sq += f2[i].cwiseAbs2();
        }
        const double n = static_cast<double>(pick.size());
        return (sq.sum() - s.squaredNorm() / n) / (n - 1.0);
    };
    std::vector<std::size_t> all(f2.size());
    std::iota(all.begin(), all.end(), 0);
    out.v2_tilde = trace_of(all) - v0;
    const auto se = bootstrap_stderrs(
        f2.size(), options.bootstrap_resamples, options.seed, stream,
        [&](std::span<const std::size_t> pick) {
            Eigen::VectorXd v(1);
            v[0] = trace_of(pick);
            return v;
        },
        options.workers);
    out.witness = squeezing_parameter(out.v2_tilde, n_sum / idx.size(), options.f,
                                      se.size() ? se[0] : 0.0);
    return out;
}

DatasetAnalysis analyze_dataset(const sequence::Dataset& dataset, const AnalysisOptions& options) {
    validate(options);
    DatasetAnalysis out;

    std::vector<ShotRecord> atoms;
    std::size_t n_reference = 0;
    for (const auto& r : dataset) {
        if (r.is_reference)
            ++n_reference;
        else
            atoms.push_back(r);
    }
    out.n_atom_shots = atoms.size();

    if (options.readout == ReadoutSubtraction::reference || n_reference >= 2)
        out.reference = sequence::reference_variance(dataset);
    if (options.readout == ReadoutSubtraction::analytic) {
        const double s = probe::readout_noise_sigma(options.probe);
        out.v0 = 3.0 * s * s + options.detector_noise_cov.trace();
    } else {
        out.v0 = out.reference.v0;
    }
    if (out.reference.n_shots >= 2) {
        out.reference_v1_tilde = out.reference.gamma0_first.trace() - out.v0;
        out.reference_v2_tilde = out.reference.gamma0_second.trace() - out.v0;
    }

    Vec3 global_center = Vec3::Zero();
    for (const auto& a : atoms) global_center += a.f1;
    if (!atoms.empty()) global_center /= static_cast<double>(atoms.size());

    const auto bins = equal_population_bins(atoms, options.n_bins);
    std::vector<std::vector<ShotRecord>> bin_shots(bins.size());
    for (std::size_t b = 0; b < bins.size(); ++b)
        for (std::size_t i : bins[b]) bin_shots[b].push_back(atoms[i]);

    auto center_of = [&](const std::vector<ShotRecord>& shots) -> Vec3 {
        if (options.selection_mean == SelectionMean::global) return global_center;
        Vec3 c = Vec3::Zero();
        for (const auto& s : shots) c += s.f1;
        return c / static_cast<double>(shots.size());
    };

    for (std::size_t b = 0; b < bins.size(); ++b) {
        const auto& shots = bin_shots[b];
        if (shots.size() < options.min_shots_per_bin) {
            out.skipped.push_back({b, shots.size(),
                                   fmt::format("{} shots < minimum {}", shots.size(),
                                               options.min_shots_per_bin)});
            continue;
        }
        BinResult br;
        br.index = b;
        br.n_atoms_min = shots.front().n_atoms;
        br.n_atoms_max = shots.back().n_atoms;
        br.cov = covariance_report(shots, out.v0);
        if (!(br.cov.n_atoms_mean > 0.0)) {
            out.skipped.push_back({b, shots.size(), "mean n_atoms is zero"});
            continue;
        }

        const auto paired = stack(shots);
        const auto se = bootstrap_stderrs(
            shots.size(), options.bootstrap_resamples, options.seed, stream_tag(b, kBinBootstrap),
            [&](std::span<const std::size_t> idx) {
                const Mat6 c = resampled_covariance(paired, idx);
                const auto cond = conditional_covariance(c.topLeftCorner<3, 3>(),
                                                         c.bottomRightCorner<3, 3>(),
                                                         c.topRightCorner<3, 3>());
                Eigen::VectorXd v(3);
                v << c.topLeftCorner<3, 3>().trace(), c.bottomRightCorner<3, 3>().trace(),
                    cond.value.trace();
                return v;
            },
            options.workers);
        auto stderr_at = [&](int i) { return se.size() ? se[i] : 0.0; };
        const double n_mean = br.cov.n_atoms_mean;
        br.first = squeezing_parameter(br.cov.v1_tilde, n_mean, options.f, stderr_at(0));
        br.second = squeezing_parameter(br.cov.v2_tilde, n_mean, options.f, stderr_at(1));
        br.conditional = squeezing_parameter(br.cov.v_cond_tilde, n_mean, options.f, stderr_at(2));
        br.selection = selection_witness(shots, options.cutoff, center_of(shots), out.v0, options,
                                         stream_tag(b, kSelectionBootstrap));
        out.bins.push_back(std::move(br));
    }

    std::vector<NoisePoint> p1, p2, pc, pct;
    for (const auto& b : out.bins) {
        p1.push_back({b.cov.n_atoms_mean, b.cov.v1});
        p2.push_back({b.cov.n_atoms_mean, b.cov.v2});
        pc.push_back({b.cov.n_atoms_mean, b.cov.v_cond});
        pct.push_back({b.cov.n_atoms_mean, b.cov.v_cond_tilde});
    }
    auto run_fit = [](auto&& fn) {
        FitEntry e;
        try {
            e.result = fn();
        } catch (const FitError& err) {
            e.error = err.what();
        }
        return e;
    };
    const double linear = options.f * (options.f + 1.0);
    out.fits["unconditional_1"] = run_fit([&] { return fit_noise_scaling(p1, true, linear); });
    out.fits["unconditional_2"] = run_fit([&] { return fit_noise_scaling(p2, true, linear); });
    out.fits["conditional"] = run_fit([&] { return fit_noise_scaling(pc, false); });
    out.fits["snr_model"] = run_fit([&] { return fit_snr_model(pct, options.probe, options.f); });

    if (atoms.size() >= 2) out.correlation = correlation_matrix(atoms);
    if (!out.bins.empty())
        out.residual_polarization =
            residual_polarization(bin_shots[out.bins.back().index], options.f);

    if (!options.cutoff_scan.empty() && !out.bins.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < out.bins.size(); ++i) {
            if (std::abs(out.bins[i].cov.n_atoms_mean - options.scan_n_atoms) <
                std::abs(out.bins[best].cov.n_atoms_mean - options.scan_n_atoms))
                best = i;
        }
        out.scan_bin = out.bins[best].index;
        const auto& shots = bin_shots[out.bins[best].index];
        const Vec3 center = center_of(shots);
        out.residual_polarization = residual_polarization(shots, options.f);
        for (std::size_t k = 0; k < options.cutoff_scan.size(); ++k) {
            out.cutoff_scan.push_back(selection_witness(
                shots, options.cutoff_scan[k], center, out.v0, options,
                stream_tag(out.bins[best].index, kSelectionBootstrap, k + 1)));
        }
    }
    return out;
}

}  // namespace qndspin::analysis
