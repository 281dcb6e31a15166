#include "qndspin/magnetometry.hpp"

#include "least_squares.hpp"
#include "qndspin/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numeric>
#include <numbers>

namespace qndspin::magnetometry {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kMilliGauss = 1e-3;
constexpr double kMicrosecond = 1e-6;

double envelope(double t, double t2) { return std::exp(-(t * t) / (t2 * t2)); }

double span_of(std::span<const FidSample> s) {
    if (s.empty()) return 0.0;
    const auto [lo, hi] = std::minmax_element(
        s.begin(), s.end(), [](const FidSample& a, const FidSample& b) { return a.t < b.t; });
    return hi->t - lo->t;
}

double median_spacing(std::span<const FidSample> s) {
    std::vector<double> t;
    for (const auto& x : s) t.push_back(x.t);
    std::sort(t.begin(), t.end());
    std::vector<double> d;
    for (std::size_t i = 1; i < t.size(); ++i)
        if (t[i] > t[i - 1]) d.push_back(t[i] - t[i - 1]);
    if (d.empty()) return 0.0;
    std::nth_element(d.begin(), d.begin() + d.size() / 2, d.end());
    return d[d.size() / 2];
}

double periodogram(std::span<const FidSample> s, double mean, double freq) {
    std::complex<double> acc = 0.0;
    const double w = 2.0 * std::numbers::pi * freq;
    for (const auto& x : s) acc += (x.theta - mean) * std::polar(1.0, -w * x.t);
    return std::norm(acc);
}

// Strongest spectral line above one cycle per trace length, refined by
// golden-section search around the coarse grid maximum.
double dominant_frequency(std::span<const FidSample> s) {
    double mean = 0.0;
    for (const auto& x : s) mean += x.theta;
    mean /= static_cast<double>(s.size());
    const double span = span_of(s);
    const double dt = median_spacing(s);
    if (!(span > 0.0) || !(dt > 0.0)) return 0.0;
    const double f_min = 1.0 / span;
    const double f_max = 0.5 / dt;
    const double df = 0.25 / span;
    double best_f = f_min, best_p = -1.0;
    for (double f = f_min; f <= f_max; f += df) {
        const double p = periodogram(s, mean, f);
        if (p > best_p) {
            best_p = p;
            best_f = f;
        }
    }
    double a = std::max(best_f - df, 0.5 * f_min), b = best_f + df;
    const double g = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - g * (b - a), d = a + g * (b - a);
    double pc = periodogram(s, mean, c), pd = periodogram(s, mean, d);
    for (int it = 0; it < 60; ++it) {
        if (pc > pd) {
            b = d;
            d = c;
            pd = pc;
            c = b - g * (b - a);
            pc = periodogram(s, mean, c);
        } else {
            a = c;
            c = d;
            pc = pd;
            d = a + g * (b - a);
            pd = periodogram(s, mean, d);
        }
    }
    return 0.5 * (a + b);
}

// Log-linear fit of the per-period oscillation amplitude against t^2.
double envelope_t2(std::span<const FidSample> s, double omega) {
    const double span = span_of(s);
    const double period = 2.0 * std::numbers::pi / omega;
    std::vector<double> tt, la;
    double t0 = std::numeric_limits<double>::infinity();
    for (const auto& x : s) t0 = std::min(t0, x.t);
    for (double w0 = t0; w0 + period <= t0 + span + 1e-15; w0 += period) {
        double sc = 0.0, ss = 0.0, cc = 0.0, sn = 0.0, mean = 0.0, tm = 0.0;
        int n = 0;
        for (const auto& x : s) {
            if (x.t < w0 || x.t >= w0 + period) continue;
            mean += x.theta;
            tm += x.t;
            ++n;
        }
        if (n < 4) continue;
        mean /= n;
        tm /= n;
        for (const auto& x : s) {
            if (x.t < w0 || x.t >= w0 + period) continue;
            const double c = std::cos(omega * x.t), si = std::sin(omega * x.t);
            sc += (x.theta - mean) * c;
            ss += (x.theta - mean) * si;
            cc += c * c;
            sn += si * si;
        }
        const double amp = std::hypot(sc / cc, ss / sn);
        if (amp > 0.0) {
            tt.push_back(tm * tm);
            la.push_back(std::log(amp));
        }
    }
    if (tt.size() < 2) return span;
    // Windows whose amplitude has fallen below 5% of the first are noise dominated.
    const double floor = la.front() + std::log(0.05);
    std::vector<double> x, y;
    for (std::size_t i = 0; i < tt.size(); ++i)
        if (la[i] > floor) {
            x.push_back(tt[i]);
            y.push_back(la[i]);
        }
    if (x.size() < 2) return span;
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    const double slope = sxy / sxx;
    return slope < 0.0 ? 1.0 / std::sqrt(-slope) : 10.0 * span;
}

struct LinearAmplitudes {
    double constant = 0.0, oscillating = 0.0;
    double oscillating_stderr = 0.0;
};

// theta = a * basis0(t) + b * basis1(t) by least squares.
template <class B0, class B1>
LinearAmplitudes fit_amplitudes(std::span<const FidSample> s, B0 basis0, B1 basis1) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(s.size()), 2);
    Eigen::VectorXd y(static_cast<Eigen::Index>(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i) {
        x(i, 0) = basis0(s[i].t);
        x(i, 1) = basis1(s[i].t);
        y[i] = s[i].theta;
    }
    const Eigen::Vector2d beta = x.colPivHouseholderQr().solve(y);
    const double rss = (y - x * beta).squaredNorm();
    const auto cov = detail::parameter_covariance(x, rss, static_cast<int>(s.size()) - 2);
    return {beta[0], beta[1], std::sqrt(std::max(cov(1, 1), 0.0))};
}

}  // namespace

double fid_signal(double t, const Vec3& b, FidBranch branch, double f0, double g1, double t2,
                  double gamma) {
    if (!(t2 > 0.0)) throw DomainError("fid_signal: T2 must be > 0");
    const double bmag = b.norm();
    if (bmag == 0.0) return branch == FidBranch::z ? g1 * f0 : 0.0;
    const double omega = gamma * bmag * t;
    const double e = envelope(t, t2);
    const double c = std::cos(omega) * e;
    const double scale = g1 / (bmag * bmag);
    if (branch == FidBranch::z)
        return scale * (b.z() * b.z() + (b.x() * b.x() + b.y() * b.y()) * c) * f0;
    return scale * (b.y() * b.z() * (1.0 - c) + b.x() * bmag * std::sin(omega) * e) * f0;
}

std::vector<FidSample> synthesize_fid(const Vec3& b, FidBranch branch, double f0, double g1,
                                      double t2, double gamma, double dt, double duration) {
    if (!(dt > 0.0)) throw DomainError("synthesize_fid: dt must be > 0");
    std::vector<FidSample> out;
    const auto n = static_cast<std::size_t>(std::floor(duration / dt + 1e-9));
    for (std::size_t i = 0; i <= n; ++i) {
        const double t = static_cast<double>(i) * dt;
        out.push_back({t, fid_signal(t, b, branch, f0, g1, t2, gamma)});
    }
    return out;
}

FieldEstimate fit_fid(std::span<const FidSample> z_samples, std::span<const FidSample> y_samples,
                      double g1, double gamma, const FidFitOptions& options) {
    if (!(g1 > 0.0)) throw DomainError("fit_fid: g1 must be > 0");
    if (!(gamma > 0.0)) throw DomainError("fit_fid: gamma must be > 0");
    if (z_samples.empty())
        throw FitError("fit_fid: the z branch is required to separate F(0) from the field direction");
    const bool have_y = !y_samples.empty();
    const std::size_t n_total = z_samples.size() + y_samples.size();
    if (n_total < 8) throw FitError(fmt::format("fit_fid: {} samples cannot constrain the model", n_total));

    FieldEstimate est;
    const auto& osc_branch = have_y ? y_samples : z_samples;
    const double freq = dominant_frequency(osc_branch);
    const double span = std::max(span_of(z_samples), span_of(y_samples));
    double omega = 2.0 * std::numbers::pi * freq;

    // Amplitudes of the z branch at the spectral estimate decide whether the
    // trace oscillates at all.
    double t2 = omega > 0.0 ? envelope_t2(osc_branch, omega) : span;
    auto cz = [&](double t) { return std::cos(omega * t) * envelope(t, t2); };
    auto sz = [&](double t) { return std::sin(omega * t) * envelope(t, t2); };
    const auto za = fit_amplitudes(z_samples, [](double) { return 1.0; }, cz);
    const double g_f0 = za.constant + za.oscillating;
    if (!(std::abs(g_f0) > 0.0)) throw FitError("fit_fid: z branch carries no signal");

    const bool oscillates = !have_y ? (std::abs(za.oscillating) > 3.0 * za.oscillating_stderr &&
                                       std::abs(za.oscillating) > 1e-6 * std::abs(g_f0))
                                    : true;
    if (!oscillates) {
        est.b = Vec3(0.0, 0.0, kNaN);
        est.f0 = g_f0 / g1;
        est.t2 = kNaN;
        est.magnitude_unidentifiable = true;
        est.transverse_unidentifiable = true;
        est.flags = {"no precession signal: field is along z, |B| and T2 unidentifiable",
                     "transverse components unidentifiable from a z-only trace"};
        double rss = 0.0;
        for (const auto& s : z_samples) rss += std::pow(s.theta - g_f0, 2);
        est.residual_norm = std::sqrt(rss);
        est.covariance.setConstant(kNaN);
        return est;
    }
    if (span * freq < 1.0)
        throw FitError(fmt::format("fit_fid: samples span {:.3g} s, less than one Larmor period", span));

    const double bmag = omega / gamma;
    const double bz2 = std::clamp(za.constant / g_f0, 0.0, 1.0);
    Vec3 b0;
    b0.z() = bmag * std::sqrt(bz2);
    if (have_y) {
        const auto ya = fit_amplitudes(y_samples, [&](double t) { return 1.0 - cz(t); }, sz);
        b0.x() = bmag * ya.oscillating / g_f0;
        b0.y() = b0.z() > 0.0 ? ya.constant * bmag * bmag / (g_f0 * b0.z()) : 0.0;
    } else {
        b0.x() = bmag * std::sqrt(std::max(1.0 - bz2, 0.0));
        b0.y() = 0.0;
    }
    const double f0_scale = std::abs(g_f0 / g1);

    // Parameters: bx, by, bz (mG), T2 (us), F(0) / f0_scale. The z-only model
    // drops by, putting the whole transverse field in bx.
    const bool drop_by = !have_y;
    auto unpack = [&](const Eigen::VectorXd& x, Vec3& b, double& t2_s, double& f0) {
        int k = 0;
        b.x() = x[k++] * kMilliGauss;
        b.y() = drop_by ? 0.0 : x[k++] * kMilliGauss;
        b.z() = x[k++] * kMilliGauss;
        t2_s = x[k++] * kMicrosecond;
        f0 = x[k++] * f0_scale;
    };
    const int n_params = drop_by ? 4 : 5;
    Eigen::VectorXd x0(n_params);
    {
        int k = 0;
        x0[k++] = b0.x() / kMilliGauss;
        if (!drop_by) x0[k++] = b0.y() / kMilliGauss;
        x0[k++] = b0.z() / kMilliGauss;
        x0[k++] = t2 / kMicrosecond;
        x0[k++] = g_f0 / g1 / f0_scale;
    }

    detail::LsqProblem problem;
    problem.n_params = n_params;
    problem.n_residuals = static_cast<int>(n_total);
    problem.residuals = [&](const Eigen::VectorXd& x, Eigen::VectorXd& r) {
        Vec3 b;
        double t2_s, f0;
        unpack(x, b, t2_s, f0);
        t2_s = std::abs(t2_s);
        Eigen::Index i = 0;
        for (const auto& s : z_samples)
            r[i++] = fid_signal(s.t, b, FidBranch::z, f0, g1, t2_s, gamma) - s.theta;
        for (const auto& s : y_samples)
            r[i++] = fid_signal(s.t, b, FidBranch::y, f0, g1, t2_s, gamma) - s.theta;
    };
    detail::LsqOptions lsq;
    lsq.max_evaluations = options.max_evaluations;
    lsq.tolerance = options.tolerance;
    const auto res = detail::least_squares(problem, x0, lsq);
    if (!res.converged)
        throw FitError(fmt::format("fit_fid: did not converge, final |r| = {:.6e}", std::sqrt(res.rss)),
                       res.trace);

    double f0;
    unpack(res.x, est.b, est.t2, f0);
    est.t2 = std::abs(est.t2);
    est.f0 = f0;
    est.residual_norm = std::sqrt(res.rss);
    est.evaluations = res.evaluations;

    bool singular = false;
    const Eigen::MatrixXd cov =
        detail::parameter_covariance(res.jacobian, res.rss, static_cast<int>(n_total) - n_params, &singular);
    // Map onto (bx, by, bz, t2, f0) with f0 in spins.
    std::array<int, 5> slot = drop_by ? std::array<int, 5>{0, -1, 1, 2, 3}
                                      : std::array<int, 5>{0, 1, 2, 3, 4};
    std::array<double, 5> unit = {1.0, 1.0, 1.0, 1.0, f0_scale};
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j)
            est.covariance(i, j) = (slot[i] < 0 || slot[j] < 0)
                                       ? 0.0
                                       : cov(slot[i], slot[j]) * unit[i] * unit[j];

    if (est.b.z() < 0.0) {
        est.b.y() = -est.b.y();
        est.b.z() = -est.b.z();
        for (int i = 0; i < 5; ++i) {
            for (int j : {1, 2}) {
                if (i == 1 || i == 2) continue;
                est.covariance(i, j) = -est.covariance(i, j);
                est.covariance(j, i) = -est.covariance(j, i);
            }
        }
    }
    est.equivalent_solutions = {est.b, Vec3(est.b.x(), -est.b.y(), -est.b.z())};
    if (drop_by) {
        est.transverse_unidentifiable = true;
        est.flags.push_back("transverse components unidentifiable from a z-only trace; "
                            "bx holds sqrt(Bx^2 + By^2)");
    }
    if (singular) est.flags.push_back("parameter covariance is singular");
    est.flags.push_back("sign ambiguity: (By, Bz) -> (-By, -Bz) gives identical signals");
    return est;
}

T2Estimate t2_from_gradient(double sigma_cloud, double gradient, double gamma) {
    if (sigma_cloud < 0.0 || gradient < 0.0)
        throw DomainError("t2_from_gradient: width and gradient must be >= 0");
    if (!(gamma > 0.0)) throw DomainError("t2_from_gradient: gamma must be > 0");
    if (sigma_cloud == 0.0 || gradient == 0.0)
        return {std::numeric_limits<double>::infinity(), true};
    return {1.0 / (sigma_cloud * gamma * gradient), false};
}

}  // namespace qndspin::magnetometry
