#include "qndspin/analysis.hpp"
#include "qndspin/error.hpp"
#include "qndspin/sequence.hpp"

#include "random_inputs.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

using namespace qndspin;
using namespace qndspin::analysis;
using sequence::ShotRecord;
using qndspin::testing::random_psd;

namespace {

// Draws jointly Gaussian (f1, f2) with the given 6x6 covariance.
std::vector<ShotRecord> gaussian_pairs(const Mat6& cov, int m, std::uint64_t seed, double n_atoms = 1e6) {
    Eigen::LLT<Mat6> llt(cov);
    const Mat6 l = llt.matrixL();
    Rng rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<ShotRecord> out(m);
    for (auto& s : out) {
        Vec6 z;
        for (int i = 0; i < 6; ++i) z[i] = unit(rng);
        const Vec6 v = l * z;
        s.f1 = v.head<3>();
        s.f2 = v.tail<3>();
        s.n_atoms = n_atoms;
    }
    return out;
}

Mat6 random_joint_cov(Rng& rng) {
    Eigen::Matrix<double, 6, 6> a;
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) a(i, j) = n(rng);
    return a * a.transpose() + Mat6::Identity() * 0.5;
}

// Oracle: covariance of the regression residual f2 - A f1 with A = g12^T g1^-1,
// built entrywise from the sample without any Schur algebra.
Mat3 residual_covariance(const std::vector<ShotRecord>& shots, const Mat3& a) {
    std::vector<Vec3> r;
    for (const auto& s : shots) r.push_back(s.f2 - a * s.f1);
    return sample_covariance(r);
}

std::vector<ShotRecord> ideal_dataset(double n, int m, std::uint64_t seed, double b = 1.0) {
    sequence::SequenceConfig cfg;
    cfg.probe.efficiency = b;
    Rng rng = make_stream(seed, 0, 9);
    std::vector<ShotRecord> out;
    for (int i = 0; i < m; ++i) out.push_back(sequence::run_sequence(cfg, n, rng));
    return out;
}

}  // namespace

TEST_CASE("sample covariance") {
    std::vector<Vec3> same(5, Vec3(1.0, 2.0, 3.0));
    CHECK(sample_covariance(same).isZero());
    const std::vector<Vec3> two = {Vec3::Zero(), Vec3(2.0, 0.0, 0.0)};
    Mat3 expected = Mat3::Zero();
    expected(0, 0) = 2.0;
    CHECK(sample_covariance(two) == expected);
    CHECK_THROWS_AS(sample_covariance(std::vector<Vec3>{Vec3::Zero()}), EstimationError);
}

TEST_CASE("sample covariance agrees with a known covariance") {
    Rng rng(31);
    const Mat3 sigma = random_psd(rng, 1.0) + Mat3::Identity();
    Eigen::LLT<Mat3> llt(sigma);
    const Mat3 l = llt.matrixL();
    std::normal_distribution<double> unit(0.0, 1.0);
    const int m = 100000;
    std::vector<Vec3> v;
    for (int i = 0; i < m; ++i) v.push_back(l * Vec3(unit(rng), unit(rng), unit(rng)));
    const Mat3 c = sample_covariance(v);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double se = std::sqrt((sigma(i, j) * sigma(i, j) + sigma(i, i) * sigma(j, j)) / (m - 1));
            CHECK(std::abs(c(i, j) - sigma(i, j)) < 3.0 * se);
        }
    CHECK(c == c.transpose());
}

TEST_CASE("conditional covariance special cases") {
    Rng rng(32);
    const Mat3 s = random_psd(rng, 1.0) + Mat3::Identity();
    const Mat3 g2 = random_psd(rng, 1.0) + Mat3::Identity();
    const auto none = conditional_covariance(s, g2, Mat3::Zero());
    CHECK((none.value - g2).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(!none.singular);
    const auto same = conditional_covariance(s, s, s);
    CHECK(same.value.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("conditional covariance with a singular first block is flagged") {
    Mat3 g1 = Mat3::Zero();
    g1(0, 0) = 2.0;
    g1(1, 1) = 1.0;
    Mat3 g12 = Mat3::Zero();
    g12(0, 0) = 1.0;
    const Mat3 g2 = Mat3::Identity();
    const auto r = conditional_covariance(g1, g2, g12);
    CHECK(r.singular);
    CHECK(r.value(0, 0) == doctest::Approx(0.5));
    CHECK(r.value(2, 2) == doctest::Approx(1.0));
    CHECK(r.value.allFinite());
}

TEST_CASE("conditional covariance equals the regression residual covariance") {
    Rng rng(33);
    for (int trial = 0; trial < 3; ++trial) {
        const Mat6 cov = random_joint_cov(rng);
        const int m = 100000;
        const auto shots = gaussian_pairs(cov, m, 100 + trial);
        const auto rep = covariance_report(shots, 0.0);
        const Mat3 a = rep.gamma12.transpose() * rep.gamma1.inverse();
        const Mat3 oracle = residual_covariance(shots, a);
        CHECK((rep.gamma_cond - oracle).cwiseAbs().maxCoeff() < 1e-8 * oracle.cwiseAbs().maxCoeff());

        // Against the population Schur complement, within sampling error.
        const Mat3 g1 = cov.topLeftCorner<3, 3>(), g2 = cov.bottomRightCorner<3, 3>();
        const Mat3 g12 = cov.topRightCorner<3, 3>();
        const Mat3 truth = g2 - g12.transpose() * g1.inverse() * g12;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                const double se = std::sqrt((truth(i, j) * truth(i, j) + truth(i, i) * truth(j, j)) / m);
                CHECK(std::abs(rep.gamma_cond(i, j) - truth(i, j)) < 3.5 * se);
            }
    }
}

TEST_CASE("scalar conditional variance") {
    Rng rng(34);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> x1, x2, x3;
    for (int i = 0; i < 20000; ++i) {
        x1.push_back(unit(rng));
        x2.push_back(unit(rng));
        x3.push_back(0.7 * x1.back() + 0.3 * unit(rng));
    }
    const auto same = conditional_variance_scalar(x1, x1);
    CHECK(same.variance == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(same.chi == doctest::Approx(1.0));
    const auto indep = conditional_variance_scalar(x1, x2);
    CHECK(std::abs(indep.chi) < 0.05);
    CHECK(indep.variance == doctest::Approx(1.0).epsilon(0.05));

    const auto c = conditional_variance_scalar(x1, x3);
    for (double a = -2.0; a <= 2.0; a += 0.05) {
        std::vector<double> r;
        for (std::size_t i = 0; i < x1.size(); ++i) r.push_back(x3[i] - a * x1[i]);
        double mean = std::accumulate(r.begin(), r.end(), 0.0) / r.size(), var = 0.0;
        for (double v : r) var += (v - mean) * (v - mean);
        var /= r.size() - 1;
        CHECK(var >= c.variance * (1.0 - 1e-12));
    }

    const std::vector<double> flat(10, 3.0);
    std::vector<double> y(10);
    std::iota(y.begin(), y.end(), 0.0);
    const auto d = conditional_variance_scalar(flat, y);
    CHECK(d.degenerate);
    CHECK(d.chi == 0.0);
    CHECK(d.variance == doctest::Approx(55.0 / 6.0));
}

TEST_CASE("scalar path equals the 1D Schur complement") {
    Rng rng(35);
    const auto shots = gaussian_pairs(random_joint_cov(rng), 5000, 36);
    const auto rep = covariance_report(shots, 0.0);
    for (int k = 0; k < 3; ++k) {
        std::vector<double> a, b;
        for (const auto& s : shots) {
            a.push_back(s.f1[k]);
            b.push_back(s.f2[k]);
        }
        const auto sc = conditional_variance_scalar(a, b);
        const double schur = rep.gamma2(k, k) - rep.gamma12(k, k) * rep.gamma12(k, k) / rep.gamma1(k, k);
        CHECK(qndspin::testing::rel_diff(sc.variance, schur) < 1e-9);
    }
}

TEST_CASE("shot selection") {
    const auto shots = ideal_dataset(1e6, 2000, 37);
    const double inf = std::numeric_limits<double>::infinity();
    CHECK(select_shots(shots, inf, Vec3::Zero()).size() == shots.size());
    std::size_t previous = 0;
    for (double c = 0.05; c <= 5.0; c += 0.05) {
        const auto n = select_shots(shots, c, Vec3::Zero()).size();
        CHECK(n >= previous);
        previous = n;
    }
    CHECK(select_shots(shots, 1e-12, Vec3(1e9, 0, 0)).empty());
    CHECK_THROWS_AS(select_shots(shots, 0.0, Vec3::Zero()), DomainError);

    AnalysisOptions o;
    o.bootstrap_resamples = 10;
    const auto empty = selection_witness(shots, 1e-12, Vec3(1e9, 0, 0), 0.0, o, 1);
    CHECK(empty.n_selected == 0);
    CHECK(std::isnan(empty.witness.xi2));
}

TEST_CASE("squeezing parameter") {
    const auto tss = squeezing_parameter(2e6, 1e6);
    CHECK(tss.xi2 == doctest::Approx(2.0));
    CHECK(tss.entangled_atoms_lower_bound == 0.0);
    const auto sql = squeezing_parameter(1e6, 1e6);
    CHECK(sql.xi2 == doctest::Approx(1.0));
    CHECK(sql.entangled_atoms_lower_bound == 0.0);
    const auto paper = squeezing_parameter(0.5 * 1.1e6, 1.1e6, 1.0, 0.09 * 1.1e6);
    CHECK(paper.entangled_atoms_lower_bound == doctest::Approx(5.5e5));
    CHECK(paper.xi2_stderr == doctest::Approx(0.09));
    CHECK(paper.significance_sigmas == doctest::Approx(0.5 / 0.09));
    const auto neg = squeezing_parameter(-1e4, 1e6);
    CHECK(neg.negative_variance);
    CHECK(neg.xi2 < 0.0);
    CHECK_THROWS_AS(squeezing_parameter(1.0, 0.0), DomainError);
}

TEST_CASE("bootstrap is seeded and independent of workers") {
    std::vector<double> x(500);
    Rng rng(38);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& v : x) v = unit(rng);
    auto mean_of = [&](std::span<const std::size_t> idx) {
        double s = 0.0;
        for (auto i : idx) s += x[i];
        return s / static_cast<double>(idx.size());
    };
    const double a = bootstrap_stderr(x.size(), 1000, 5, mean_of, 1);
    const double b = bootstrap_stderr(x.size(), 1000, 5, mean_of, 4);
    CHECK(a == b);
    CHECK(a == doctest::Approx(1.0 / std::sqrt(500.0)).epsilon(0.1));
    CHECK(bootstrap_stderr(x.size(), 1000, 6, mean_of, 1) != a);
}

TEST_CASE("noise scaling fits") {
    std::vector<NoisePoint> pts;
    for (double n : {2e5, 4e5, 6e5, 8e5, 1e6, 1.2e6, 1.5e6})
        pts.push_back({n, 1.0e6 + 2.0 * n + 1e-7 * n * n});
    const auto fixed = fit_noise_scaling(pts, true);
    CHECK(fixed.model_tag == "quadratic_fixed_linear");
    CHECK(qndspin::testing::rel_diff(fixed.param("V0"), 1.0e6) < 1e-9);
    CHECK(qndspin::testing::rel_diff(fixed.param("c"), 1e-7) < 1e-9);
    CHECK(fixed.param("a") == 2.0);
    const auto free = fit_noise_scaling(pts, false);
    CHECK(qndspin::testing::rel_diff(free.param("V0"), 1.0e6) < 1e-6);
    CHECK(qndspin::testing::rel_diff(free.param("a"), 2.0) < 1e-6);
    CHECK(qndspin::testing::rel_diff(free.param("c"), 1e-7) < 1e-6);
    for (double s : free.stderrs) CHECK(s >= 0.0);

    std::vector<NoisePoint> neg;
    for (double n : {2e5, 6e5, 1e6, 1.4e6}) neg.push_back({n, 9.2e5 + 0.9 * n - 4e-7 * n * n});
    CHECK(fit_noise_scaling(neg, false).param("c") == doctest::Approx(-4e-7).epsilon(1e-6));
}

TEST_CASE("noise scaling fit needs enough distinct atom numbers") {
    const std::vector<NoisePoint> two = {{1e5, 1.0}, {2e5, 2.0}, {2e5, 2.1}};
    try {
        fit_noise_scaling(two, true);
        FAIL("expected FitError");
    } catch (const FitError& e) {
        CHECK(std::string(e.what()).find("{1, N^2}") != std::string::npos);
    }
    const std::vector<NoisePoint> three = {{1e5, 1.0}, {2e5, 2.0}, {3e5, 2.1}};
    CHECK_NOTHROW(fit_noise_scaling(three, true));
    try {
        fit_noise_scaling(three, false);
        FAIL("expected FitError");
    } catch (const FitError& e) {
        CHECK(std::string(e.what()).find("{1, N, N^2}") != std::string::npos);
    }
}

TEST_CASE("snr model fit") {
    probe::ProbeConfig p;
    for (double b : {0.75, 1.0, 0.4}) {
        std::vector<NoisePoint> pts;
        for (double n : {2e5, 5e5, 8e5, 1.1e6, 1.5e6})
            pts.push_back({n, 2.0 * n / (1.0 + b * probe::snr(p, n))});
        const auto r = fit_snr_model(pts, p);
        CHECK(r.param("b") == doctest::Approx(b).epsilon(1e-6));
        CHECK(r.stderr_of("b") >= 0.0);
    }
    CHECK_THROWS_AS(fit_snr_model(std::vector<NoisePoint>{{1e6, 1e6}}, p), FitError);
}

TEST_CASE("correlation matrix") {
    std::vector<ShotRecord> repeat(200);
    Rng rng(39);
    std::normal_distribution<double> unit(0.0, 1.0);
    for (auto& s : repeat) {
        s.f1 = Vec3(unit(rng), unit(rng), unit(rng));
        s.f2 = s.f1;
        s.n_atoms = 1.0;
    }
    const auto c = correlation_matrix(repeat);
    for (int k = 0; k < 3; ++k) {
        CHECK(c.rho(k, k + 3) == doctest::Approx(1.0));
        CHECK(c.rho(k, k) == 1.0);
    }
    for (auto& s : repeat) s.f2 = Vec3(unit(rng), unit(rng), unit(rng));
    const auto ind = correlation_matrix(repeat);
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) {
            CHECK(std::abs(ind.rho(i, j)) <= 1.0 + 1e-12);
            if (i != j) CHECK(std::abs(ind.rho(i, j)) < 0.3);
        }
    for (auto& s : repeat) s.f2[1] = 5.0;
    const auto deg = correlation_matrix(repeat);
    CHECK(deg.degenerate_channels == std::vector<int>{4});
    CHECK(std::isnan(deg.rho(0, 4)));
}

TEST_CASE("correlations are bounded on random data") {
    Rng rng(40);
    for (int t = 0; t < 20; ++t) {
        const auto shots = gaussian_pairs(random_joint_cov(rng), 50, 200 + t);
        const auto c = correlation_matrix(shots);
        CHECK(c.rho.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
    }
}

TEST_CASE("residual polarization") {
    std::vector<ShotRecord> shots(2);
    shots[0].n_atoms = shots[1].n_atoms = 1.1e6;
    shots[0].f1 = Vec3(1, 2, 3);
    shots[1].f1 = -shots[0].f1;
    CHECK(residual_polarization(shots)[0] == 0.0);
    for (auto& s : shots) s.f1 = s.f2 = Vec3(0, 0, 1.1e6);
    CHECK(residual_polarization(shots)[0] == doctest::Approx(1.0));
    for (auto& s : shots) s.f1 = Vec3(13.3e3, 0, 0);
    CHECK(residual_polarization(shots)[0] == doctest::Approx(1.21e-2).epsilon(1e-2));
    CHECK(13.3e3 / 8.0e6 == doctest::Approx(1.66e-3).epsilon(1e-2));
}

TEST_CASE("analyze a reference-only dataset") {
    sequence::SequenceConfig seq;
    sequence::CampaignConfig camp;
    camp.sequences_per_cycle = 0;
    camp.n_cycles = 500;
    const auto data = sequence::run_campaign(camp, seq);
    AnalysisOptions o;
    const auto a = analyze_dataset(data, o);
    CHECK(a.bins.empty());
    CHECK(std::abs(a.reference_v1_tilde) < 0.1 * a.v0);
    CHECK(a.fits.at("unconditional_1").result == std::nullopt);
}

TEST_CASE("analyze an ideal campaign") {
    sequence::SequenceConfig seq;
    sequence::CampaignConfig camp;
    camp.n_cycles = 300;
    const auto data = sequence::run_campaign(camp, seq);
    AnalysisOptions o;
    o.bootstrap_resamples = 50;
    o.cutoff_scan = {0.5, 1.0, 2.0};
    o.min_shots_per_bin = 360;
    const auto a = analyze_dataset(data, o);
    CHECK(a.n_atom_shots == 3600);
    CHECK(a.bins.size() == 10);
    CHECK(a.skipped.empty());
    for (const auto& b : a.bins) {
        CHECK(b.cov.v_cond <= b.cov.v2);
        CHECK(b.cov.v1_tilde == b.cov.v1 - a.v0);
        CHECK(b.first.xi2 == doctest::Approx(2.0).epsilon(0.25));
        CHECK(b.conditional.xi2_stderr > 0.0);
    }
    CHECK(a.cutoff_scan.size() == 3);
    CHECK(a.fits.at("snr_model").result.has_value());
    CHECK(a.fits.at("snr_model").result->param("b") == doctest::Approx(0.75).epsilon(0.3));

    o.min_shots_per_bin = 361;
    const auto none = analyze_dataset(data, o);
    CHECK(none.bins.empty());
    CHECK(none.skipped.size() == 10);

    o.min_shots_per_bin = 10;
    o.n_bins = 4;
    o.workers = 3;
    const auto w3 = analyze_dataset(data, o);
    o.workers = 1;
    const auto w1 = analyze_dataset(data, o);
    REQUIRE(w1.bins.size() == w3.bins.size());
    for (std::size_t i = 0; i < w1.bins.size(); ++i)
        CHECK(w1.bins[i].conditional.xi2_stderr == w3.bins[i].conditional.xi2_stderr);
}

TEST_CASE("analysis requires references unless subtraction is analytic") {
    auto shots = ideal_dataset(1e6, 100, 41);
    AnalysisOptions o;
    o.n_bins = 1;
    o.bootstrap_resamples = 10;
    CHECK_THROWS_AS(analyze_dataset(shots, o), EstimationError);
    o.readout = ReadoutSubtraction::analytic;
    const auto a = analyze_dataset(shots, o);
    CHECK(a.v0 == doctest::Approx(3.0 * std::pow(probe::readout_noise_sigma(o.probe), 2)));
}
