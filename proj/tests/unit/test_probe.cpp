#include "qndspin/error.hpp"
#include "qndspin/probe.hpp"

#include "random_inputs.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace qndspin;
using namespace qndspin::probe;

namespace {

ProbeConfig ideal_probe() {
    ProbeConfig p;
    p.efficiency = 1.0;
    return p;
}

struct Moments {
    double mean = 0.0, var = 0.0;
};

Moments moments(const std::vector<double>& x) {
    Moments m;
    for (double v : x) m.mean += v;
    m.mean /= static_cast<double>(x.size());
    for (double v : x) m.var += (v - m.mean) * (v - m.mean);
    m.var /= static_cast<double>(x.size() - 1);
    return m;
}

}  // namespace

TEST_CASE("readout noise sigma") {
    CHECK(readout_noise_sigma(ideal_probe()) == doctest::Approx(664.0).epsilon(1e-3));
    auto p = ideal_probe();
    p.efficiency = 0.25;
    CHECK(readout_noise_sigma(p) == doctest::Approx(2.0 * readout_noise_sigma(ideal_probe())));
    p.readout_sigma_override = 515.0;
    CHECK(readout_noise_sigma(p) == 515.0);
}

TEST_CASE("probe validation") {
    auto p = ideal_probe();
    p.g1 = 0.0;
    CHECK_THROWS_AS(validate(p), DomainError);
    p = ideal_probe();
    p.efficiency = 1.5;
    CHECK_THROWS_AS(validate(p), DomainError);
    p = ideal_probe();
    p.n_photons = -1.0;
    CHECK_THROWS_AS(validate(p), DomainError);
}

TEST_CASE("snr") {
    const auto p = ideal_probe();
    CHECK(snr(p, 0.0) == 0.0);
    CHECK(snr(p, 1.1e6) == doctest::Approx(1.66).epsilon(3e-3));
    const double sigma = readout_noise_sigma(p);
    CHECK(snr(p, 1.1e6) == doctest::Approx((2.0 / 3.0) * 1.1e6 / (sigma * sigma)).epsilon(1e-12));
    ProbeConfig b75;
    CHECK(effective_snr(b75, 1.1e6) == doctest::Approx(0.75 * snr(b75, 1.1e6)).epsilon(1e-12));
}

TEST_CASE("single pulse squeezing law is exact for TSS input") {
    for (double b : {0.25, 0.75, 1.0}) {
        for (double n : {1e4, 2e5, 1.1e6}) {
            ProbeConfig p;
            p.efficiency = b;
            const auto prior = spin::make_tss(n);
            const double sigma2 = std::pow(readout_noise_sigma(p), 2);
            const auto post = condition_on_z(prior, 123.0, sigma2);
            const double ratio = post.cov(2, 2) / prior.cov(2, 2);
            CHECK(ratio == doctest::Approx(1.0 / (1.0 + b * snr(p, n))).epsilon(1e-12));
            CHECK(post.cov(2, 2) ==
                  doctest::Approx(prior.cov(2, 2) * sigma2 / (prior.cov(2, 2) + sigma2)).epsilon(1e-12));
            CHECK(is_symmetric_psd(post.cov));
            // Transverse components are untouched for an isotropic prior.
            CHECK(post.cov(0, 0) == prior.cov(0, 0));
        }
    }
}

TEST_CASE("repeated pulses add information") {
    const auto p = ideal_probe();
    const double n = 5e5;
    const double sigma2 = std::pow(readout_noise_sigma(p), 2);
    auto state = spin::make_tss(n);
    for (int k = 1; k <= 6; ++k) {
        state = condition_on_z(state, 0.0, sigma2);
        CHECK(state.cov(2, 2) ==
              doctest::Approx((2.0 / 3.0) * n / (1.0 + k * snr(p, n))).epsilon(1e-10));
    }
}

TEST_CASE("repeated pulses by Monte Carlo") {
    // Residual of the true z given k readings: var(z - E[z | m_1..m_k]).
    const auto p = ideal_probe();
    const double n = 5e5;
    const double sigma = readout_noise_sigma(p);
    const int shots = 100000, k = 3;
    Rng rng(21);
    std::normal_distribution<double> unit(0.0, 1.0);
    const auto prior = spin::make_tss(n);
    std::vector<double> residual;
    residual.reserve(shots);
    for (int s = 0; s < shots; ++s) {
        const double z = std::sqrt(prior.cov(2, 2)) * unit(rng);
        auto state = prior;
        for (int i = 0; i < k; ++i) state = condition_on_z(state, z + sigma * unit(rng), sigma * sigma);
        residual.push_back(z - state.mean.z());
    }
    const auto m = moments(residual);
    const double expected = (2.0 / 3.0) * n / (1.0 + k * snr(p, n));
    CHECK(std::abs(m.var - expected) < 3.0 * expected * std::sqrt(2.0 / (shots - 1)));
}

TEST_CASE("simulate_pulse leaves the unconditioned z marginal unchanged") {
    const auto p = ideal_probe();
    const auto prior = spin::make_tss(1e6);
    const int shots = 100000;
    Rng rng(22);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<double> before, after;
    for (int s = 0; s < shots; ++s) {
        before.push_back(prior.mean.z() + std::sqrt(prior.cov(2, 2)) * unit(rng));
        const auto [out, post] = simulate_pulse(prior, p, rng);
        CHECK(out.rotation_angle == doctest::Approx(p.g1 * out.measured_value).epsilon(1e-12));
        after.push_back(post.mean.z() + std::sqrt(post.cov(2, 2)) * unit(rng));
    }
    const auto a = moments(before), b = moments(after);
    const double v = prior.cov(2, 2);
    CHECK(std::abs(a.mean - b.mean) < 3.0 * std::sqrt(2.0 * v / shots));
    CHECK(std::abs(a.var - b.var) < 3.0 * v * std::sqrt(4.0 / (shots - 1)));
}

TEST_CASE("simulate_pulse edge cases") {
    auto p = ideal_probe();
    Rng rng(23);

    SUBCASE("zero atoms: outcome is pure readout noise, posterior unchanged") {
        const auto empty = spin::make_tss(0.0);
        std::vector<double> values;
        for (int i = 0; i < 20000; ++i) {
            const auto [out, post] = simulate_pulse(empty, p, rng);
            CHECK(post.cov.isZero());
            CHECK(post.mean.isZero());
            values.push_back(out.measured_value);
        }
        const auto m = moments(values);
        const double s2 = std::pow(readout_noise_sigma(p), 2);
        CHECK(std::abs(m.var - s2) < 4.0 * s2 * std::sqrt(2.0 / 20000));
    }
    SUBCASE("zero total variance returns the mean exactly") {
        p.readout_sigma_override = 0.0;
        spin::CollectiveSpinState s;
        s.mean = Vec3(1.0, 2.0, 3.0);
        const auto [out, post] = simulate_pulse(s, p, rng);
        CHECK(out.measured_value == 3.0);
        CHECK(post.mean == s.mean);
    }
    SUBCASE("huge readout noise: posterior equals prior") {
        p.readout_sigma_override = 1e30;
        const auto prior = spin::make_tss(1e6);
        const auto [out, post] = simulate_pulse(prior, p, rng);
        CHECK((post.cov - prior.cov).cwiseAbs().maxCoeff() < 1e-9 * prior.cov(0, 0));
        CHECK(std::abs(post.mean.z()) < 1e-6);
    }
}

TEST_CASE("condition_on_readout keeps PSD on random states") {
    Rng rng(24);
    for (int i = 0; i < 200; ++i) {
        spin::CollectiveSpinState s;
        s.cov = qndspin::testing::random_psd(rng, 1e5);
        s.n_atoms = 1e5;
        const Vec3 h = qndspin::testing::random_unit(rng);
        const auto post = condition_on_readout(s, h, 10.0, 1e4);
        CHECK(is_symmetric_psd(post.cov));
        CHECK(post.cov.trace() <= s.cov.trace() + 1e-9 * s.cov.trace());
    }
}

TEST_CASE("tensor and intra-pulse angles") {
    auto p = ideal_probe();
    CHECK(std::abs(std::tan(tensor_angle(p))) == doctest::Approx(0.287).epsilon(1e-3));
    p.g2 = 0.0;
    CHECK(tensor_angle(p) == 0.0);
    ProbeConfig a, b;
    b.n_photons = 2.0 * a.n_photons;
    CHECK(std::abs(tensor_angle(b)) > std::abs(tensor_angle(a)));

    spin::MagneticField f;
    f.b = Vec3::Ones().normalized() * 16.9e-3;
    CHECK(intra_pulse_angle(f, 0.0) == 0.0);
    CHECK(intra_pulse_angle(f, 1e-6) == doctest::Approx(0.074).epsilon(5e-3));
    CHECK(intra_pulse_angle(f, 2e-6) == doctest::Approx(2.0 * intra_pulse_angle(f, 1e-6)));
}

TEST_CASE("danm") {
    const auto p = ideal_probe();
    CHECK(danm_estimate(0.0, p) == 0.0);
    CHECK(danm_estimate(p.g1 * 1e6, p) == doctest::Approx(1e6));
    for (double n : {1.0, 3.3e5, 1.5e6})
        CHECK(danm_estimate(p.g1 * 1.0 * n, p, 1.0) == doctest::Approx(n).epsilon(1e-14));
    CHECK_THROWS_AS(danm_estimate(1.0, p, 0.0), DomainError);
}

TEST_CASE("calibrate_g1") {
    std::vector<CalibrationPair> pairs;
    for (double n : {2e5, 5e5, 8e5, 1.1e6, 1.5e6}) pairs.push_back({9.0e-8 * n, n});
    const auto c = calibrate_g1(pairs);
    CHECK(c.g1 == doctest::Approx(9.0e-8).epsilon(1e-14));
    CHECK(c.residual_norm < 1e-12);
    CHECK(c.n_pairs == 5);

    for (auto& q : pairs) q.phi = 0.0;
    CHECK(calibrate_g1(pairs).g1 == 0.0);

    CHECK_THROWS_AS(calibrate_g1(std::vector<CalibrationPair>{{1.0, 1.0}}), EstimationError);
    CHECK_THROWS_AS(calibrate_g1(std::vector<CalibrationPair>{{1.0, 5.0}, {2.0, 5.0}}), EstimationError);
}

TEST_CASE("calibrate_g1 standard error with noise") {
    Rng rng(25);
    std::normal_distribution<double> noise(0.0, 1e-3);
    std::uniform_real_distribution<double> atoms(1e5, 1.5e6);
    std::vector<CalibrationPair> pairs;
    for (int i = 0; i < 200; ++i) {
        const double n = atoms(rng);
        pairs.push_back({9.0e-8 * n + noise(rng), n});
    }
    const auto c = calibrate_g1(pairs);
    CHECK(c.standard_error > 0.0);
    CHECK(std::abs(c.g1 - 9.0e-8) < 4.0 * c.standard_error);
}
