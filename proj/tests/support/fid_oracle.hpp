#pragma once

// Independent FID reference: integrate the precession ODE numerically, then
// damp the part of the spin transverse to the field with exp(-t^2/T2^2).

#include "qndspin/types.hpp"

#include <boost/numeric/odeint.hpp>

#include <array>
#include <cmath>
#include <vector>

namespace qndspin::testing {

inline std::vector<double> fid_by_ode(const std::vector<double>& times, const Vec3& b,
                                      const Vec3& f_initial, double g1, double t2, double gamma) {
    using State = std::array<double, 3>;
    namespace ode = boost::numeric::odeint;
    const Vec3 w = gamma * b;
    auto rhs = [&](const State& f, State& dfdt, double) {
        // dF/dt = gamma B x F
        dfdt[0] = w[1] * f[2] - w[2] * f[1];
        dfdt[1] = w[2] * f[0] - w[0] * f[2];
        dfdt[2] = w[0] * f[1] - w[1] * f[0];
    };
    auto stepper = ode::make_controlled(1e-14, 1e-14, ode::runge_kutta_dopri5<State>());
    State f = {f_initial[0], f_initial[1], f_initial[2]};
    std::vector<double> out;
    double t = 0.0;
    const Vec3 n = b.norm() > 0 ? Vec3(b.normalized()) : Vec3::UnitZ();
    for (double target : times) {
        if (target > t) {
            ode::integrate_adaptive(stepper, rhs, f, t, target, (target - t) / 10.0);
            t = target;
        }
        const Vec3 v(f[0], f[1], f[2]);
        const Vec3 parallel = n * n.dot(v);
        const Vec3 damped = parallel + (v - parallel) * std::exp(-target * target / (t2 * t2));
        out.push_back(g1 * damped.z());
    }
    return out;
}

}  // namespace qndspin::testing
