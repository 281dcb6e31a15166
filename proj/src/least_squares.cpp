#include "least_squares.hpp"

#include <unsupported/Eigen/NonLinearOptimization>

#include <fmt/format.h>

#include <cmath>

namespace qndspin::detail {

namespace {

struct Functor {
    using Scalar = double;
    enum { InputsAtCompileTime = Eigen::Dynamic, ValuesAtCompileTime = Eigen::Dynamic };
    using InputType = Eigen::VectorXd;
    using ValueType = Eigen::VectorXd;
    using JacobianType = Eigen::MatrixXd;

    const LsqProblem* problem;
    mutable int evaluations = 0;
    mutable std::string trace;

    int inputs() const { return problem->n_params; }
    int values() const { return problem->n_residuals; }

    int operator()(const Eigen::VectorXd& x, Eigen::VectorXd& f) const {
        f.resize(problem->n_residuals);
        problem->residuals(x, f);
        ++evaluations;
        if (!f.allFinite()) return -1;
        if (evaluations % 10 == 1) trace += fmt::format("eval {}: |r| = {:.6e}\n", evaluations, f.norm());
        return 0;
    }

    int df(const Eigen::VectorXd& x, Eigen::MatrixXd& jac) const {
        jac.resize(problem->n_residuals, problem->n_params);
        if (problem->jacobian) {
            problem->jacobian(x, jac);
            return 0;
        }
        Eigen::VectorXd xp = x, fp(problem->n_residuals), fm(problem->n_residuals);
        for (int j = 0; j < problem->n_params; ++j) {
            const double h = 1e-6 * std::max(std::abs(x[j]), 1e-3);
            xp[j] = x[j] + h;
            problem->residuals(xp, fp);
            xp[j] = x[j] - h;
            problem->residuals(xp, fm);
            xp[j] = x[j];
            jac.col(j) = (fp - fm) / (2.0 * h);
        }
        return 0;
    }
};

}  // namespace

LsqResult least_squares(const LsqProblem& problem, Eigen::VectorXd x0, const LsqOptions& options) {
    Functor functor{&problem, 0, {}};
    Eigen::LevenbergMarquardt<Functor> lm(functor);
    lm.parameters.maxfev = options.max_evaluations;
    lm.parameters.xtol = options.tolerance;
    lm.parameters.ftol = options.tolerance;
    const auto status = lm.minimize(x0);

    LsqResult out;
    out.x = x0;
    out.status = static_cast<int>(status);
    out.evaluations = functor.evaluations;
    using S = Eigen::LevenbergMarquardtSpace::Status;
    out.converged = status != S::ImproperInputParameters && status != S::TooManyFunctionEvaluation &&
                    status != S::UserAsked && status != S::NotStarted && status != S::Running;
    Eigen::VectorXd r(problem.n_residuals);
    problem.residuals(out.x, r);
    out.rss = r.squaredNorm();
    out.converged = out.converged && std::isfinite(out.rss);
    functor.df(out.x, out.jacobian);
    out.trace = functor.trace + fmt::format("final (status {}): |r| = {:.6e}\n", out.status,
                                            std::sqrt(out.rss));
    return out;
}

Eigen::MatrixXd parameter_covariance(const Eigen::MatrixXd& jacobian, double rss, int dof,
                                     bool* singular, double rel_tol) {
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(jacobian, Eigen::ComputeThinV);
    const auto& s = svd.singularValues();
    const double cutoff = rel_tol * (s.size() ? s.maxCoeff() : 0.0);
    Eigen::VectorXd inv2 = Eigen::VectorXd::Zero(s.size());
    bool dropped = false;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        if (s[i] > cutoff && s[i] > 0.0)
            inv2[i] = 1.0 / (s[i] * s[i]);
        else
            dropped = true;
    }
    if (singular) *singular = dropped;
    const double s2 = dof > 0 ? rss / dof : 0.0;
    return s2 * svd.matrixV() * inv2.asDiagonal() * svd.matrixV().transpose();
}

}  // namespace qndspin::detail
