#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace qndspin::detail {

struct LsqProblem {
    int n_params = 0;
    int n_residuals = 0;
    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> residuals;
    // Central differences with relative step when empty.
    std::function<void(const Eigen::VectorXd&, Eigen::MatrixXd&)> jacobian;
};

struct LsqOptions {
    int max_evaluations = 2000;
    double tolerance = 1e-12;
};

struct LsqResult {
    Eigen::VectorXd x;
    Eigen::MatrixXd jacobian;  // at x
    double rss = 0.0;
    int evaluations = 0;
    int status = 0;
    bool converged = false;
    std::string trace;  // residual norm after each evaluation batch
};

// Damped (Levenberg-Marquardt) least squares.
LsqResult least_squares(const LsqProblem& problem, Eigen::VectorXd x0, const LsqOptions& options);

// s^2 (J^T J)^+ with s^2 = rss / dof, pseudo-inverse at `rel_tol`.
// `singular` reports whether any direction was dropped.
Eigen::MatrixXd parameter_covariance(const Eigen::MatrixXd& jacobian, double rss, int dof,
                                     bool* singular = nullptr, double rel_tol = 1e-10);

}  // namespace qndspin::detail
