#pragma once

#include <Eigen/Dense>
#include <functional>

namespace obsform {

struct LeastSquaresOptions {
  int max_iterations = 120;
  double residual_tol = 1e-12;   // stop when |r| drops below this
  double gradient_tol = 1e-12;   // stationarity: |J^T r| / (1 + |r|)
  double step_tol = 1e-14;       // stop when the accepted step is this small
  double lambda0 = 1e-3;
  Eigen::VectorXd lower, upper;  // optional clamp box (empty = unconstrained)
};

struct LeastSquaresResult {
  Eigen::VectorXd x;
  double residual_norm = 0.0;
  double gradient_norm = 0.0;
  int iterations = 0;
  bool converged = false;  // residual, gradient or step criterion met
};

/// Dense damped Gauss-Newton (Levenberg-Marquardt) for small problems.
/// `residual` maps x to r(x); `jacobian` to dr/dx. Iterates are clamped to
/// the options box when one is given. Deterministic for fixed inputs.
LeastSquaresResult levenberg_marquardt(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& residual,
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& jacobian,
    const Eigen::VectorXd& x0, const LeastSquaresOptions& options = {});

}  // namespace obsform
