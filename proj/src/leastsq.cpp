#include "obsform/leastsq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "obsform/errors.hpp"

namespace obsform {

namespace {

Eigen::VectorXd clamp_to(const LeastSquaresOptions& o, Eigen::VectorXd x) {
  if (o.lower.size() == x.size() && o.upper.size() == x.size()) {
    x = x.cwiseMax(o.lower).cwiseMin(o.upper);
  }
  return x;
}

}  // namespace

LeastSquaresResult levenberg_marquardt(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& residual,
    const std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>& jacobian,
    const Eigen::VectorXd& x0, const LeastSquaresOptions& options) {
  LeastSquaresResult result;
  Eigen::VectorXd x = clamp_to(options, x0);

  Eigen::VectorXd r;
  try {
    r = residual(x);
  } catch (const DomainError&) {
    result.x = x;
    result.residual_norm = std::numeric_limits<double>::infinity();
    return result;
  }
  double cost = 0.5 * r.squaredNorm();
  double lambda = options.lambda0;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.iterations = iter + 1;
    Eigen::MatrixXd J;
    try {
      J = jacobian(x);
    } catch (const DomainError&) {
      break;
    }
    const Eigen::VectorXd grad = J.transpose() * r;
    result.gradient_norm = grad.norm();
    if (r.norm() <= options.residual_tol ||
        result.gradient_norm <= options.gradient_tol * (1.0 + r.norm())) {
      result.converged = true;
      break;
    }

    const Eigen::MatrixXd JtJ = J.transpose() * J;
    const double scale = JtJ.trace() / static_cast<double>(std::max<Eigen::Index>(1, JtJ.rows()));
    bool stepped = false;
    for (int attempt = 0; attempt < 24; ++attempt) {
      Eigen::MatrixXd A = JtJ;
      A.diagonal().array() += lambda * std::max(scale, 1e-12);
      const Eigen::VectorXd delta = A.ldlt().solve(-grad);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd x_new = clamp_to(options, x + delta);
      Eigen::VectorXd r_new;
      try {
        r_new = residual(x_new);
      } catch (const DomainError&) {
        lambda *= 10.0;
        continue;
      }
      const double cost_new = 0.5 * r_new.squaredNorm();
      if (cost_new < cost) {
        const double step = (x_new - x).norm();
        x = x_new;
        r = r_new;
        cost = cost_new;
        lambda = std::max(lambda * 0.25, 1e-12);
        stepped = true;
        if (step <= options.step_tol * (1.0 + x.norm())) {
          result.converged = true;
        }
        break;
      }
      lambda *= 10.0;
    }
    if (!stepped || result.converged) {
      if (!stepped) result.converged = true;  // no descent direction left: stationary
      break;
    }
  }

  result.x = x;
  result.residual_norm = r.norm();
  return result;
}

}  // namespace obsform
