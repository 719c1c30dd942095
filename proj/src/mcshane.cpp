#include "obsform/mcshane.hpp"

#include <cmath>
#include <string>

#include "obsform/errors.hpp"

namespace obsform {

namespace {

void validate_consistency(const Eigen::MatrixXd& keys, const Eigen::MatrixXd& values,
                          double lipschitz) {
  const int count = static_cast<int>(keys.rows());
  for (int i = 0; i < count; ++i) {
    for (int j = i + 1; j < count; ++j) {
      const double dz = (keys.row(i) - keys.row(j)).norm();
      const double dv = (values.row(i) - values.row(j)).template lpNorm<Eigen::Infinity>();
      const double slack = 1e-12 * (1.0 + dv);
      if (dv > lipschitz * dz + slack) {
        throw ConfigError("samples are not Lipschitz-consistent: |dv| = " +
                          std::to_string(dv) + " > L |dz| = " +
                          std::to_string(lipschitz * dz) + " for sample pair (" +
                          std::to_string(i) + ", " + std::to_string(j) + ")");
      }
    }
  }
}

}  // namespace

SampledFunction::SampledFunction(Eigen::MatrixXd keys, Eigen::MatrixXd values,
                                 ExtensionMode mode, double lipschitz)
    : keys_(std::move(keys)), values_(std::move(values)), mode_(mode), lipschitz_(lipschitz) {
  if (keys_.rows() == 0 || keys_.rows() != values_.rows()) {
    throw ConfigError("sampled function needs matching, nonempty key/value tables");
  }
  if (mode_ == ExtensionMode::McShane) {
    if (lipschitz_ < 0.0) throw ConfigError("negative Lipschitz constant");
    validate_consistency(keys_, values_, lipschitz_);
  }
}

int SampledFunction::nearest(const Eigen::VectorXd& z) const {
  int best = 0;
  double best_d = (keys_.row(0).transpose() - z).norm();
  for (int i = 1; i < size(); ++i) {
    const double d = (keys_.row(i).transpose() - z).norm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

Eigen::VectorXd SampledFunction::operator()(const Eigen::VectorXd& z) const {
  if (z.size() != keys_.cols()) throw ConfigError("sampled function: wrong key dimension");
  if (mode_ == ExtensionMode::NearestSample) {
    return values_.row(nearest(z));
  }
  Eigen::VectorXd out(out_dim());
  for (int c = 0; c < out_dim(); ++c) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < size(); ++i) {
      const double cand = values_(i, c) + lipschitz_ * (keys_.row(i).transpose() - z).norm();
      best = std::min(best, cand);
    }
    out[c] = best;
  }
  return out;
}

bool SampledFunction::is_constant(double tol) const {
  for (int i = 1; i < size(); ++i) {
    if ((values_.row(i) - values_.row(0)).template lpNorm<Eigen::Infinity>() > tol) return false;
  }
  return true;
}

SampledFunction mcshane_extend(const Eigen::MatrixXd& keys, const Eigen::MatrixXd& values,
                               double lipschitz) {
  return SampledFunction(keys, values, ExtensionMode::McShane, lipschitz);
}

}  // namespace obsform
