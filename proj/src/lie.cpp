#include "obsform/lie.hpp"

#include <cmath>
#include <stdexcept>

namespace obsform {

Eigen::VectorXd ObservabilityMap::value(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(order);
  const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
  for (int k = 0; k < order; ++k) out[k] = evaluate(components[static_cast<std::size_t>(k)], xs);
  return out;
}

Eigen::MatrixXd ObservabilityMap::jacobian_at(const Eigen::VectorXd& x) const {
  const int n = system->n;
  Eigen::MatrixXd out(order, n);
  const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
  for (int k = 0; k < order; ++k)
    for (int j = 0; j < n; ++j)
      out(k, j) = evaluate(jacobian[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)], xs);
  return out;
}

Expr lie_along(const std::vector<Expr>& field, const Expr& a) {
  Expr acc = Expr::constant(0.0);
  for (std::size_t j = 0; j < field.size(); ++j) {
    acc = acc + differentiate(a, static_cast<int>(j)) * field[j];
  }
  return simplify(acc);
}

Expr lie_f(const ControlAffineSystem& sys, const Expr& a) { return lie_along(sys.f, a); }

std::vector<Expr> lie_g(const ControlAffineSystem& sys, const Expr& a) {
  std::vector<Expr> out;
  out.reserve(static_cast<std::size_t>(sys.m));
  for (int j = 0; j < sys.m; ++j) {
    std::vector<Expr> column;
    column.reserve(static_cast<std::size_t>(sys.n));
    for (int i = 0; i < sys.n; ++i)
      column.push_back(sys.g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
    out.push_back(lie_along(column, a));
  }
  return out;
}

LieTable::LieTable(ControlAffineSystem sys) : sys_(std::move(sys)) {
  lf_.push_back(simplify(sys_.h));
}

void LieTable::extend(int k) const {
  while (static_cast<int>(lf_.size()) <= k) {
    lf_.push_back(lie_f(sys_, lf_.back()));
  }
  while (static_cast<int>(lg_.size()) <= k) {
    const int at = static_cast<int>(lg_.size());
    lg_.push_back(lie_g(sys_, lf_[static_cast<std::size_t>(at)]));
  }
  while (static_cast<int>(grad_lf_.size()) <= k) {
    const int at = static_cast<int>(grad_lf_.size());
    std::vector<Expr> grad;
    for (int j = 0; j < sys_.n; ++j)
      grad.push_back(differentiate(lf_[static_cast<std::size_t>(at)], j));
    grad_lf_.push_back(std::move(grad));
  }
  while (static_cast<int>(grad_lg_.size()) <= k) {
    const int at = static_cast<int>(grad_lg_.size());
    std::vector<std::vector<Expr>> per_column;
    for (int j = 0; j < sys_.m; ++j) {
      std::vector<Expr> grad;
      for (int axis = 0; axis < sys_.n; ++axis)
        grad.push_back(
            differentiate(lg_[static_cast<std::size_t>(at)][static_cast<std::size_t>(j)], axis));
      per_column.push_back(std::move(grad));
    }
    grad_lg_.push_back(std::move(per_column));
  }
}

const Expr& LieTable::lf_h(int k) const {
  if (k < 0) throw std::invalid_argument("lf_h: negative order");
  std::lock_guard<std::mutex> lock(mutex_);
  extend(k);
  return lf_[static_cast<std::size_t>(k)];
}

const Expr& LieTable::lg_lf_h(int k, int j) const {
  if (k < 0 || j < 0 || j >= sys_.m) throw std::invalid_argument("lg_lf_h: bad index");
  std::lock_guard<std::mutex> lock(mutex_);
  extend(k);
  return lg_[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
}

const std::vector<Expr>& LieTable::grad_lf_h(int k) const {
  if (k < 0) throw std::invalid_argument("grad_lf_h: negative order");
  std::lock_guard<std::mutex> lock(mutex_);
  extend(k);
  return grad_lf_[static_cast<std::size_t>(k)];
}

const std::vector<Expr>& LieTable::grad_lg_lf_h(int k, int j) const {
  if (k < 0 || j < 0 || j >= sys_.m) throw std::invalid_argument("grad_lg_lf_h: bad index");
  std::lock_guard<std::mutex> lock(mutex_);
  extend(k);
  return grad_lg_[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
}

ObservabilityMap LieTable::observability_map(int order) const {
  if (order < 1) throw std::invalid_argument("observability_map: order must be >= 1");
  ObservabilityMap map;
  map.order = order;
  map.system = &sys_;
  for (int k = 0; k < order; ++k) {
    map.components.push_back(lf_h(k));
    map.jacobian.push_back(grad_lf_h(k));
  }
  return map;
}

Eigen::MatrixXd LieTable::lg_H(int order, const Eigen::VectorXd& x) const {
  Eigen::MatrixXd out(order, sys_.m);
  const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));
  for (int k = 0; k < order; ++k)
    for (int j = 0; j < sys_.m; ++j) out(k, j) = evaluate(lg_lf_h(k, j), xs);
  return out;
}

double canonical_rhs_residual(const LieTable& lie, int order, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& u) {
  const ControlAffineSystem& sys = lie.system();
  const ObservabilityMap map = lie.observability_map(order);
  const std::span<const double> xs(x.data(), static_cast<std::size_t>(x.size()));

  const Eigen::VectorXd lhs = map.jacobian_at(x) * sys.eval_rhs(x, u);

  Eigen::VectorXd rhs(order);
  for (int k = 0; k < order - 1; ++k)
    rhs[k] = evaluate(map.components[static_cast<std::size_t>(k + 1)], xs);
  rhs[order - 1] = evaluate(lie.lf_h(order), xs);
  rhs += lie.lg_H(order, x) * u;

  return (lhs - rhs).cwiseAbs().maxCoeff();
}

}  // namespace obsform
