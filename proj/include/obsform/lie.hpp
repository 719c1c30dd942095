#pragma once

#include <Eigen/Dense>
#include <mutex>
#include <vector>

#include "obsform/system.hpp"

namespace obsform {

/// Stack (h, L_f h, ..., L_f^{i-1} h) together with its Jacobian.
struct ObservabilityMap {
  int order = 0;
  const ControlAffineSystem* system = nullptr;
  std::vector<Expr> components;               // order entries
  std::vector<std::vector<Expr>> jacobian;    // order x n

  Eigen::VectorXd value(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd jacobian_at(const Eigen::VectorXd& x) const;
};

/// Lie derivative of a scalar expression along an expression vector field.
Expr lie_along(const std::vector<Expr>& field, const Expr& a);

/// L_f a = sum_j (da/dx_j) f_j, simplified.
Expr lie_f(const ControlAffineSystem& sys, const Expr& a);

/// Row vector (L_{g_1} a, ..., L_{g_m} a).
std::vector<Expr> lie_g(const ControlAffineSystem& sys, const Expr& a);

/// Memoized table of L_f^k h and L_{g_j} L_f^k h for one system. Maps built
/// from it stay valid for the table's lifetime; reads are thread-safe.
class LieTable {
public:
  explicit LieTable(ControlAffineSystem sys);

  const ControlAffineSystem& system() const { return sys_; }

  /// L_f^k h, k >= 0.
  const Expr& lf_h(int k) const;

  /// L_{g_j} L_f^k h.
  const Expr& lg_lf_h(int k, int j) const;

  /// Gradient of L_f^k h (row of the observability-map Jacobian).
  const std::vector<Expr>& grad_lf_h(int k) const;

  /// Gradient of L_{g_j} L_f^k h.
  const std::vector<Expr>& grad_lg_lf_h(int k, int j) const;

  ObservabilityMap observability_map(int order) const;

  /// Value of L_g H_i at x: i x m matrix with entries L_{g_j} L_f^{k} h(x).
  Eigen::MatrixXd lg_H(int order, const Eigen::VectorXd& x) const;

private:
  void extend(int k) const;

  ControlAffineSystem sys_;
  mutable std::mutex mutex_;
  mutable std::vector<Expr> lf_;                          // lf_[k] = L_f^k h
  mutable std::vector<std::vector<Expr>> lg_;             // lg_[k][j]
  mutable std::vector<std::vector<Expr>> grad_lf_;        // grad_lf_[k][axis]
  mutable std::vector<std::vector<std::vector<Expr>>> grad_lg_;  // [k][j][axis]
};

/// Max-norm residual of d/dt H_i(x) against the shift structure
/// (H_2..H_i, L_f^i h) + (L_g H_i) u at the point (x, u). Exact algebra makes
/// this vanish; the residual measures floating-point noise only.
double canonical_rhs_residual(const LieTable& lie, int order, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& u);

}  // namespace obsform
