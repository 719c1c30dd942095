#pragma once

#include <Eigen/Dense>
#include <optional>

#include "obsform/lie.hpp"
#include "obsform/sampling.hpp"
#include "obsform/signals.hpp"

namespace obsform {

/// Trace of the tangent-bundle lift: xdot = f + g u, vdot = [df/dx + d(gu)/dx] v,
/// with output derivative w = dh/dx . v.
struct TangentTrace {
  Eigen::VectorXd times;
  Eigen::MatrixXd xs;  // steps x n
  Eigen::MatrixXd vs;  // steps x n
  Eigen::VectorXd ws;
  double sup_w = 0.0;
  double final_v_norm = 0.0;
  bool left_box = false;
  bool blowup = false;
};

/// RK4 integration of the lifted system. Throws std::invalid_argument when
/// |v0| = 0. When a box is given the trace is truncated (and flagged) as soon
/// as x leaves it.
TangentTrace tangent_simulate(const ControlAffineSystem& sys, const Eigen::VectorXd& x0,
                              const Eigen::VectorXd& v0, const InputSignal& u, double T,
                              double dt, const SampleBox* box = nullptr, double bound = 1e9);

struct InfinitesimalRankResult {
  int rank = 0;
  Eigen::MatrixXd rows;  // K x n: coefficient rows of w, w', ..., w^(K-1) in v
  Eigen::VectorXd singular_values;
  std::optional<Eigen::VectorXd> kernel_direction;  // present when rank < n
};

/// Rank of the map v -> (w, w', ..., w^(K-1)) at x under a constant input:
/// rows are gradients of hbar_j with hbar_0 = h, hbar_{j+1} = L_{f+gu} hbar_j.
/// Rank n certifies that only v = 0 annihilates the first K output
/// derivatives of the tangent system at x.
InfinitesimalRankResult infinitesimal_rank_check(const ControlAffineSystem& sys,
                                                 const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& u_const, int K,
                                                 double rank_tol = 1e-8);

}  // namespace obsform
