#include "obsform/tangent.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "obsform/errors.hpp"

namespace obsform {

namespace {

std::span<const double> as_span(const Eigen::VectorXd& x) {
  return {x.data(), static_cast<std::size_t>(x.size())};
}

}  // namespace

TangentTrace tangent_simulate(const ControlAffineSystem& sys, const Eigen::VectorXd& x0,
                              const Eigen::VectorXd& v0, const InputSignal& u, double T,
                              double dt, const SampleBox* box, double bound) {
  if (v0.norm() == 0.0) {
    throw std::invalid_argument("tangent_simulate: v0 must be nonzero");
  }
  if (dt <= 0.0 || T < dt) throw std::invalid_argument("tangent_simulate: bad time grid");
  const int n = sys.n;

  // Symbolic Jacobians of f and of each g column, evaluated along the way.
  std::vector<std::vector<Expr>> df(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      df[static_cast<std::size_t>(i)].push_back(differentiate(sys.f[static_cast<std::size_t>(i)], j));
  std::vector<std::vector<std::vector<Expr>>> dg(static_cast<std::size_t>(sys.m));
  for (int k = 0; k < sys.m; ++k) {
    dg[static_cast<std::size_t>(k)].resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        dg[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)].push_back(
            differentiate(sys.g[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)], j));
  }

  auto tangent_matrix = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& uv) {
    Eigen::MatrixXd A(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double a = evaluate(df[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)], as_span(x));
        for (int k = 0; k < sys.m; ++k) {
          a += uv[k] *
               evaluate(dg[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                        as_span(x));
        }
        A(i, j) = a;
      }
    return A;
  };

  auto rhs = [&](double t, const Eigen::VectorXd& state) {
    const Eigen::VectorXd uv = u(t);
    const Eigen::VectorXd x = state.head(n);
    const Eigen::VectorXd v = state.tail(n);
    Eigen::VectorXd out(2 * n);
    out.head(n) = sys.eval_rhs(x, uv);
    out.tail(n) = tangent_matrix(x, uv) * v;
    return out;
  };

  const int steps = static_cast<int>(std::llround(T / dt));
  TangentTrace trace;
  trace.times = Eigen::VectorXd(steps + 1);
  trace.xs = Eigen::MatrixXd(steps + 1, n);
  trace.vs = Eigen::MatrixXd(steps + 1, n);
  trace.ws = Eigen::VectorXd(steps + 1);

  std::vector<Expr> dh;
  for (int j = 0; j < n; ++j) dh.push_back(differentiate(sys.h, j));
  auto output_w = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& v) {
    double w = 0.0;
    for (int j = 0; j < n; ++j) w += evaluate(dh[static_cast<std::size_t>(j)], as_span(x)) * v[j];
    return w;
  };

  Eigen::VectorXd state(2 * n);
  state.head(n) = x0;
  state.tail(n) = v0;
  int filled = 0;
  for (int k = 0; k <= steps; ++k) {
    const double t = k * dt;
    const Eigen::VectorXd x = state.head(n);
    const Eigen::VectorXd v = state.tail(n);
    if (box && !box->contains(x)) {
      trace.left_box = true;
      break;
    }
    if (!state.allFinite() || x.norm() > bound || v.norm() > bound) {
      trace.blowup = true;
      break;
    }
    trace.times[filled] = t;
    trace.xs.row(filled) = x.transpose();
    trace.vs.row(filled) = v.transpose();
    trace.ws[filled] = output_w(x, v);
    trace.sup_w = std::max(trace.sup_w, std::fabs(trace.ws[filled]));
    ++filled;
    if (k == steps) break;

    const Eigen::VectorXd k1 = rhs(t, state);
    const Eigen::VectorXd k2 = rhs(t + 0.5 * dt, state + 0.5 * dt * k1);
    const Eigen::VectorXd k3 = rhs(t + 0.5 * dt, state + 0.5 * dt * k2);
    const Eigen::VectorXd k4 = rhs(t + dt, state + dt * k3);
    state += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  trace.times.conservativeResize(filled);
  trace.xs.conservativeResize(filled, n);
  trace.vs.conservativeResize(filled, n);
  trace.ws.conservativeResize(filled);
  if (filled > 0) trace.final_v_norm = trace.vs.row(filled - 1).norm();
  return trace;
}

InfinitesimalRankResult infinitesimal_rank_check(const ControlAffineSystem& sys,
                                                 const Eigen::VectorXd& x,
                                                 const Eigen::VectorXd& u_const, int K,
                                                 double rank_tol) {
  if (K < 1) throw std::invalid_argument("infinitesimal_rank_check: K must be >= 1");
  const int n = sys.n;

  // Drift under the frozen input: f + g * u_const.
  std::vector<Expr> drift;
  for (int i = 0; i < n; ++i) {
    Expr e = sys.f[static_cast<std::size_t>(i)];
    for (int k = 0; k < sys.m; ++k) {
      e = e + Expr::constant(u_const[k]) * sys.g[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
    }
    drift.push_back(simplify(e));
  }

  InfinitesimalRankResult result;
  result.rows = Eigen::MatrixXd(K, n);
  Expr hbar = simplify(sys.h);
  for (int j = 0; j < K; ++j) {
    for (int axis = 0; axis < n; ++axis) {
      result.rows(j, axis) =
          evaluate(differentiate(hbar, axis), {x.data(), static_cast<std::size_t>(x.size())});
    }
    if (j + 1 < K) hbar = lie_along(drift, hbar);
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(result.rows, Eigen::ComputeFullV);
  result.singular_values = svd.singularValues();
  const double smax = result.singular_values.size() > 0 ? result.singular_values[0] : 0.0;
  for (int k = 0; k < result.singular_values.size(); ++k) {
    if (smax > 0.0 && result.singular_values[k] > rank_tol * smax) ++result.rank;
  }
  if (result.rank < n) {
    result.kernel_direction = svd.matrixV().col(svd.matrixV().cols() - 1);
  }
  return result;
}

}  // namespace obsform
