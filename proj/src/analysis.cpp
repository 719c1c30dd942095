#include "obsform/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "obsform/errors.hpp"
#include "obsform/leastsq.hpp"

namespace obsform {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::span<const double> as_span(const Eigen::VectorXd& x) {
  return {x.data(), static_cast<std::size_t>(x.size())};
}

struct SigmaInfo {
  int rank = 0;
  double sigma_min = 0.0;
  double sigma_max = 0.0;
};

SigmaInfo sigma_rank(const Eigen::VectorXd& sigma, double rank_tol, int order, int n) {
  SigmaInfo info;
  const int r = std::min(order, n);
  info.sigma_max = sigma.size() > 0 ? sigma[0] : 0.0;
  info.sigma_min = sigma.size() >= r ? sigma[r - 1] : 0.0;
  if (info.sigma_max <= 0.0) return info;
  for (int k = 0; k < sigma.size(); ++k) {
    if (sigma[k] > rank_tol * info.sigma_max) ++info.rank;
  }
  return info;
}

/// |L_g L_f^{order-1} h(xa) - L_g L_f^{order-1} h(xb)| over the m columns.
double lg_row_gap(const LieTable& lie, int order, const Eigen::VectorXd& xa,
                  const Eigen::VectorXd& xb) {
  double acc = 0.0;
  for (int j = 0; j < lie.system().m; ++j) {
    const Expr& e = lie.lg_lf_h(order - 1, j);
    const double d = evaluate(e, as_span(xa)) - evaluate(e, as_span(xb));
    acc += d * d;
  }
  return std::sqrt(acc);
}

/// Largest gradient norm of the L_{g_j} L_f^{order-1} h rows at x.
double lg_gradient_scale(const LieTable& lie, int order, const Eigen::VectorXd& x) {
  double best = 0.0;
  for (int j = 0; j < lie.system().m; ++j) {
    const auto& grad = lie.grad_lg_lf_h(order - 1, j);
    double acc = 0.0;
    for (const Expr& e : grad) {
      const double v = evaluate(e, as_span(x));
      acc += v * v;
    }
    best = std::max(best, std::sqrt(acc));
  }
  return best;
}

}  // namespace

// ---------------------------------------------------------------------------
// Rank profiling

RankReport rank_profile(const LieTable& lie, int order, const SampleBox& box,
                        const AnalysisOptions& options) {
  const ObservabilityMap map = lie.observability_map(order);
  const int n = lie.system().n;
  RankReport report;
  report.order = order;
  report.rank_tol = options.rank_tol;
  report.min_sigma = kInf;

  double max_spacing = 0.0;
  for (int j = 0; j < box.dim(); ++j) {
    const int c = box.grid_counts[static_cast<std::size_t>(j)];
    if (c > 1) max_spacing = std::max(max_spacing, (box.upper[j] - box.lower[j]) / (c - 1));
  }
  report.margin = 2.0 * max_spacing;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd;
  const auto points = sample_points(box);
  report.samples.reserve(points.size());
  for (const Eigen::VectorXd& x : points) {
    RankSample s;
    s.x = x;
    try {
      const Eigen::MatrixXd J = map.jacobian_at(x);
      svd.compute(J);
      const SigmaInfo info = sigma_rank(svd.singularValues(), options.rank_tol, order, n);
      s.rank = info.rank;
      s.sigma_min = info.sigma_min;
      s.sigma_max = info.sigma_max;
      report.min_sigma = std::min(report.min_sigma, s.sigma_min);
      if (s.rank < std::min(order, n)) {
        report.deficient.push_back(static_cast<int>(report.samples.size()));
      }
    } catch (const DomainError&) {
      s.defined = false;
      ++report.undefined_count;
    }
    report.samples.push_back(std::move(s));
  }
  if (!std::isfinite(report.min_sigma)) report.min_sigma = 0.0;

  // Axis-aligned plane descriptors: a grid slice all of whose defined points
  // are deficient.
  const std::size_t grid_total = grid_points(box).size();
  for (int axis = 0; axis < box.dim(); ++axis) {
    const int count = box.grid_counts[static_cast<std::size_t>(axis)];
    for (int k = 0; k < count; ++k) {
      const double v = box.grid_coord(axis, k);
      int in_slice = 0, deficient_in_slice = 0;
      for (std::size_t idx = 0; idx < grid_total && idx < report.samples.size(); ++idx) {
        const RankSample& s = report.samples[idx];
        if (!s.defined || s.x[axis] != v) continue;
        ++in_slice;
        if (s.rank < std::min(order, n)) ++deficient_in_slice;
      }
      if (in_slice > 0 && deficient_in_slice == in_slice) {
        report.planes.push_back({axis, v});
      }
    }
  }
  const double cover_tol = 0.25 * std::max(max_spacing, 1e-12);
  report.planes_cover_all = !report.deficient.empty();
  for (const int idx : report.deficient) {
    const RankSample& s = report.samples[static_cast<std::size_t>(idx)];
    bool covered = false;
    for (const SingularPlane& p : report.planes) {
      if (std::fabs(s.x[p.axis] - p.value) <= cover_tol) {
        covered = true;
        break;
      }
    }
    if (!covered) {
      report.planes_cover_all = false;
      break;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Order searches

StrongOrderResult strong_order_search(const LieTable& lie, int max_order, const SampleBox& box,
                                      const AnalysisOptions& options) {
  StrongOrderResult result;
  const int n = lie.system().n;
  for (int order = 1; order <= max_order; ++order) {
    const RankReport report = rank_profile(lie, order, box, options);
    OrderRankSummary summary;
    summary.order = order;
    summary.min_sigma = report.min_sigma;
    for (const RankSample& s : report.samples) {
      if (!s.defined || s.rank < n) ++summary.deficient_count;
    }
    result.per_order.push_back(summary);
    if (!result.order && summary.deficient_count == 0) {
      result.order = order;
      result.min_sigma = report.min_sigma;
      result.injective =
          injectivity_scan(lie, order, box, options.delta_min, options).empty();
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Fiber machinery

namespace {

struct PairAccumulator {
  std::vector<FiberPair> pairs;
  double merge_tol;

  bool push(FiberPair&& p) {
    for (const FiberPair& q : pairs) {
      const bool same = (p.xa - q.xa).norm() < merge_tol && (p.xb - q.xb).norm() < merge_tol;
      const bool swapped = (p.xa - q.xb).norm() < merge_tol && (p.xb - q.xa).norm() < merge_tol;
      if (same || swapped) return false;
    }
    pairs.push_back(std::move(p));
    return true;
  }
};

/// Seeks partners x with H(x) = H(anchor) and |x - anchor| >= delta.
void fiber_partners_for_anchor(const ObservabilityMap& map, const Eigen::VectorXd& anchor,
                               const SampleBox& box, double delta, int order,
                               const AnalysisOptions& options, Rng rng,
                               PairAccumulator* acc) {
  Eigen::VectorXd target;
  try {
    target = map.value(anchor);
  } catch (const DomainError&) {
    return;
  }

  LeastSquaresOptions lm;
  lm.max_iterations = options.lm_max_iterations;
  lm.residual_tol = 0.1 * options.fiber_tol;
  const double margin = options.domain_margin;
  lm.lower = box.lower - margin * (box.upper - box.lower);
  lm.upper = box.upper + margin * (box.upper - box.lower);

  auto residual = [&](const Eigen::VectorXd& x) { return map.value(x) - target; };
  auto jacobian = [&](const Eigen::VectorXd& x) { return map.jacobian_at(x); };

  for (int s = 0; s < options.fiber_multistarts; ++s) {
    const Eigen::VectorXd x0 = box.random_point(rng);
    const LeastSquaresResult lsr = levenberg_marquardt(residual, jacobian, x0, lm);
    if (lsr.residual_norm > options.fiber_tol) continue;
    const double sep = (lsr.x - anchor).norm();
    if (sep < delta) continue;
    if (box.excluded(lsr.x)) continue;
    FiberPair p;
    p.xa = anchor;
    p.xb = lsr.x;
    p.order = order;
    p.dh = lsr.residual_norm;
    p.separation = sep;
    acc->push(std::move(p));
  }
}

std::vector<FiberPair> find_fiber_pairs(const LieTable& lie, int order, const SampleBox& box,
                                        double delta, int max_pairs,
                                        const AnalysisOptions& options) {
  const ObservabilityMap map = lie.observability_map(order);
  const int n = lie.system().n;
  const auto points = sample_points(box);

  // H values and Jacobian ranks at the sample points; rank-deficient points
  // are the most promising anchors (fibers accumulate at rank drops).
  std::vector<Eigen::VectorXd> values(points.size());
  std::vector<char> defined(points.size(), 1);
  std::vector<char> deficient(points.size(), 0);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd;
  for (std::size_t i = 0; i < points.size(); ++i) {
    try {
      values[i] = map.value(points[i]);
      svd.compute(map.jacobian_at(points[i]));
      const SigmaInfo info = sigma_rank(svd.singularValues(), options.rank_tol, order, n);
      deficient[i] = info.rank < std::min(order, n) ? 1 : 0;
    } catch (const DomainError&) {
      defined[i] = 0;
    }
  }

  PairAccumulator acc{{}, options.merge_tol};

  // Direct screening among samples catches fibers aligned with the grid.
  for (std::size_t i = 0; i < points.size() && static_cast<int>(acc.pairs.size()) < max_pairs;
       ++i) {
    if (!defined[i]) continue;
    for (std::size_t j = i + 1; j < points.size(); ++j) {
      if (!defined[j]) continue;
      const double dh = (values[i] - values[j]).norm();
      if (dh > options.fiber_tol) continue;
      const double sep = (points[i] - points[j]).norm();
      if (sep < delta) continue;
      FiberPair p;
      p.xa = points[i];
      p.xb = points[j];
      p.order = order;
      p.dh = dh;
      p.separation = sep;
      acc.push(std::move(p));
      if (static_cast<int>(acc.pairs.size()) >= max_pairs) break;
    }
  }

  // Anchor selection: every deficient sample first, then an even stride.
  std::vector<std::size_t> anchor_idx;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (deficient[i]) anchor_idx.push_back(i);
    if (static_cast<int>(anchor_idx.size()) >= options.fiber_anchors) break;
  }
  if (static_cast<int>(anchor_idx.size()) < options.fiber_anchors && !points.empty()) {
    const std::size_t want =
        static_cast<std::size_t>(options.fiber_anchors) - anchor_idx.size();
    const std::size_t stride = std::max<std::size_t>(1, points.size() / std::max<std::size_t>(1, want));
    for (std::size_t i = 0; i < points.size() && anchor_idx.size() <
         static_cast<std::size_t>(options.fiber_anchors); i += stride) {
      if (!deficient[i]) anchor_idx.push_back(i);
    }
  }

  Rng rng(options.seed ^ (0xabcdu + static_cast<std::uint64_t>(order)));
  for (std::size_t k = 0; k < anchor_idx.size(); ++k) {
    if (static_cast<int>(acc.pairs.size()) >= max_pairs) break;
    const std::size_t i = anchor_idx[k];
    if (!defined[i]) continue;
    fiber_partners_for_anchor(map, points[i], box, delta, order, options, rng.fork(k), &acc);
  }

  if (static_cast<int>(acc.pairs.size()) > max_pairs) acc.pairs.resize(max_pairs);

  // Evidence for the rank-sampling surrogate: distance to the nearest sampled
  // full-rank point of H_{order-1}.
  if (!acc.pairs.empty() && order >= 2) {
    const ObservabilityMap prev = lie.observability_map(order - 1);
    std::vector<Eigen::VectorXd> full_rank_points;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!defined[i]) continue;
      try {
        svd.compute(prev.jacobian_at(points[i]));
        const SigmaInfo info =
            sigma_rank(svd.singularValues(), options.rank_tol, order - 1, n);
        if (info.rank == std::min(order - 1, n)) full_rank_points.push_back(points[i]);
      } catch (const DomainError&) {
      }
    }
    for (FiberPair& p : acc.pairs) {
      double best = kInf;
      for (const Eigen::VectorXd& q : full_rank_points) {
        best = std::min(best, std::min((p.xa - q).norm(), (p.xb - q).norm()));
      }
      p.rank_evidence_distance = best;
    }
  }
  return std::move(acc.pairs);
}

}  // namespace

std::vector<FiberPair> injectivity_scan(const LieTable& lie, int order, const SampleBox& box,
                                        double delta, const AnalysisOptions& options) {
  return find_fiber_pairs(lie, order, box, delta, 200, options);
}

std::vector<FiberPair> fiber_pair_search(const LieTable& lie, int order, const SampleBox& box,
                                         int count, const AnalysisOptions& options) {
  return find_fiber_pairs(lie, order, box, options.delta_min, count, options);
}

PropertyAReport property_a_check(const LieTable& lie, int order, const SampleBox& box,
                                 const AnalysisOptions& options) {
  PropertyAReport report;
  report.order = order;
  report.pairs = fiber_pair_search(lie, order, box, 64, options);
  if (report.pairs.empty()) {
    report.vacuous = true;
    report.tolerance = options.a_tol;
    return report;
  }
  double worst_gap = -1.0;
  for (FiberPair& p : report.pairs) {
    p.value_gap = lg_row_gap(lie, order, p.xa, p.xb);
    const double scale =
        std::max(lg_gradient_scale(lie, order, p.xa), lg_gradient_scale(lie, order, p.xb));
    const double tol = options.a_tol + p.dh * scale;
    if (p.value_gap > worst_gap) {
      worst_gap = p.value_gap;
      report.tolerance = tol;
      report.witness = p;
    }
    if (p.value_gap > tol) report.pass = false;
  }
  report.max_gap = std::max(0.0, worst_gap);
  if (report.pass) report.witness.reset();
  return report;
}

// ---------------------------------------------------------------------------
// Lipschitz-ratio scan

namespace {

struct RatioPair {
  double distance = 0.0;
  double ratio = 0.0;
};

/// Ratio |Delta L_g L_f^{order-1} h| / |Delta H_order|, or nullopt when the
/// pair sits on a fiber (denominator ~ 0) or evaluation fails.
std::optional<RatioPair> ratio_for_pair(const LieTable& lie, const ObservabilityMap& map,
                                        int order, const Eigen::VectorXd& xa,
                                        const Eigen::VectorXd& xb) {
  try {
    const double den = (map.value(xa) - map.value(xb)).norm();
    const double scale = 1.0 + map.value(xa).norm();
    if (den <= 1e-13 * scale) return std::nullopt;
    const double num = lg_row_gap(lie, order, xa, xb);
    return RatioPair{(xa - xb).norm(), num / den};
  } catch (const DomainError&) {
    return std::nullopt;
  }
}

}  // namespace

LipschitzReport lipschitz_ratio_scan(const LieTable& lie, int order, const SampleBox& box,
                                     const LipschitzScanOptions& scan,
                                     const AnalysisOptions& options) {
  const ObservabilityMap map = lie.observability_map(order);
  const int n = box.dim();
  LipschitzReport report;
  report.order = order;
  report.r0 = scan.r0;

  int per_axis = scan.cells_per_axis;
  while (std::pow(static_cast<double>(per_axis), n) > 32768.0 && per_axis > 2) --per_axis;

  long long cell_total = 1;
  for (int j = 0; j < n; ++j) cell_total *= per_axis;

  const double radii[3] = {scan.r0, scan.r0 / 2.0, scan.r0 / 4.0};

  // Random pairs contribute to the global estimate and to the cell their
  // midpoint falls in.
  struct CellPairs {
    std::vector<RatioPair> pairs;
  };
  std::vector<CellPairs> cell_pairs(static_cast<std::size_t>(cell_total));
  Eigen::VectorXd widths = (box.upper - box.lower) / static_cast<double>(per_axis);

  auto cell_index_of = [&](const Eigen::VectorXd& x) -> long long {
    long long idx = 0;
    for (int j = 0; j < n; ++j) {
      int c = static_cast<int>((x[j] - box.lower[j]) / widths[j]);
      c = std::min(std::max(c, 0), per_axis - 1);
      idx = idx * per_axis + c;
    }
    return idx;
  };

  Rng rng(options.seed ^ 0x11f5u);
  for (int k = 0; k < scan.random_pairs; ++k) {
    const Eigen::VectorXd xa = box.random_point(rng);
    const Eigen::VectorXd xb = box.random_point(rng);
    if (box.excluded(xa) || box.excluded(xb)) continue;
    if ((xa - xb).norm() < radii[2]) continue;
    const auto rp = ratio_for_pair(lie, map, order, xa, xb);
    if (!rp) continue;
    cell_pairs[static_cast<std::size_t>(cell_index_of(0.5 * (xa + xb)))].pairs.push_back(*rp);
    if (rp->distance >= scan.r0) {
      report.global_estimate = std::max(report.global_estimate, rp->ratio);
    }
  }

  // Cell sweep: axis-aligned shrinking pairs anchored at cell corners and
  // center probe the three radii directly.
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  for (long long c = 0; c < cell_total; ++c) {
    LipschitzCell cell;
    cell.lower = Eigen::VectorXd(n);
    cell.upper = Eigen::VectorXd(n);
    for (int j = 0; j < n; ++j) {
      cell.lower[j] = box.lower[j] + widths[j] * idx[static_cast<std::size_t>(j)];
      cell.upper[j] = cell.lower[j] + widths[j];
    }
    cell.center = 0.5 * (cell.lower + cell.upper);

    std::vector<Eigen::VectorXd> anchors;
    const int corners = 1 << n;
    for (int mask = 0; mask < corners; ++mask) {
      Eigen::VectorXd a(n);
      for (int j = 0; j < n; ++j) a[j] = (mask >> j) & 1 ? cell.upper[j] : cell.lower[j];
      anchors.push_back(std::move(a));
    }
    anchors.push_back(cell.center);

    auto& pairs = cell_pairs[static_cast<std::size_t>(c)].pairs;
    for (const Eigen::VectorXd& a : anchors) {
      if (box.excluded(a)) continue;
      for (int axis = 0; axis < n; ++axis) {
        for (const double d : radii) {
          for (const double sign : {1.0, -1.0}) {
            Eigen::VectorXd b = a;
            b[axis] += sign * d;
            if (!box.contains(b) || box.excluded(b)) continue;
            const auto rp = ratio_for_pair(lie, map, order, a, b);
            if (rp) pairs.push_back(*rp);
          }
        }
      }
    }

    for (const RatioPair& rp : pairs) {
      for (int k = 0; k < 3; ++k) {
        if (rp.distance >= radii[k]) cell.local[k] = std::max(cell.local[k], rp.ratio);
      }
      if (rp.distance >= scan.r0) {
        report.global_estimate = std::max(report.global_estimate, rp.ratio);
      }
    }
    cell.pair_count = static_cast<int>(pairs.size());
    cell.growth1 = cell.local[0] > 0.0 ? cell.local[1] / cell.local[0] : 1.0;
    cell.growth2 = cell.local[1] > 0.0 ? cell.local[2] / cell.local[1] : 1.0;
    cell.flagged = cell.local[0] > 0.0 && cell.growth1 > scan.blowup_threshold &&
                   cell.growth2 > scan.blowup_threshold;
    report.any_flag = report.any_flag || cell.flagged;
    report.cells.push_back(std::move(cell));

    for (int j = n - 1; j >= 0; --j) {
      if (++idx[static_cast<std::size_t>(j)] < per_axis) break;
      idx[static_cast<std::size_t>(j)] = 0;
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Kernel necessary condition

KernelFinding kernel_condition_at(const LieTable& lie, int order, const Eigen::VectorXd& x,
                                  const AnalysisOptions& options) {
  const ObservabilityMap map = lie.observability_map(order);
  const int n = lie.system().n;
  KernelFinding finding;
  finding.x = x;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd;
  svd.compute(map.jacobian_at(x), Eigen::ComputeFullV);
  const Eigen::VectorXd sigma = svd.singularValues();
  const double smax = sigma.size() > 0 ? sigma[0] : 0.0;
  int rank = 0;
  for (int k = 0; k < sigma.size(); ++k) {
    if (smax > 0.0 && sigma[k] > options.rank_tol * smax) ++rank;
  }
  if (rank >= n) {
    finding.kernel = Eigen::MatrixXd(n, 0);
    return finding;
  }
  finding.kernel = svd.matrixV().rightCols(n - rank);

  for (int col = 0; col < finding.kernel.cols(); ++col) {
    const Eigen::VectorXd v = finding.kernel.col(col);
    for (int j = 0; j < lie.system().m; ++j) {
      const auto& grad = lie.grad_lg_lf_h(order - 1, j);
      double dot = 0.0;
      for (int axis = 0; axis < n; ++axis) {
        dot += evaluate(grad[static_cast<std::size_t>(axis)], as_span(x)) * v[axis];
      }
      finding.violation = std::max(finding.violation, std::fabs(dot));
    }
  }
  return finding;
}

std::vector<KernelFinding> kernel_condition_check(const LieTable& lie, int order,
                                                  const SampleBox& box,
                                                  const AnalysisOptions& options) {
  std::vector<KernelFinding> findings;
  for (const Eigen::VectorXd& x : sample_points(box)) {
    try {
      KernelFinding f = kernel_condition_at(lie, order, x, options);
      if (f.kernel.cols() > 0) findings.push_back(std::move(f));
    } catch (const DomainError&) {
    }
    if (findings.size() >= 2000) break;
  }
  std::stable_sort(findings.begin(), findings.end(),
                   [](const KernelFinding& a, const KernelFinding& b) {
                     return a.violation > b.violation;
                   });
  return findings;
}

// ---------------------------------------------------------------------------
// Modulus of continuity

ModulusResult modulus_estimate(const ControlAffineSystem& sys, const std::vector<Expr>& phi,
                               const std::vector<Expr>& gamma, const SampleBox& box,
                               const ModulusOptions& mod, const AnalysisOptions& options) {
  (void)sys;
  auto eval_vec = [](const std::vector<Expr>& es, const Eigen::VectorXd& x) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(es.size()));
    for (std::size_t k = 0; k < es.size(); ++k) out[static_cast<Eigen::Index>(k)] =
        evaluate(es[k], as_span(x));
    return out;
  };

  struct DP {
    double d, p;
  };
  std::vector<DP> pairs;

  auto record = [&](const Eigen::VectorXd& xa, const Eigen::VectorXd& xb) {
    try {
      const double d = (eval_vec(gamma, xa) - eval_vec(gamma, xb)).norm();
      const double p = (eval_vec(phi, xa) - eval_vec(phi, xb)).norm();
      pairs.push_back({d, p});
    } catch (const DomainError&) {
    }
  };

  // Anchor grid capped at 5 per axis; the resolution in D comes from the
  // displacement ladder, not from anchor density.
  SampleBox anchor_box = box;
  for (int j = 0; j < box.dim(); ++j) {
    anchor_box.grid_counts[static_cast<std::size_t>(j)] =
        std::min(box.grid_counts[static_cast<std::size_t>(j)], 5);
    if (anchor_box.grid_counts[static_cast<std::size_t>(j)] % 2 == 0) {
      ++anchor_box.grid_counts[static_cast<std::size_t>(j)];  // keep the midpoint on the grid
    }
  }
  std::vector<Eigen::VectorXd> anchors = grid_points(anchor_box);
  Rng rng(options.seed ^ 0x3a7deadbeefull);
  for (const Eigen::VectorXd& x : random_points(box, mod.anchors, rng)) anchors.push_back(x);

  const double step = std::pow(10.0, 1.0 / static_cast<double>(mod.ladder_per_decade));
  for (std::size_t ai = 0; ai < anchors.size(); ++ai) {
    const Eigen::VectorXd& a = anchors[ai];
    for (int axis = 0; axis < box.dim(); ++axis) {
      const double range = box.upper[axis] - box.lower[axis];
      for (double t = mod.ladder_min; t <= range; t *= step) {
        for (const double sign : {1.0, -1.0}) {
          Eigen::VectorXd b = a;
          b[axis] += sign * t;
          if (!box.contains(b) || box.excluded(b)) continue;
          record(a, b);
        }
      }
    }
  }
  for (int k = 0; k < mod.random_pairs; ++k) {
    const Eigen::VectorXd xa = box.random_point(rng);
    const Eigen::VectorXd xb = box.random_point(rng);
    if (box.excluded(xa) || box.excluded(xb)) continue;
    record(xa, xb);
  }

  std::sort(pairs.begin(), pairs.end(), [](const DP& a, const DP& b) { return a.d < b.d; });
  std::vector<double> prefix_max(pairs.size());
  double run = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    run = std::max(run, pairs[i].p);
    prefix_max[i] = run;
  }

  ModulusResult result;
  result.s = Eigen::VectorXd(mod.s_count);
  result.rho = Eigen::VectorXd(mod.s_count);
  const double log_lo = std::log10(mod.s_min);
  const double log_hi = std::log10(mod.s_max);
  for (int i = 0; i < mod.s_count; ++i) {
    const double t = mod.s_count > 1 ? static_cast<double>(i) / (mod.s_count - 1) : 0.0;
    const double s = std::pow(10.0, log_lo * (1.0 - t) + log_hi * t);
    result.s[i] = s;
    // largest sampled D <= s
    std::size_t lo = 0, hi = pairs.size();
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (pairs[mid].d <= s)
        lo = mid + 1;
      else
        hi = mid;
    }
    result.rho[i] = lo == 0 ? 0.0 : prefix_max[lo - 1];
  }

  // Log-log fit over the smallest s decade.
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int count = 0;
  for (int i = 0; i < mod.s_count; ++i) {
    if (result.s[i] > 10.0 * mod.s_min * (1.0 + 1e-12)) break;
    if (result.rho[i] <= 0.0) continue;
    const double lx = std::log10(result.s[i]);
    const double ly = std::log10(result.rho[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++count;
  }
  result.fit_points = count;
  if (count >= 2 && (count * sxx - sx * sx) > 0.0) {
    result.exponent = (count * sxy - sx * sy) / (count * sxx - sx * sx);
  } else {
    result.degenerate = true;
  }
  return result;
}

}  // namespace obsform
