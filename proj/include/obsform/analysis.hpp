#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "obsform/lie.hpp"
#include "obsform/sampling.hpp"

namespace obsform {

struct AnalysisOptions {
  double rank_tol = 1e-8;      // sigma_min/sigma_max below this = rank deficiency
  double fiber_tol = 1e-9;     // |H(xa) - H(xb)| tolerance for a fiber pair
  double delta_min = 1e-3;     // minimum separation |xa - xb| of a fiber pair
  double a_tol = 1e-6;         // base tolerance for factorization consistency
  double domain_margin = 0.1;  // relative inflation of the box (the open set around it)
  int fiber_anchors = 48;      // anchor budget for fiber / injectivity searches
  int fiber_multistarts = 16;  // solver starts per anchor
  int lm_max_iterations = 120;
  double merge_tol = 1e-6;     // duplicate minima within this distance are merged
  std::uint64_t seed = 1;
};

// ---------------------------------------------------------------------------
// Rank profiling

struct RankSample {
  Eigen::VectorXd x;
  int rank = 0;
  double sigma_min = 0.0;  // smallest of the min(order, n) singular values
  double sigma_max = 0.0;
  bool defined = true;     // false when evaluation hit a domain error
};

/// Axis-aligned hyperplane x_axis = value covering part of the deficient set.
struct SingularPlane {
  int axis = 0;
  double value = 0.0;
};

struct RankReport {
  int order = 0;
  double rank_tol = 0.0;
  double margin = 0.0;  // distance margin used to call a point "near" the deficient set
  std::vector<RankSample> samples;
  std::vector<int> deficient;       // indices into samples with rank < min(order, n)
  std::vector<SingularPlane> planes;
  bool planes_cover_all = false;    // every deficient sample lies on a listed plane
  double min_sigma = 0.0;           // over defined samples
  int undefined_count = 0;

  bool full_rank_everywhere() const { return deficient.empty() && undefined_count == 0; }
};

RankReport rank_profile(const LieTable& lie, int order, const SampleBox& box,
                        const AnalysisOptions& options);

// ---------------------------------------------------------------------------
// Differential-observability order searches

struct OrderRankSummary {
  int order = 0;
  int deficient_count = 0;
  double min_sigma = 0.0;
};

struct StrongOrderResult {
  std::optional<int> order;  // smallest order with full rank at every sample
  double min_sigma = 0.0;    // at the found order
  bool injective = false;    // injectivity scan at the found order came back empty
  std::vector<OrderRankSummary> per_order;
};

StrongOrderResult strong_order_search(const LieTable& lie, int max_order, const SampleBox& box,
                                      const AnalysisOptions& options);

// ---------------------------------------------------------------------------
// Fibers, injectivity, factorization consistency

struct FiberPair {
  Eigen::VectorXd xa, xb;
  int order = 0;
  double dh = 0.0;         // achieved |H(xa) - H(xb)|
  double separation = 0.0; // |xa - xb|
  double value_gap = 0.0;  // |L_g L_f^{order-1} h(xa) - (xb)|, filled by property_a_check
  double rank_evidence_distance = 0.0;  // distance to nearest sampled full-rank point of H_{order-1}
};

/// Pairs with separation >= delta mapped together by H within fiber_tol.
/// Empty result is sample-based evidence of injectivity, not a proof.
std::vector<FiberPair> injectivity_scan(const LieTable& lie, int order, const SampleBox& box,
                                        double delta, const AnalysisOptions& options);

std::vector<FiberPair> fiber_pair_search(const LieTable& lie, int order, const SampleBox& box,
                                         int count, const AnalysisOptions& options);

struct PropertyAReport {
  int order = 0;
  bool pass = true;
  bool vacuous = false;   // no fiber pairs found
  double max_gap = 0.0;
  double tolerance = 0.0; // gap tolerance actually applied at the worst pair
  std::vector<FiberPair> pairs;
  std::optional<FiberPair> witness;  // worst pair when failing
};

/// Checks that L_g L_f^{order-1} h agrees on every sampled fiber of H_order.
PropertyAReport property_a_check(const LieTable& lie, int order, const SampleBox& box,
                                 const AnalysisOptions& options);

// ---------------------------------------------------------------------------
// Lipschitz-ratio scan

struct LipschitzScanOptions {
  double r0 = 0.01;            // pair-exclusion radius
  int cells_per_axis = 8;
  double blowup_threshold = 1.6;  // growth factor per radius halving that flags a cell
  int random_pairs = 2000;
};

struct LipschitzCell {
  Eigen::VectorXd lower, upper, center;
  double local[3] = {0.0, 0.0, 0.0};  // estimates at r0, r0/2, r0/4
  double growth1 = 1.0, growth2 = 1.0;
  bool flagged = false;
  int pair_count = 0;
};

struct LipschitzReport {
  int order = 0;
  double r0 = 0.0;
  double global_estimate = 0.0;  // sup ratio over pairs with distance >= r0
  std::vector<LipschitzCell> cells;
  bool any_flag = false;
};

/// Scans |Delta L_g L_f^{order-1} h| / |Delta H_order| over point pairs.
/// A cell is flagged when the local estimate keeps growing (by more than the
/// threshold per halving of the exclusion radius), the signature of a
/// Hoelder-type blowup rather than sampling noise.
LipschitzReport lipschitz_ratio_scan(const LieTable& lie, int order, const SampleBox& box,
                                     const LipschitzScanOptions& scan,
                                     const AnalysisOptions& options);

// ---------------------------------------------------------------------------
// Kernel necessary condition

struct KernelFinding {
  Eigen::VectorXd x;
  Eigen::MatrixXd kernel;   // columns: orthonormal kernel basis of dH_order/dx
  double violation = 0.0;   // max |grad(L_{g_k} L_f^{order-1} h) . v| over basis and k
};

/// At sampled points where dH_order/dx loses rank n, measures whether the
/// gradient of L_{g_k} L_f^{order-1} h annihilates the kernel. A nonzero
/// violation rules out a locally Lipschitz factorization near that point.
std::vector<KernelFinding> kernel_condition_check(const LieTable& lie, int order,
                                                  const SampleBox& box,
                                                  const AnalysisOptions& options);

KernelFinding kernel_condition_at(const LieTable& lie, int order, const Eigen::VectorXd& x,
                                  const AnalysisOptions& options);

// ---------------------------------------------------------------------------
// Modulus of continuity

struct ModulusOptions {
  double s_min = 1e-3;
  double s_max = 1.0;
  int s_count = 40;          // log-spaced s grid
  int ladder_per_decade = 64;
  double ladder_min = 1e-4;  // smallest axis displacement probed
  int anchors = 64;          // random anchors in addition to the grid
  int random_pairs = 4000;
};

struct ModulusResult {
  Eigen::VectorXd s;    // nondecreasing s grid
  Eigen::VectorXd rho;  // rho0_hat(s) = max |Phi(xa)-Phi(xb)| over pairs with |gamma(xa)-gamma(xb)| <= s
  double exponent = 0.0;     // log-log slope over the smallest s decade
  int fit_points = 0;
  bool degenerate = false;   // rho identically zero on the fit range
};

/// Empirical modulus of continuity of Phi with respect to gamma on the box.
ModulusResult modulus_estimate(const ControlAffineSystem& sys, const std::vector<Expr>& phi,
                               const std::vector<Expr>& gamma, const SampleBox& box,
                               const ModulusOptions& mod, const AnalysisOptions& options);

}  // namespace obsform
