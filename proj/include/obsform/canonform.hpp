#pragma once

#include <Eigen/Dense>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "obsform/analysis.hpp"
#include "obsform/lie.hpp"
#include "obsform/mcshane.hpp"
#include "obsform/sampling.hpp"
#include "obsform/signals.hpp"

namespace obsform {

struct CanonOptions {
  AnalysisOptions analysis;
  double fit_tol = 1e-4;
  double inv_tol = 1e-9;
  double l_cap = 1e6;          // Lipschitz estimates beyond this flag the function
  double pair_floor = 1e-4;    // pairs closer than this are excluded from the L estimate
  int inverse_multistarts = 24;
};

// ---------------------------------------------------------------------------
// Numerical left inversion of an observability map

enum class LeftInverseStatus { Ok, NoConvergence, Ambiguous };

struct LeftInverseResult {
  LeftInverseStatus status = LeftInverseStatus::NoConvergence;
  Eigen::VectorXd x;        // best minimizer of |H(x) - z|
  double residual = 0.0;
  double condition = 0.0;   // sigma_max/sigma_min of dH/dx at x (Ok only)
  std::vector<Eigen::VectorXd> minima;  // distinct minimizers below inv_tol
};

/// Multistart minimization of |H(x) - z|^2 over the box. Reports Ambiguous
/// when two minimizers below inv_tol are separated by more than delta_min
/// (sample evidence of non-injectivity at z).
LeftInverseResult left_inverse(const ObservabilityMap& map, const Eigen::VectorXd& z,
                               const SampleBox& box, const CanonOptions& options,
                               const std::vector<Eigen::VectorXd>* guesses = nullptr);

// ---------------------------------------------------------------------------
// Factorized functions and the triangular form

struct FormFunction {
  enum class Role { G, Phi } role = Role::G;
  int index = 0;      // i for g_i; d_z for phi
  int key_order = 0;  // the H_k whose value keys the table
  bool lipschitz_ok = true;
  double l_estimate = 0.0;  // sup ratio seen (probe included), before capping
  SampledFunction table;
  std::string name() const {
    return role == Role::Phi ? "phi" : "g" + std::to_string(index);
  }
};

struct RefusalWitness {
  FiberPair pair;
  double gap = 0.0;
  double tolerance = 0.0;
  int order = 0;
};

/// Same H-key, different values: no function can factor the requested data
/// through the observability map on this box.
class PropertyARefusal : public std::runtime_error {
public:
  PropertyARefusal(const std::string& message, RefusalWitness witness)
      : std::runtime_error(message), witness_(std::move(witness)) {}
  const RefusalWitness& witness() const { return witness_; }

private:
  RefusalWitness witness_;
};

struct TriangularForm {
  int d_z = 0;
  int n_t = 0;
  SampleBox box;
  Eigen::VectorXd image_lower, image_upper;  // componentwise range of H_dz samples
  std::vector<FormFunction> g;               // d_z entries (g[i-1] drives zdot_i)
  FormFunction phi;
  bool injectivity_warning = false;  // H_dz collisions were found while sampling
  bool order_warning = false;        // d_z below the sampled full-rank order evidence
  std::uint64_t system_hash = 0;
  std::uint64_t config_hash = 0;
  std::string system_name;
};

FormFunction build_phi(const LieTable& lie, int d_z, const SampleBox& box,
                       const CanonOptions& options, bool* order_warning = nullptr);

/// Builds g_i. For i <= n_t the table is keyed by H_i (first i coordinates of
/// z) and the factorization consistency gate must pass; beyond n_t the key is
/// the full H_dz. Throws PropertyARefusal with a witness pair on violation.
FormFunction build_g(const LieTable& lie, int i, int n_t, int d_z, const SampleBox& box,
                     const CanonOptions& options);

TriangularForm assemble_triangular_form(const LieTable& lie, int n_t, int d_z,
                                        const SampleBox& box, const CanonOptions& options);

nlohmann::json form_to_json(const TriangularForm& form);
TriangularForm form_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Evaluation

/// Evaluates the form's functions. With a LieTable present the evaluation
/// inverts the keying map numerically (warm-started) and applies the exact
/// Lie expression at the recovered state, which keeps held-out accuracy at
/// the inversion tolerance; the McShane/nearest table is the fallback when
/// the inversion stalls. Without a LieTable only the table extension is used.
class FormEvaluator {
public:
  FormEvaluator(const TriangularForm& form, const LieTable* lie, const CanonOptions& options);

  /// g_i value at z (full d_z vector, only the first key_dim entries read).
  Eigen::VectorXd g(int i, const Eigen::VectorXd& z);
  double phi(const Eigen::VectorXd& z);

  /// zdot = (z_2 + g_1 u, ..., phi + g_dz u) at (z, u).
  Eigen::VectorXd rhs(const Eigen::VectorXd& z, const Eigen::VectorXd& u);

  /// Left inverse of H_dz with warm start from the previous call.
  LeftInverseResult reconstruct(const Eigen::VectorXd& z);

  const TriangularForm& form() const { return *form_; }
  int fallback_count() const { return fallbacks_; }

private:
  struct KeySolver {
    ObservabilityMap map;
    Eigen::VectorXd last_x;
    bool has_last = false;
  };

  Eigen::VectorXd eval_function(const FormFunction& fn, const Eigen::VectorXd& z);
  std::optional<Eigen::VectorXd> solve_key(int key_order, const Eigen::VectorXd& zk,
                                           const SampledFunction& table);

  const TriangularForm* form_;
  const LieTable* lie_;
  CanonOptions options_;
  std::map<int, KeySolver> solvers_;
  Eigen::VectorXd last_reconstruct_;
  bool has_reconstruct_ = false;
  int fallbacks_ = 0;
};

struct ResidualReport {
  double max_residual = 0.0;
  Eigen::VectorXd per_component;
  int steps = 0;
  bool left_box = false;
};

/// Integrates the system from x0 and compares dz/dt = dH/dx (f + g u) against
/// the form's right-hand side along the trajectory. Aborts (flag) when the
/// trajectory leaves the form's box.
ResidualReport residual_check(FormEvaluator& evaluator, const LieTable& lie,
                              const Eigen::VectorXd& x0, const InputSignal& u, double T,
                              double dt);

}  // namespace obsform
