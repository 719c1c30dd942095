#include "obsform/canonform.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "obsform/errors.hpp"
#include "obsform/leastsq.hpp"

namespace obsform {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::span<const double> as_span(const Eigen::VectorXd& x) {
  return {x.data(), static_cast<std::size_t>(x.size())};
}

Eigen::VectorXd eval_exprs(const std::vector<Expr>& es, const Eigen::VectorXd& x) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(es.size()));
  for (std::size_t k = 0; k < es.size(); ++k)
    out[static_cast<Eigen::Index>(k)] = evaluate(es[k], as_span(x));
  return out;
}

LeastSquaresOptions lm_options_for(const SampleBox& box, const CanonOptions& options) {
  LeastSquaresOptions lm;
  lm.max_iterations = options.analysis.lm_max_iterations;
  lm.residual_tol = 0.1 * options.inv_tol;
  const Eigen::VectorXd pad = options.analysis.domain_margin * (box.upper - box.lower);
  lm.lower = box.lower - pad;
  lm.upper = box.upper + pad;
  return lm;
}

}  // namespace

// ---------------------------------------------------------------------------
// Left inversion

LeftInverseResult left_inverse(const ObservabilityMap& map, const Eigen::VectorXd& z,
                               const SampleBox& box, const CanonOptions& options,
                               const std::vector<Eigen::VectorXd>* guesses) {
  if (z.size() != map.order) throw ConfigError("left_inverse: z has wrong dimension");
  auto residual = [&](const Eigen::VectorXd& x) { return map.value(x) - z; };
  auto jacobian = [&](const Eigen::VectorXd& x) { return map.jacobian_at(x); };
  const LeastSquaresOptions lm = lm_options_for(box, options);

  std::vector<Eigen::VectorXd> starts;
  if (guesses && !guesses->empty()) {
    starts = *guesses;
  } else {
    starts.push_back(0.5 * (box.lower + box.upper));
    std::uint64_t tag = 0;
    for (int i = 0; i < z.size(); ++i) {
      tag = tag * 1099511628211ull + std::hash<double>{}(z[i]);
    }
    Rng rng(options.analysis.seed ^ tag);
    for (int s = 1; s < options.inverse_multistarts; ++s) {
      starts.push_back(box.random_point(rng));
    }
  }

  LeftInverseResult result;
  result.residual = kInf;
  for (const Eigen::VectorXd& x0 : starts) {
    const LeastSquaresResult lsr = levenberg_marquardt(residual, jacobian, x0, lm);
    if (lsr.residual_norm < result.residual) {
      result.residual = lsr.residual_norm;
      result.x = lsr.x;
    }
    if (lsr.residual_norm > options.inv_tol) continue;
    bool merged = false;
    for (const Eigen::VectorXd& m : result.minima) {
      if ((m - lsr.x).norm() < options.analysis.delta_min) {
        merged = true;
        break;
      }
    }
    if (!merged) result.minima.push_back(lsr.x);
  }

  if (result.minima.empty()) {
    result.status = LeftInverseStatus::NoConvergence;
    return result;
  }
  if (result.minima.size() > 1) {
    result.status = LeftInverseStatus::Ambiguous;
    return result;
  }
  result.status = LeftInverseStatus::Ok;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(map.jacobian_at(result.x));
  const auto& sigma = svd.singularValues();
  const int r = std::min(map.order, map.system->n);
  result.condition = sigma[r - 1] > 0.0 ? sigma[0] / sigma[r - 1] : kInf;
  return result;
}

// ---------------------------------------------------------------------------
// Factorized-function construction

namespace {

struct BuildSpec {
  FormFunction::Role role = FormFunction::Role::G;
  int index = 0;      // i for g_i, d_z for phi
  int key_order = 0;  // order of the keying map
  std::vector<Expr> value_exprs;
};

struct SampleSet {
  Eigen::MatrixXd keys;     // N x key_order
  Eigen::MatrixXd values;   // N x r
  Eigen::MatrixXd anchors;  // N x n
};

SampleSet collect_samples(const LieTable& lie, const BuildSpec& spec, const SampleBox& box) {
  const ObservabilityMap key_map = lie.observability_map(spec.key_order);
  const auto points = sample_points(box);
  std::vector<Eigen::VectorXd> keys, values, anchors;
  for (const Eigen::VectorXd& x : points) {
    try {
      keys.push_back(key_map.value(x));
      values.push_back(eval_exprs(spec.value_exprs, x));
      anchors.push_back(x);
    } catch (const DomainError&) {
      if (keys.size() > values.size()) keys.pop_back();
    }
  }
  if (keys.empty()) throw ConfigError("no usable samples in the box");
  SampleSet set;
  set.keys = Eigen::MatrixXd(static_cast<Eigen::Index>(keys.size()), spec.key_order);
  set.values = Eigen::MatrixXd(static_cast<Eigen::Index>(keys.size()),
                               static_cast<Eigen::Index>(spec.value_exprs.size()));
  set.anchors =
      Eigen::MatrixXd(static_cast<Eigen::Index>(keys.size()), lie.system().n);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    set.keys.row(static_cast<Eigen::Index>(i)) = keys[i].transpose();
    set.values.row(static_cast<Eigen::Index>(i)) = values[i].transpose();
    set.anchors.row(static_cast<Eigen::Index>(i)) = anchors[i].transpose();
  }
  return set;
}

/// Key duplicates (within fiber_tol, max-norm) must carry matching values.
void check_key_consistency(const LieTable& lie, const BuildSpec& spec, const SampleSet& set,
                           const CanonOptions& options) {
  const int count = static_cast<int>(set.keys.rows());
  for (int i = 0; i < count; ++i) {
    for (int j = i + 1; j < count; ++j) {
      const double dz =
          (set.keys.row(i) - set.keys.row(j)).template lpNorm<Eigen::Infinity>();
      if (dz > options.analysis.fiber_tol) continue;
      const double gap = (set.values.row(i) - set.values.row(j)).norm();
      const double tol = options.analysis.a_tol;
      if (gap <= tol) continue;
      RefusalWitness witness;
      witness.pair.xa = set.anchors.row(i).transpose();
      witness.pair.xb = set.anchors.row(j).transpose();
      witness.pair.order = spec.key_order;
      witness.pair.dh = (set.keys.row(i) - set.keys.row(j)).norm();
      witness.pair.separation = (witness.pair.xa - witness.pair.xb).norm();
      witness.pair.value_gap = gap;
      witness.gap = gap;
      witness.tolerance = tol;
      witness.order = spec.index;
      ((void)lie);
      std::ostringstream msg;
      msg << "factorization refused: key map H_" << spec.key_order
          << " maps two sampled states together but the data differ by " << gap;
      throw PropertyARefusal(msg.str(), std::move(witness));
    }
  }
}

struct LipschitzEstimate {
  double table_l = 0.0;      // all-pairs sup ratio (consistency bound)
  double reported_l = 0.0;   // pairs >= pair_floor plus probe refinement
  bool capped = false;
};

/// Shrinking-pair probe: repeatedly bisects the worst pair in state space to
/// distinguish a genuine Hoelder blowup (ratio keeps doubling) from a sup
/// that saturates at a finite value.
double probe_pair(const LieTable& lie, const BuildSpec& spec, Eigen::VectorXd xa,
                  Eigen::VectorXd xb, double start_ratio, double cap) {
  const ObservabilityMap key_map = lie.observability_map(spec.key_order);
  double best = start_ratio;
  for (int step = 0; step < 60; ++step) {
    if (best > cap) break;
    if ((xa - xb).norm() < 1e-12) break;
    const Eigen::VectorXd xm = 0.5 * (xa + xb);
    double ra = -1.0, rb = -1.0;
    try {
      const Eigen::VectorXd km = key_map.value(xm);
      const Eigen::VectorXd vm = eval_exprs(spec.value_exprs, xm);
      const Eigen::VectorXd ka = key_map.value(xa);
      const Eigen::VectorXd va = eval_exprs(spec.value_exprs, xa);
      const Eigen::VectorXd kb = key_map.value(xb);
      const Eigen::VectorXd vb = eval_exprs(spec.value_exprs, xb);
      const double da = (ka - km).norm();
      const double db = (kb - km).norm();
      if (da > 1e-300) ra = (va - vm).template lpNorm<Eigen::Infinity>() / da;
      if (db > 1e-300) rb = (vb - vm).template lpNorm<Eigen::Infinity>() / db;
    } catch (const DomainError&) {
      break;
    }
    if (ra < 0.0 && rb < 0.0) break;
    if (ra >= rb) {
      xb = xm;
      best = std::max(best, ra);
    } else {
      xa = xm;
      best = std::max(best, rb);
    }
  }
  return best;
}

LipschitzEstimate estimate_lipschitz(const LieTable& lie, const BuildSpec& spec,
                                     const SampleSet& set, const CanonOptions& options) {
  LipschitzEstimate est;
  const int count = static_cast<int>(set.keys.rows());
  struct Worst {
    double ratio;
    int i, j;
  };
  std::vector<Worst> worst;
  for (int i = 0; i < count; ++i) {
    for (int j = i + 1; j < count; ++j) {
      const double dz = (set.keys.row(i) - set.keys.row(j)).norm();
      if (dz <= 0.0) continue;
      const double dv = (set.values.row(i) - set.values.row(j)).template lpNorm<Eigen::Infinity>();
      const double ratio = dv / dz;
      est.table_l = std::max(est.table_l, ratio);
      if (dz < options.pair_floor) continue;
      est.reported_l = std::max(est.reported_l, ratio);
      if (worst.size() < 8) {
        worst.push_back({ratio, i, j});
        std::sort(worst.begin(), worst.end(),
                  [](const Worst& a, const Worst& b) { return a.ratio > b.ratio; });
      } else if (ratio > worst.back().ratio) {
        worst.back() = {ratio, i, j};
        std::sort(worst.begin(), worst.end(),
                  [](const Worst& a, const Worst& b) { return a.ratio > b.ratio; });
      }
    }
  }
  for (const Worst& w : worst) {
    const double refined =
        probe_pair(lie, spec, set.anchors.row(w.i).transpose(),
                   set.anchors.row(w.j).transpose(), w.ratio, options.l_cap);
    est.reported_l = std::max(est.reported_l, refined);
    if (est.reported_l > options.l_cap) break;
  }
  est.capped = est.reported_l > options.l_cap;
  return est;
}

FormFunction build_factored(const LieTable& lie, const BuildSpec& spec, const SampleBox& box,
                            const CanonOptions& options) {
  SampleSet set = collect_samples(lie, spec, box);
  check_key_consistency(lie, spec, set, options);
  const LipschitzEstimate est = estimate_lipschitz(lie, spec, set, options);

  FormFunction fn;
  fn.role = spec.role;
  fn.index = spec.index;
  fn.key_order = spec.key_order;
  fn.l_estimate = est.reported_l;
  fn.lipschitz_ok = !est.capped;
  if (est.capped) {
    fn.table = SampledFunction(std::move(set.keys), std::move(set.values),
                               ExtensionMode::NearestSample, est.table_l);
  } else {
    const double l = std::max(est.table_l, est.reported_l) * (1.0 + 1e-12);
    fn.table = SampledFunction(std::move(set.keys), std::move(set.values),
                               ExtensionMode::McShane, l);
  }
  fn.table.set_anchors(std::move(set.anchors));
  return fn;
}

}  // namespace

FormFunction build_phi(const LieTable& lie, int d_z, const SampleBox& box,
                       const CanonOptions& options, bool* order_warning) {
  if (d_z < 1) throw ConfigError("build_phi: d_z must be >= 1");
  if (order_warning) {
    // Weak-order evidence: the sampled Jacobian of H_dz should reach rank n
    // somewhere; a map that is nowhere an immersion cannot separate states.
    const RankReport report = rank_profile(lie, d_z, box, options.analysis);
    *order_warning = true;
    for (const RankSample& s : report.samples) {
      if (s.defined && s.rank >= std::min(d_z, lie.system().n)) {
        *order_warning = false;
        break;
      }
    }
  }
  BuildSpec spec;
  spec.role = FormFunction::Role::Phi;
  spec.index = d_z;
  spec.key_order = d_z;
  spec.value_exprs = {lie.lf_h(d_z)};
  return build_factored(lie, spec, box, options);
}

FormFunction build_g(const LieTable& lie, int i, int n_t, int d_z, const SampleBox& box,
                     const CanonOptions& options) {
  if (i < 1 || i > d_z) throw ConfigError("build_g: index out of range");
  BuildSpec spec;
  spec.role = FormFunction::Role::G;
  spec.index = i;
  spec.key_order = i <= n_t ? i : d_z;
  for (int j = 0; j < lie.system().m; ++j) {
    spec.value_exprs.push_back(lie.lg_lf_h(i - 1, j));
  }
  if (i <= n_t) {
    const PropertyAReport rep = property_a_check(lie, i, box, options.analysis);
    if (!rep.pass) {
      RefusalWitness witness;
      witness.pair = *rep.witness;
      witness.gap = rep.max_gap;
      witness.tolerance = rep.tolerance;
      witness.order = i;
      std::ostringstream msg;
      msg << "factorization refused for g" << i << ": fiber pair of H_" << i
          << " carries a data gap " << rep.max_gap << " (tolerance " << rep.tolerance << ")";
      throw PropertyARefusal(msg.str(), std::move(witness));
    }
  }
  return build_factored(lie, spec, box, options);
}

TriangularForm assemble_triangular_form(const LieTable& lie, int n_t, int d_z,
                                        const SampleBox& box, const CanonOptions& options) {
  if (d_z < n_t + 1) throw ConfigError("assemble: d_z must be at least n_t + 1");
  TriangularForm form;
  form.d_z = d_z;
  form.n_t = n_t;
  form.box = box;
  form.system_hash = lie.system().hash();
  form.system_name = lie.system().name;

  // Injectivity evidence for the functions keyed on the full H_dz.
  form.injectivity_warning =
      !injectivity_scan(lie, d_z, box, options.analysis.delta_min, options.analysis).empty();

  for (int i = 1; i <= d_z; ++i) {
    form.g.push_back(build_g(lie, i, n_t, d_z, box, options));
  }
  form.phi = build_phi(lie, d_z, box, options, &form.order_warning);

  const Eigen::MatrixXd& keys = form.phi.table.keys();
  form.image_lower = keys.colwise().minCoeff().transpose();
  form.image_upper = keys.colwise().maxCoeff().transpose();
  return form;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vector_from_json(const nlohmann::json& a) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  return v;
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < m.rows(); ++i) rows.push_back(vector_to_json(m.row(i).transpose()));
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& rows) {
  if (rows.empty()) return Eigen::MatrixXd(0, 0);
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = vector_from_json(rows[i]).transpose();
  return m;
}

nlohmann::json function_to_json(const FormFunction& fn) {
  nlohmann::json j;
  j["name"] = fn.name();
  j["role"] = fn.role == FormFunction::Role::Phi ? "phi" : "g";
  j["index"] = fn.index;
  j["key_order"] = fn.key_order;
  j["lipschitz_ok"] = fn.lipschitz_ok;
  j["l_estimate"] = fn.l_estimate;
  j["mode"] = fn.table.mode() == ExtensionMode::McShane ? "mcshane" : "nearest";
  j["lipschitz"] = fn.table.lipschitz();
  j["keys"] = matrix_to_json(fn.table.keys());
  j["values"] = matrix_to_json(fn.table.values());
  if (fn.table.anchors()) j["anchors"] = matrix_to_json(*fn.table.anchors());
  return j;
}

FormFunction function_from_json(const nlohmann::json& j) {
  FormFunction fn;
  fn.role = j.at("role").get<std::string>() == "phi" ? FormFunction::Role::Phi
                                                     : FormFunction::Role::G;
  fn.index = j.at("index").get<int>();
  fn.key_order = j.at("key_order").get<int>();
  fn.lipschitz_ok = j.at("lipschitz_ok").get<bool>();
  fn.l_estimate = j.at("l_estimate").get<double>();
  const ExtensionMode mode = j.at("mode").get<std::string>() == "mcshane"
                                 ? ExtensionMode::McShane
                                 : ExtensionMode::NearestSample;
  fn.table = SampledFunction(matrix_from_json(j.at("keys")), matrix_from_json(j.at("values")),
                             mode, j.at("lipschitz").get<double>());
  if (j.contains("anchors")) fn.table.set_anchors(matrix_from_json(j.at("anchors")));
  return fn;
}

}  // namespace

nlohmann::json form_to_json(const TriangularForm& form) {
  nlohmann::json j;
  j["version"] = 1;
  j["d_z"] = form.d_z;
  j["n_t"] = form.n_t;
  j["system_name"] = form.system_name;
  j["system_hash"] = form.system_hash;
  j["config_hash"] = form.config_hash;
  j["injectivity_warning"] = form.injectivity_warning;
  j["order_warning"] = form.order_warning;
  j["box"]["lower"] = vector_to_json(form.box.lower);
  j["box"]["upper"] = vector_to_json(form.box.upper);
  j["box"]["grid"] = form.box.grid_counts;
  j["box"]["random_samples"] = form.box.random_count;
  j["box"]["seed"] = form.box.seed;
  j["image"]["lower"] = vector_to_json(form.image_lower);
  j["image"]["upper"] = vector_to_json(form.image_upper);
  nlohmann::json fns = nlohmann::json::array();
  for (const FormFunction& fn : form.g) fns.push_back(function_to_json(fn));
  j["g"] = fns;
  j["phi"] = function_to_json(form.phi);
  return j;
}

TriangularForm form_from_json(const nlohmann::json& j) {
  TriangularForm form;
  if (j.at("version").get<int>() != 1) throw ConfigError("unsupported form file version");
  form.d_z = j.at("d_z").get<int>();
  form.n_t = j.at("n_t").get<int>();
  form.system_name = j.at("system_name").get<std::string>();
  form.system_hash = j.at("system_hash").get<std::uint64_t>();
  form.config_hash = j.at("config_hash").get<std::uint64_t>();
  form.injectivity_warning = j.at("injectivity_warning").get<bool>();
  form.order_warning = j.at("order_warning").get<bool>();
  form.box.lower = vector_from_json(j.at("box").at("lower"));
  form.box.upper = vector_from_json(j.at("box").at("upper"));
  form.box.grid_counts = j.at("box").at("grid").get<std::vector<int>>();
  form.box.random_count = j.at("box").at("random_samples").get<int>();
  form.box.seed = j.at("box").at("seed").get<std::uint64_t>();
  form.image_lower = vector_from_json(j.at("image").at("lower"));
  form.image_upper = vector_from_json(j.at("image").at("upper"));
  for (const auto& fj : j.at("g")) form.g.push_back(function_from_json(fj));
  form.phi = function_from_json(j.at("phi"));
  if (static_cast<int>(form.g.size()) != form.d_z) {
    throw ConfigError("form file: g function count does not match d_z");
  }
  return form;
}

// ---------------------------------------------------------------------------
// Evaluation

FormEvaluator::FormEvaluator(const TriangularForm& form, const LieTable* lie,
                             const CanonOptions& options)
    : form_(&form), lie_(lie), options_(options) {
  if (lie_ && lie_->system().hash() != form.system_hash) {
    throw ConfigError("form file was built from a different system definition");
  }
}

std::optional<Eigen::VectorXd> FormEvaluator::solve_key(int key_order,
                                                        const Eigen::VectorXd& zk,
                                                        const SampledFunction& table) {
  auto it = solvers_.find(key_order);
  if (it == solvers_.end()) {
    KeySolver solver{lie_->observability_map(key_order), Eigen::VectorXd(), false};
    it = solvers_.emplace(key_order, std::move(solver)).first;
  }
  KeySolver& solver = it->second;

  auto residual = [&](const Eigen::VectorXd& x) { return solver.map.value(x) - zk; };
  auto jacobian = [&](const Eigen::VectorXd& x) { return solver.map.jacobian_at(x); };
  LeastSquaresOptions lm = lm_options_for(form_->box, options_);
  lm.max_iterations = 60;

  std::vector<Eigen::VectorXd> starts;
  if (solver.has_last) starts.push_back(solver.last_x);
  if (table.anchors()) {
    starts.push_back(table.anchors()->row(table.nearest(zk)).transpose());
  }
  for (const Eigen::VectorXd& x0 : starts) {
    const LeastSquaresResult lsr = levenberg_marquardt(residual, jacobian, x0, lm);
    if (!lsr.converged || !lsr.x.allFinite()) continue;
    solver.last_x = lsr.x;
    solver.has_last = true;
    return lsr.x;
  }
  return std::nullopt;
}

Eigen::VectorXd FormEvaluator::eval_function(const FormFunction& fn, const Eigen::VectorXd& z) {
  const Eigen::VectorXd zk = z.head(fn.table.key_dim());
  if (fn.table.is_constant(0.0)) {
    return fn.table.constant_value();
  }
  if (lie_) {
    if (auto x = solve_key(fn.key_order, zk, fn.table)) {
      if (fn.role == FormFunction::Role::Phi) {
        Eigen::VectorXd out(1);
        out[0] = evaluate(lie_->lf_h(fn.index), as_span(*x));
        return out;
      }
      Eigen::VectorXd out(lie_->system().m);
      for (int j = 0; j < lie_->system().m; ++j) {
        out[j] = evaluate(lie_->lg_lf_h(fn.index - 1, j), as_span(*x));
      }
      return out;
    }
    ++fallbacks_;
  }
  return fn.table(zk);
}

Eigen::VectorXd FormEvaluator::g(int i, const Eigen::VectorXd& z) {
  if (i < 1 || i > form_->d_z) throw ConfigError("FormEvaluator::g: index out of range");
  return eval_function(form_->g[static_cast<std::size_t>(i - 1)], z);
}

double FormEvaluator::phi(const Eigen::VectorXd& z) {
  return eval_function(form_->phi, z)[0];
}

Eigen::VectorXd FormEvaluator::rhs(const Eigen::VectorXd& z, const Eigen::VectorXd& u) {
  Eigen::VectorXd out(form_->d_z);
  for (int i = 1; i <= form_->d_z; ++i) {
    double drift = i < form_->d_z ? z[i] : phi(z);
    out[i - 1] = drift + g(i, z).dot(u);
  }
  return out;
}

LeftInverseResult FormEvaluator::reconstruct(const Eigen::VectorXd& z) {
  if (!lie_) throw ConfigError("reconstruct needs the system definition");
  auto it = solvers_.find(form_->d_z);
  if (it == solvers_.end()) {
    KeySolver solver{lie_->observability_map(form_->d_z), Eigen::VectorXd(), false};
    it = solvers_.emplace(form_->d_z, std::move(solver)).first;
  }
  std::vector<Eigen::VectorXd> guesses;
  if (has_reconstruct_) guesses.push_back(last_reconstruct_);
  if (form_->phi.table.anchors()) {
    guesses.push_back(form_->phi.table.anchors()->row(form_->phi.table.nearest(z)).transpose());
  }
  LeftInverseResult result = left_inverse(it->second.map, z, form_->box, options_, &guesses);
  if (result.status == LeftInverseStatus::NoConvergence) {
    result = left_inverse(it->second.map, z, form_->box, options_);  // full multistart
  }
  if (result.status == LeftInverseStatus::Ok) {
    last_reconstruct_ = result.x;
    has_reconstruct_ = true;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Residual check

ResidualReport residual_check(FormEvaluator& evaluator, const LieTable& lie,
                              const Eigen::VectorXd& x0, const InputSignal& u, double T,
                              double dt) {
  const TriangularForm& form = evaluator.form();
  const ControlAffineSystem& sys = lie.system();
  const ObservabilityMap map = lie.observability_map(form.d_z);
  ResidualReport report;
  report.per_component = Eigen::VectorXd::Zero(form.d_z);

  auto xdot = [&](double t, const Eigen::VectorXd& x) { return sys.eval_rhs(x, u(t)); };

  const int steps = static_cast<int>(std::llround(T / dt));
  Eigen::VectorXd x = x0;
  for (int k = 0; k <= steps; ++k) {
    const double t = k * dt;
    if (!form.box.contains(x)) {
      report.left_box = true;
      break;
    }
    const Eigen::VectorXd uv = u(t);
    const Eigen::VectorXd z = map.value(x);
    const Eigen::VectorXd zdot = map.jacobian_at(x) * sys.eval_rhs(x, uv);
    const Eigen::VectorXd rhs = evaluator.rhs(z, uv);
    report.per_component = report.per_component.cwiseMax((zdot - rhs).cwiseAbs());
    ++report.steps;
    if (k == steps) break;

    const Eigen::VectorXd k1 = xdot(t, x);
    const Eigen::VectorXd k2 = xdot(t + 0.5 * dt, x + 0.5 * dt * k1);
    const Eigen::VectorXd k3 = xdot(t + 0.5 * dt, x + 0.5 * dt * k2);
    const Eigen::VectorXd k4 = xdot(t + dt, x + dt * k3);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  report.max_residual = report.per_component.size() > 0 ? report.per_component.maxCoeff() : 0.0;
  return report;
}

}  // namespace obsform
