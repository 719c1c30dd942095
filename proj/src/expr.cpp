#include "obsform/expr.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <unordered_map>
#include <unordered_set>

#include "obsform/errors.hpp"

namespace obsform {

namespace {

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

std::uint64_t node_hash(const ExprNode& n) {
  std::uint64_t h = static_cast<std::uint64_t>(n.kind);
  switch (n.kind) {
    case NodeKind::Constant:
      h = mix(h, std::bit_cast<std::uint64_t>(n.value));
      break;
    case NodeKind::StateVar:
    case NodeKind::InputVar:
      h = mix(h, static_cast<std::uint64_t>(n.index));
      break;
    case NodeKind::Pow:
      h = mix(h, static_cast<std::uint64_t>(n.exponent.num));
      h = mix(h, static_cast<std::uint64_t>(n.exponent.den));
      h = mix(h, reinterpret_cast<std::uintptr_t>(n.a.raw()));
      break;
    case NodeKind::Call:
      h = mix(h, static_cast<std::uint64_t>(n.func));
      h = mix(h, reinterpret_cast<std::uintptr_t>(n.a.raw()));
      break;
    default:
      h = mix(h, reinterpret_cast<std::uintptr_t>(n.a.raw()));
      h = mix(h, reinterpret_cast<std::uintptr_t>(n.b.raw()));
      break;
  }
  return h;
}

bool node_equal(const ExprNode& x, const ExprNode& y) {
  if (x.kind != y.kind) return false;
  switch (x.kind) {
    case NodeKind::Constant:
      return std::bit_cast<std::uint64_t>(x.value) == std::bit_cast<std::uint64_t>(y.value);
    case NodeKind::StateVar:
    case NodeKind::InputVar:
      return x.index == y.index;
    case NodeKind::Pow:
      return x.exponent == y.exponent && x.a == y.a;
    case NodeKind::Call:
      return x.func == y.func && x.a == y.a;
    default:
      return x.a == y.a && x.b == y.b;
  }
}

struct NodeHashOp {
  std::size_t operator()(const std::shared_ptr<const ExprNode>& p) const { return p->hash; }
};
struct NodeEqOp {
  bool operator()(const std::shared_ptr<const ExprNode>& a,
                  const std::shared_ptr<const ExprNode>& b) const {
    return node_equal(*a, *b);
  }
};

// Process-lifetime intern table. Children are interned first, so structural
// equality reduces to handle equality.
std::unordered_set<std::shared_ptr<const ExprNode>, NodeHashOp, NodeEqOp>& intern_table() {
  static auto* table =
      new std::unordered_set<std::shared_ptr<const ExprNode>, NodeHashOp, NodeEqOp>();
  return *table;
}
std::mutex& intern_mutex() {
  static auto* m = new std::mutex();
  return *m;
}

}  // namespace

Expr Expr::intern(ExprNode&& proto) {
  proto.hash = node_hash(proto);
  auto candidate = std::make_shared<const ExprNode>(std::move(proto));
  std::lock_guard<std::mutex> lock(intern_mutex());
  auto [it, inserted] = intern_table().insert(candidate);
  return Expr(*it);
}

Expr Expr::constant(double value) {
  ExprNode n;
  n.kind = NodeKind::Constant;
  n.value = value;
  return intern(std::move(n));
}

Expr Expr::state(int index) {
  ExprNode n;
  n.kind = NodeKind::StateVar;
  n.index = index;
  return intern(std::move(n));
}

Expr Expr::input(int index) {
  ExprNode n;
  n.kind = NodeKind::InputVar;
  n.index = index;
  return intern(std::move(n));
}

Expr Expr::add(const Expr& a, const Expr& b) {
  ExprNode n;
  n.kind = NodeKind::Add;
  n.a = a;
  n.b = b;
  return intern(std::move(n));
}

Expr Expr::sub(const Expr& a, const Expr& b) {
  ExprNode n;
  n.kind = NodeKind::Sub;
  n.a = a;
  n.b = b;
  return intern(std::move(n));
}

Expr Expr::mul(const Expr& a, const Expr& b) {
  ExprNode n;
  n.kind = NodeKind::Mul;
  n.a = a;
  n.b = b;
  return intern(std::move(n));
}

Expr Expr::div(const Expr& a, const Expr& b) {
  ExprNode n;
  n.kind = NodeKind::Div;
  n.a = a;
  n.b = b;
  return intern(std::move(n));
}

Expr Expr::pow(const Expr& base, Rational exponent) {
  ExprNode n;
  n.kind = NodeKind::Pow;
  n.a = base;
  n.exponent = exponent;
  return intern(std::move(n));
}

Expr Expr::call(FuncId f, const Expr& arg) {
  ExprNode n;
  n.kind = NodeKind::Call;
  n.func = f;
  n.a = arg;
  return intern(std::move(n));
}

bool Expr::is_constant() const { return valid() && node().kind == NodeKind::Constant; }
bool Expr::is_constant(double value) const {
  return is_constant() && node().value == value;
}
double Expr::constant_value() const { return node().value; }

int structural_compare(const Expr& a, const Expr& b) {
  if (a == b) return 0;
  const ExprNode& x = a.node();
  const ExprNode& y = b.node();
  if (x.kind != y.kind) return x.kind < y.kind ? -1 : 1;
  switch (x.kind) {
    case NodeKind::Constant:
      if (x.value != y.value) return x.value < y.value ? -1 : 1;
      return 0;
    case NodeKind::StateVar:
    case NodeKind::InputVar:
      return x.index < y.index ? -1 : 1;
    case NodeKind::Pow: {
      const int c = structural_compare(x.a, y.a);
      if (c != 0) return c;
      const double ex = x.exponent.to_double();
      const double ey = y.exponent.to_double();
      if (ex != ey) return ex < ey ? -1 : 1;
      return 0;
    }
    case NodeKind::Call: {
      if (x.func != y.func) return x.func < y.func ? -1 : 1;
      return structural_compare(x.a, y.a);
    }
    default: {
      const int c = structural_compare(x.a, y.a);
      if (c != 0) return c;
      return structural_compare(x.b, y.b);
    }
  }
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

double pow_integer(double base, long long p) {
  if (p == 0) return 1.0;
  bool negative = p < 0;
  unsigned long long k = negative ? static_cast<unsigned long long>(-p)
                                  : static_cast<unsigned long long>(p);
  double acc = 1.0, b = base;
  while (k != 0) {
    if (k & 1ull) acc *= b;
    b *= b;
    k >>= 1;
  }
  if (negative) {
    if (acc == 0.0) throw DomainError("zero raised to a negative power");
    return 1.0 / acc;
  }
  return acc;
}

double pow_rational(double base, const Rational& r) {
  if (r.den == 1) return pow_integer(base, r.num);
  double sign = 1.0;
  double b = base;
  if (base < 0.0) {
    if (r.den % 2 == 0) throw DomainError("even root of a negative base");
    b = -base;
    if (r.num % 2 != 0) sign = -1.0;
  }
  if (b == 0.0) {
    if (r.num < 0) throw DomainError("zero raised to a negative power");
    return 0.0;
  }
  double root;
  switch (r.den) {
    case 2: root = std::sqrt(b); break;
    case 3: root = std::cbrt(b); break;
    default: root = std::pow(b, 1.0 / static_cast<double>(r.den)); break;
  }
  return sign * pow_integer(root, r.num);
}

}  // namespace

double evaluate(const Expr& e, std::span<const double> states,
                std::span<const double> inputs) {
  const ExprNode& n = e.node();
  switch (n.kind) {
    case NodeKind::Constant:
      return n.value;
    case NodeKind::StateVar:
      if (n.index < 0 || n.index >= static_cast<int>(states.size()))
        throw DomainError("state index out of range");
      return states[static_cast<std::size_t>(n.index)];
    case NodeKind::InputVar:
      if (n.index < 0 || n.index >= static_cast<int>(inputs.size()))
        throw DomainError("input index out of range");
      return inputs[static_cast<std::size_t>(n.index)];
    case NodeKind::Add:
      return evaluate(n.a, states, inputs) + evaluate(n.b, states, inputs);
    case NodeKind::Sub:
      return evaluate(n.a, states, inputs) - evaluate(n.b, states, inputs);
    case NodeKind::Mul:
      return evaluate(n.a, states, inputs) * evaluate(n.b, states, inputs);
    case NodeKind::Div: {
      const double num = evaluate(n.a, states, inputs);
      const double den = evaluate(n.b, states, inputs);
      if (den == 0.0) throw DomainError("division by zero");
      return num / den;
    }
    case NodeKind::Pow:
      return pow_rational(evaluate(n.a, states, inputs), n.exponent);
    case NodeKind::Call: {
      const double v = evaluate(n.a, states, inputs);
      switch (n.func) {
        case FuncId::Sin: return std::sin(v);
        case FuncId::Cos: return std::cos(v);
        case FuncId::Exp: return std::exp(v);
        case FuncId::Log:
          if (v <= 0.0) throw DomainError("log of a non-positive value");
          return std::log(v);
        case FuncId::Abs: return std::fabs(v);
      }
      throw DomainError("unknown function");
    }
  }
  throw DomainError("unknown node kind");
}

double min_fractional_pow_base(const Expr& e, std::span<const double> states,
                               std::span<const double> inputs) {
  const ExprNode& n = e.node();
  double best = std::numeric_limits<double>::infinity();
  switch (n.kind) {
    case NodeKind::Constant:
    case NodeKind::StateVar:
    case NodeKind::InputVar:
      return best;
    case NodeKind::Pow: {
      if (!n.exponent.is_integer() || n.exponent.num < 0) {
        best = std::fabs(evaluate(n.a, states, inputs));
      }
      return std::min(best, min_fractional_pow_base(n.a, states, inputs));
    }
    case NodeKind::Call:
      if (n.func == FuncId::Abs || n.func == FuncId::Log) {
        best = std::fabs(evaluate(n.a, states, inputs));
      }
      return std::min(best, min_fractional_pow_base(n.a, states, inputs));
    case NodeKind::Div:
      best = std::fabs(evaluate(n.b, states, inputs));
      [[fallthrough]];
    default:
      best = std::min(best, min_fractional_pow_base(n.a, states, inputs));
      best = std::min(best, min_fractional_pow_base(n.b, states, inputs));
      return best;
  }
}

int max_state_index(const Expr& e) {
  const ExprNode& n = e.node();
  switch (n.kind) {
    case NodeKind::Constant:
    case NodeKind::InputVar:
      return -1;
    case NodeKind::StateVar:
      return n.index;
    case NodeKind::Pow:
    case NodeKind::Call:
      return max_state_index(n.a);
    default:
      return std::max(max_state_index(n.a), max_state_index(n.b));
  }
}

bool references_input(const Expr& e) {
  const ExprNode& n = e.node();
  switch (n.kind) {
    case NodeKind::Constant:
    case NodeKind::StateVar:
      return false;
    case NodeKind::InputVar:
      return true;
    case NodeKind::Pow:
    case NodeKind::Call:
      return references_input(n.a);
    default:
      return references_input(n.a) || references_input(n.b);
  }
}

// ---------------------------------------------------------------------------
// Differentiation

Expr differentiate_raw(const Expr& e, int var) {
  const ExprNode& n = e.node();
  const Expr zero = Expr::constant(0.0);
  switch (n.kind) {
    case NodeKind::Constant:
    case NodeKind::InputVar:
      return zero;
    case NodeKind::StateVar:
      return n.index == var ? Expr::constant(1.0) : zero;
    case NodeKind::Add:
      return Expr::add(differentiate_raw(n.a, var), differentiate_raw(n.b, var));
    case NodeKind::Sub:
      return Expr::sub(differentiate_raw(n.a, var), differentiate_raw(n.b, var));
    case NodeKind::Mul:
      return Expr::add(Expr::mul(differentiate_raw(n.a, var), n.b),
                       Expr::mul(n.a, differentiate_raw(n.b, var)));
    case NodeKind::Div:
      // (a/b)' = (a' b - a b') / b^2
      return Expr::div(Expr::sub(Expr::mul(differentiate_raw(n.a, var), n.b),
                                 Expr::mul(n.a, differentiate_raw(n.b, var))),
                       Expr::pow(n.b, Rational(2)));
    case NodeKind::Pow: {
      // d/dx u^(p/q) = (p/q) u^(p/q - 1) u'
      if (n.exponent.is_zero()) return zero;
      const Rational down = n.exponent - Rational(1);
      Expr factor = Expr::constant(n.exponent.to_double());
      Expr powered = down.is_one() ? n.a : Expr::pow(n.a, down);
      return Expr::mul(Expr::mul(factor, powered), differentiate_raw(n.a, var));
    }
    case NodeKind::Call: {
      const Expr inner = differentiate_raw(n.a, var);
      switch (n.func) {
        case FuncId::Sin:
          return Expr::mul(Expr::call(FuncId::Cos, n.a), inner);
        case FuncId::Cos:
          return Expr::mul(Expr::constant(-1.0),
                           Expr::mul(Expr::call(FuncId::Sin, n.a), inner));
        case FuncId::Exp:
          return Expr::mul(Expr::call(FuncId::Exp, n.a), inner);
        case FuncId::Log:
          return Expr::div(inner, n.a);
        case FuncId::Abs:
          // d|u| = u / |u| * u'  (almost everywhere)
          return Expr::mul(Expr::div(n.a, Expr::call(FuncId::Abs, n.a)), inner);
      }
      return zero;
    }
  }
  return zero;
}

Expr differentiate(const Expr& e, int var) { return simplify(differentiate_raw(e, var)); }

// ---------------------------------------------------------------------------
// Simplification

namespace {

struct SumTerm {
  double coeff = 1.0;
  Expr term;  // invalid handle = pure constant contribution
};

struct ProductFactor {
  Expr base;
  Rational exponent;
};

class Simplifier {
public:
  Expr run(const Expr& e) {
    if (!e.valid()) return e;
    auto it = memo_.find(e.raw());
    if (it != memo_.end()) return it->second;
    Expr out = rewrite(e);
    memo_.emplace(e.raw(), out);
    return out;
  }

private:
  std::unordered_map<const ExprNode*, Expr> memo_;

  static bool fold_constant(const Expr& e, double* out) {
    if (!e.is_constant()) return false;
    *out = e.constant_value();
    return true;
  }

  Expr rewrite(const Expr& e) {
    const ExprNode& n = e.node();
    switch (n.kind) {
      case NodeKind::Constant:
      case NodeKind::StateVar:
      case NodeKind::InputVar:
        return e;
      case NodeKind::Add:
      case NodeKind::Sub:
        return rebuild_sum(e);
      case NodeKind::Mul:
      case NodeKind::Div:
        return rebuild_product(e);
      case NodeKind::Pow: {
        Expr base = run(n.a);
        if (n.exponent.is_zero()) return Expr::constant(1.0);
        if (n.exponent.is_one()) return base;
        if (base.is_constant()) {
          try {
            return Expr::constant(pow_rational(base.constant_value(), n.exponent));
          } catch (const DomainError&) {
            // leave unfolded; evaluation reports the domain error
          }
        }
        return Expr::pow(base, n.exponent);
      }
      case NodeKind::Call: {
        Expr arg = run(n.a);
        if (arg.is_constant()) {
          try {
            const double xs[1] = {0.0};
            return Expr::constant(evaluate(Expr::call(n.func, arg), xs));
          } catch (const DomainError&) {
          }
        }
        return Expr::call(n.func, arg);
      }
    }
    return e;
  }

  // --- sums ---------------------------------------------------------------

  void flatten_sum(const Expr& e, double sign, double* constant,
                   std::vector<SumTerm>* terms) {
    const ExprNode& n = e.node();
    if (n.kind == NodeKind::Add || n.kind == NodeKind::Sub) {
      flatten_sum(n.a, sign, constant, terms);
      flatten_sum(n.b, n.kind == NodeKind::Sub ? -sign : sign, constant, terms);
      return;
    }
    Expr s = run(e);
    const ExprNode& m = s.node();
    if (m.kind == NodeKind::Add || m.kind == NodeKind::Sub) {
      // child simplification may expose another sum level
      flatten_sum_of_normal(s, sign, constant, terms);
      return;
    }
    push_term(s, sign, constant, terms);
  }

  void flatten_sum_of_normal(const Expr& e, double sign, double* constant,
                             std::vector<SumTerm>* terms) {
    const ExprNode& n = e.node();
    if (n.kind == NodeKind::Add || n.kind == NodeKind::Sub) {
      flatten_sum_of_normal(n.a, sign, constant, terms);
      flatten_sum_of_normal(n.b, n.kind == NodeKind::Sub ? -sign : sign, constant, terms);
      return;
    }
    push_term(e, sign, constant, terms);
  }

  void push_term(const Expr& simplified, double sign, double* constant,
                 std::vector<SumTerm>* terms) {
    double c;
    if (fold_constant(simplified, &c)) {
      *constant += sign * c;
      return;
    }
    auto [coeff, rest] = split_coefficient(simplified);
    coeff *= sign;
    for (auto& t : *terms) {
      if (t.term == rest) {
        t.coeff += coeff;
        return;
      }
    }
    terms->push_back({coeff, rest});
  }

  // Splits a leading constant factor off a normal-form product.
  static std::pair<double, Expr> split_coefficient(const Expr& e) {
    const ExprNode& n = e.node();
    if (n.kind == NodeKind::Mul && n.a.is_constant()) {
      return {n.a.constant_value(), n.b};
    }
    // left-associated chains keep the constant at the deepest left leaf
    if (n.kind == NodeKind::Mul) {
      auto [c, rest] = split_coefficient(n.a);
      if (c != 1.0) return {c, rest.valid() ? Expr::mul(rest, n.b) : n.b};
    }
    return {1.0, e};
  }

  Expr rebuild_sum(const Expr& e) {
    double constant = 0.0;
    std::vector<SumTerm> terms;
    flatten_sum(e, 1.0, &constant, &terms);

    std::erase_if(terms, [](const SumTerm& t) { return t.coeff == 0.0; });
    std::sort(terms.begin(), terms.end(), [](const SumTerm& a, const SumTerm& b) {
      return structural_compare(a.term, b.term) < 0;
    });

    Expr acc;
    auto apply_coeff = [](double c, const Expr& t) {
      if (c == 1.0) return t;
      return Expr::mul(Expr::constant(c), t);
    };
    // positive terms, then a positive constant, then subtractions
    for (const auto& t : terms) {
      if (t.coeff <= 0.0) continue;
      Expr piece = apply_coeff(t.coeff, t.term);
      acc = acc.valid() ? Expr::add(acc, piece) : piece;
    }
    if (constant > 0.0) {
      Expr piece = Expr::constant(constant);
      acc = acc.valid() ? Expr::add(acc, piece) : piece;
    }
    for (const auto& t : terms) {
      if (t.coeff >= 0.0) continue;
      if (acc.valid()) {
        acc = Expr::sub(acc, apply_coeff(-t.coeff, t.term));
      } else {
        acc = apply_coeff(t.coeff, t.term);  // leading negative keeps its sign
      }
    }
    if (constant < 0.0) {
      acc = acc.valid() ? Expr::sub(acc, Expr::constant(-constant))
                        : Expr::constant(constant);
    }
    return acc.valid() ? acc : Expr::constant(0.0);
  }

  // --- products -------------------------------------------------------------

  // Returns false when the product contains an unresolvable division
  // (non-constant denominator); `tail` then carries the denominator chain.
  void flatten_product(const Expr& e, double* coeff, std::vector<ProductFactor>* factors,
                       std::vector<Expr>* denominators) {
    const ExprNode& n = e.node();
    if (n.kind == NodeKind::Mul) {
      flatten_product(n.a, coeff, factors, denominators);
      flatten_product(n.b, coeff, factors, denominators);
      return;
    }
    if (n.kind == NodeKind::Div) {
      flatten_product(n.a, coeff, factors, denominators);
      Expr den = run(n.b);
      double c;
      if (fold_constant(den, &c)) {
        if (c == 0.0) {
          denominators->push_back(den);  // keep the division; evaluation reports it
        } else {
          *coeff /= c;
        }
      } else {
        denominators->push_back(den);
      }
      return;
    }
    Expr s = run(e);
    const ExprNode& m = s.node();
    if (m.kind == NodeKind::Mul || m.kind == NodeKind::Div) {
      flatten_product_of_normal(s, coeff, factors, denominators);
      return;
    }
    push_factor(s, coeff, factors);
  }

  void flatten_product_of_normal(const Expr& e, double* coeff,
                                 std::vector<ProductFactor>* factors,
                                 std::vector<Expr>* denominators) {
    const ExprNode& n = e.node();
    if (n.kind == NodeKind::Mul) {
      flatten_product_of_normal(n.a, coeff, factors, denominators);
      flatten_product_of_normal(n.b, coeff, factors, denominators);
      return;
    }
    if (n.kind == NodeKind::Div) {
      flatten_product_of_normal(n.a, coeff, factors, denominators);
      denominators->push_back(n.b);
      return;
    }
    push_factor(e, coeff, factors);
  }

  void push_factor(const Expr& simplified, double* coeff,
                   std::vector<ProductFactor>* factors) {
    double c;
    if (fold_constant(simplified, &c)) {
      *coeff *= c;
      return;
    }
    Expr base = simplified;
    Rational exp(1);
    const ExprNode& n = simplified.node();
    if (n.kind == NodeKind::Pow) {
      base = n.a;
      exp = n.exponent;
    }
    for (auto& f : *factors) {
      if (f.base == base) {
        f.exponent = f.exponent + exp;
        return;
      }
    }
    factors->push_back({base, exp});
  }

  Expr rebuild_product(const Expr& e) {
    double coeff = 1.0;
    std::vector<ProductFactor> factors;
    std::vector<Expr> denominators;
    flatten_product(e, &coeff, &factors, &denominators);

    if (coeff == 0.0 && denominators.empty()) return Expr::constant(0.0);

    std::erase_if(factors, [](const ProductFactor& f) { return f.exponent.is_zero(); });
    std::sort(factors.begin(), factors.end(),
              [](const ProductFactor& a, const ProductFactor& b) {
                return structural_compare(a.base, b.base) < 0;
              });

    Expr acc;
    if (coeff != 1.0 || factors.empty()) acc = Expr::constant(coeff);
    for (const auto& f : factors) {
      Expr piece = f.exponent.is_one() ? f.base : Expr::pow(f.base, f.exponent);
      acc = acc.valid() ? Expr::mul(acc, piece) : piece;
    }
    if (!acc.valid()) acc = Expr::constant(coeff);
    for (const auto& d : denominators) {
      acc = Expr::div(acc, d);
    }
    return acc;
  }
};

}  // namespace

Expr simplify(const Expr& e) {
  Simplifier s;
  return s.run(e);
}

// ---------------------------------------------------------------------------
// Printing

namespace {

int precedence(const ExprNode& n) {
  switch (n.kind) {
    case NodeKind::Add:
    case NodeKind::Sub:
      return 1;
    case NodeKind::Mul:
    case NodeKind::Div:
      return 2;
    case NodeKind::Pow:
      return 3;
    default:
      return 4;
  }
}

std::string format_double(double v) {
  if (v == static_cast<long long>(v) && std::fabs(v) < 1e15) {
    return std::to_string(static_cast<long long>(v));
  }
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void print_node(const Expr& e, int parent_prec, std::string* out) {
  const ExprNode& n = e.node();
  const int prec = precedence(n);
  const bool constant_neg = n.kind == NodeKind::Constant && n.value < 0.0;
  const bool parens = prec < parent_prec || (constant_neg && parent_prec > 0);
  if (parens) out->push_back('(');
  switch (n.kind) {
    case NodeKind::Constant:
      if (constant_neg) {
        out->push_back('-');
        *out += format_double(-n.value);
      } else {
        *out += format_double(n.value);
      }
      break;
    case NodeKind::StateVar:
      *out += "x" + std::to_string(n.index + 1);
      break;
    case NodeKind::InputVar:
      *out += "u" + std::to_string(n.index + 1);
      break;
    case NodeKind::Add:
      print_node(n.a, prec, out);
      *out += " + ";
      print_node(n.b, prec + 1, out);
      break;
    case NodeKind::Sub:
      print_node(n.a, prec, out);
      *out += " - ";
      print_node(n.b, prec + 1, out);
      break;
    case NodeKind::Mul:
      print_node(n.a, prec, out);
      *out += "*";
      print_node(n.b, prec + 1, out);
      break;
    case NodeKind::Div:
      print_node(n.a, prec, out);
      *out += "/";
      print_node(n.b, prec + 1, out);
      break;
    case NodeKind::Pow:
      print_node(n.a, prec + 1, out);
      *out += "^";
      *out += n.exponent.str();
      break;
    case NodeKind::Call: {
      const char* name = "?";
      switch (n.func) {
        case FuncId::Sin: name = "sin"; break;
        case FuncId::Cos: name = "cos"; break;
        case FuncId::Exp: name = "exp"; break;
        case FuncId::Log: name = "log"; break;
        case FuncId::Abs: name = "abs"; break;
      }
      *out += name;
      out->push_back('(');
      print_node(n.a, 0, out);
      out->push_back(')');
      break;
    }
  }
  if (parens) out->push_back(')');
}

}  // namespace

std::string to_string(const Expr& e) {
  if (!e.valid()) return "<null>";
  std::string out;
  print_node(e, 0, &out);
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

struct Token {
  enum Kind { Number, Ident, Op, End } kind = End;
  std::string text;
  double value = 0.0;
  bool integral = false;
  long long int_value = 0;
  int line = 1;
  int column = 1;
};

class Lexer {
public:
  Lexer(std::string_view text, int base_line)
      : text_(text), line_(base_line) {}

  Token next() {
    skip_ws();
    Token t;
    t.line = line_;
    t.column = column_;
    if (pos_ >= text_.size()) {
      t.kind = Token::End;
      return t;
    }
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      return lex_number(t);
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t start = pos_;
      while (pos_ < text_.size() &&
             (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
        advance();
      }
      t.kind = Token::Ident;
      t.text = std::string(text_.substr(start, pos_ - start));
      return t;
    }
    if (std::string_view("+-*/^(),").find(c) != std::string_view::npos) {
      t.kind = Token::Op;
      t.text = std::string(1, c);
      advance();
      return t;
    }
    throw ParseError("unexpected character '" + std::string(1, c) + "'", line_, column_);
  }

private:
  void advance() {
    if (text_[pos_] == '\n') {
      ++line_;
      column_ = 1;
    } else {
      ++column_;
    }
    ++pos_;
  }

  void skip_ws() {
    while (pos_ < text_.size() &&
           std::isspace(static_cast<unsigned char>(text_[pos_]))) {
      advance();
    }
  }

  Token lex_number(Token t) {
    std::size_t start = pos_;
    bool has_dot = false, has_exp = false;
    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c))) {
        advance();
      } else if (c == '.' && !has_dot && !has_exp) {
        has_dot = true;
        advance();
      } else if ((c == 'e' || c == 'E') && !has_exp && pos_ + 1 < text_.size() &&
                 (std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])) ||
                  ((text_[pos_ + 1] == '+' || text_[pos_ + 1] == '-') && pos_ + 2 < text_.size() &&
                   std::isdigit(static_cast<unsigned char>(text_[pos_ + 2]))))) {
        has_exp = true;
        advance();
        if (text_[pos_] == '+' || text_[pos_] == '-') advance();
      } else {
        break;
      }
    }
    const std::string s(text_.substr(start, pos_ - start));
    t.kind = Token::Number;
    t.text = s;
    t.value = std::strtod(s.c_str(), nullptr);
    t.integral = !has_dot && !has_exp;
    if (t.integral) t.int_value = std::strtoll(s.c_str(), nullptr, 10);
    return t;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  int line_;
  int column_ = 1;
};

class Parser {
public:
  Parser(std::string_view text, std::span<const std::string> states,
         std::span<const std::string> inputs, int base_line)
      : lexer_(text, base_line), states_(states), inputs_(inputs) {
    bump();
  }

  Expr parse() {
    Expr e = parse_expr();
    if (cur_.kind != Token::End) {
      throw ParseError("unexpected token '" + cur_.text + "'", cur_.line, cur_.column);
    }
    return e;
  }

private:
  void bump() { cur_ = lexer_.next(); }

  bool at_op(const char* s) const { return cur_.kind == Token::Op && cur_.text == s; }

  void expect_op(const char* s) {
    if (!at_op(s)) {
      throw ParseError(std::string("expected '") + s + "'", cur_.line, cur_.column);
    }
    bump();
  }

  Expr parse_expr() {
    bool leading_minus = false;
    if (at_op("-")) {
      leading_minus = true;
      bump();
    } else if (at_op("+")) {
      bump();
    }
    Expr acc = parse_term();
    if (leading_minus) acc = negate_term(acc);
    while (at_op("+") || at_op("-")) {
      const bool minus = cur_.text == "-";
      bump();
      Expr rhs = parse_term();
      acc = minus ? Expr::sub(acc, rhs) : Expr::add(acc, rhs);
    }
    return acc;
  }

  // Folds the sign into the leading constant of a product chain when present.
  static Expr negate_term(const Expr& e) {
    const ExprNode& n = e.node();
    if (n.kind == NodeKind::Constant) return Expr::constant(-n.value);
    if (n.kind == NodeKind::Mul) {
      Expr lhs = negate_term(n.a);
      return Expr::mul(lhs, n.b);
    }
    if (n.kind == NodeKind::Div) {
      Expr lhs = negate_term(n.a);
      return Expr::div(lhs, n.b);
    }
    return Expr::mul(Expr::constant(-1.0), e);
  }

  Expr parse_term() {
    Expr acc = parse_factor();
    while (at_op("*") || at_op("/")) {
      const bool divide = cur_.text == "/";
      bump();
      Expr rhs = parse_factor();
      acc = divide ? Expr::div(acc, rhs) : Expr::mul(acc, rhs);
    }
    return acc;
  }

  Expr parse_factor() {
    Expr atom = parse_atom();
    if (at_op("^")) {
      bump();
      return Expr::pow(atom, parse_rational());
    }
    return atom;
  }

  Rational parse_rational() {
    if (cur_.kind == Token::Number) {
      if (!cur_.integral) {
        throw ParseError("exponent must be an integer or (p/q)", cur_.line, cur_.column);
      }
      const long long p = cur_.int_value;
      bump();
      return Rational(p);
    }
    if (at_op("-")) {
      bump();
      if (cur_.kind != Token::Number || !cur_.integral) {
        throw ParseError("exponent must be an integer or (p/q)", cur_.line, cur_.column);
      }
      const long long p = -cur_.int_value;
      bump();
      return Rational(p);
    }
    if (at_op("(")) {
      bump();
      const long long p = parse_signed_integer();
      expect_op("/");
      const long long q = parse_signed_integer();
      if (q == 0) throw ParseError("zero denominator in exponent", cur_.line, cur_.column);
      expect_op(")");
      return Rational(p, q);
    }
    throw ParseError("expected exponent after '^'", cur_.line, cur_.column);
  }

  long long parse_signed_integer() {
    long long sign = 1;
    if (at_op("-")) {
      sign = -1;
      bump();
    }
    if (cur_.kind != Token::Number || !cur_.integral) {
      throw ParseError("expected integer", cur_.line, cur_.column);
    }
    const long long v = sign * cur_.int_value;
    bump();
    return v;
  }

  Expr parse_atom() {
    if (cur_.kind == Token::Number) {
      Expr e = Expr::constant(cur_.value);
      bump();
      return e;
    }
    if (cur_.kind == Token::Ident) {
      const std::string name = cur_.text;
      const Token ident = cur_;
      bump();
      if (at_op("(")) {
        bump();
        Expr arg = parse_expr();
        expect_op(")");
        if (name == "sin") return Expr::call(FuncId::Sin, arg);
        if (name == "cos") return Expr::call(FuncId::Cos, arg);
        if (name == "exp") return Expr::call(FuncId::Exp, arg);
        if (name == "log") return Expr::call(FuncId::Log, arg);
        if (name == "abs") return Expr::call(FuncId::Abs, arg);
        if (name == "cbrt") return Expr::pow(arg, Rational(1, 3));
        throw ParseError("unknown function '" + name + "'", ident.line, ident.column);
      }
      for (std::size_t i = 0; i < states_.size(); ++i) {
        if (states_[i] == name) return Expr::state(static_cast<int>(i));
      }
      for (std::size_t i = 0; i < inputs_.size(); ++i) {
        if (inputs_[i] == name) return Expr::input(static_cast<int>(i));
      }
      throw ParseError("unknown identifier '" + name + "'", ident.line, ident.column);
    }
    if (at_op("(")) {
      bump();
      Expr e = parse_expr();
      expect_op(")");
      return e;
    }
    if (cur_.kind == Token::End) {
      throw ParseError("unexpected end of input", cur_.line, cur_.column);
    }
    throw ParseError("unexpected token '" + cur_.text + "'", cur_.line, cur_.column);
  }

  Lexer lexer_;
  Token cur_;
  std::span<const std::string> states_;
  std::span<const std::string> inputs_;
};

}  // namespace

Expr parse_expression(std::string_view text, std::span<const std::string> state_names,
                      std::span<const std::string> input_names) {
  Parser p(text, state_names, input_names, 1);
  return p.parse();
}

namespace detail {
Expr parse_expression_at(std::string_view text, std::span<const std::string> state_names,
                         std::span<const std::string> input_names, int base_line) {
  Parser p(text, state_names, input_names, base_line);
  return p.parse();
}
}  // namespace detail

}  // namespace obsform
