#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "obsform/rational.hpp"

namespace obsform {

enum class NodeKind : unsigned char {
  Constant,
  StateVar,
  InputVar,
  Add,
  Sub,
  Mul,
  Div,
  Pow,   // rational exponent, odd-root semantics for negative bases
  Call,
};

enum class FuncId : unsigned char { Sin, Cos, Exp, Log, Abs };

struct ExprNode;

/// Immutable handle to a hash-consed expression node. Two Expr values are
/// structurally equal iff their handles compare equal.
class Expr {
public:
  Expr() = default;

  static Expr constant(double value);
  static Expr state(int index);
  static Expr input(int index);
  static Expr add(const Expr& a, const Expr& b);
  static Expr sub(const Expr& a, const Expr& b);
  static Expr mul(const Expr& a, const Expr& b);
  static Expr div(const Expr& a, const Expr& b);
  static Expr pow(const Expr& base, Rational exponent);
  static Expr call(FuncId f, const Expr& arg);

  bool valid() const { return static_cast<bool>(node_); }
  const ExprNode& node() const { return *node_; }
  const ExprNode* raw() const { return node_.get(); }

  friend bool operator==(const Expr& a, const Expr& b) { return a.node_ == b.node_; }
  friend bool operator!=(const Expr& a, const Expr& b) { return a.node_ != b.node_; }

  bool is_constant() const;
  bool is_constant(double value) const;
  double constant_value() const;  // requires is_constant()

private:
  explicit Expr(std::shared_ptr<const ExprNode> node) : node_(std::move(node)) {}
  static Expr intern(ExprNode&& proto);

  std::shared_ptr<const ExprNode> node_;
};

struct ExprNode {
  NodeKind kind = NodeKind::Constant;
  FuncId func = FuncId::Sin;
  double value = 0.0;   // Constant
  int index = -1;       // StateVar / InputVar
  Rational exponent;    // Pow
  Expr a;               // first child
  Expr b;               // second child (Add/Sub/Mul/Div)
  std::size_t hash = 0;
};

inline Expr operator+(const Expr& a, const Expr& b) { return Expr::add(a, b); }
inline Expr operator-(const Expr& a, const Expr& b) { return Expr::sub(a, b); }
inline Expr operator*(const Expr& a, const Expr& b) { return Expr::mul(a, b); }
inline Expr operator/(const Expr& a, const Expr& b) { return Expr::div(a, b); }

/// Deterministic total order on expression trees (payload-based, not
/// pointer-based), used to canonicalize term order in simplify().
int structural_compare(const Expr& a, const Expr& b);

/// Exact partial derivative with respect to state variable `var`.
/// The result is returned in simplified form.
Expr differentiate(const Expr& e, int var);

/// Terminating rewrite pass: constant folding, 0/1 identities, flattening of
/// nested sums/products, and collection of powers with identical bases.
Expr simplify(const Expr& e);

/// IEEE double evaluation. Powers x^(p/q) use odd-root semantics when q is
/// odd: sign(x)^p * |x|^(p/q). Throws DomainError for even roots of negative
/// bases, division by zero and log of non-positive values.
double evaluate(const Expr& e, std::span<const double> states,
                std::span<const double> inputs = {});

std::string to_string(const Expr& e);

/// Parse an expression over the given variable names. State names map to
/// state-variable nodes by position, input names to input-variable nodes.
Expr parse_expression(std::string_view text, std::span<const std::string> state_names,
                      std::span<const std::string> input_names = {});

/// Largest state index referenced, or -1 when none.
int max_state_index(const Expr& e);
bool references_input(const Expr& e);

/// Smallest |base value| over all Pow nodes with non-integer exponent when
/// evaluating at the given point; +inf when there are none. Used by tests to
/// stay away from fractional-power singularities.
double min_fractional_pow_base(const Expr& e, std::span<const double> states,
                               std::span<const double> inputs = {});

}  // namespace obsform
