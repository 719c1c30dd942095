#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "obsform/expr.hpp"

namespace obsform {

/// Control-affine system  xdot = f(x) + g(x) u,  y = h(x).
/// f, g and h reference state variables only; inputs enter linearly through g.
struct ControlAffineSystem {
  std::string name;
  int n = 0;  // state dimension
  int m = 0;  // input dimension
  std::vector<std::string> state_names;
  std::vector<std::string> input_names;
  std::vector<Expr> f;               // n entries
  std::vector<std::vector<Expr>> g;  // n rows x m columns
  Expr h;

  Eigen::VectorXd eval_f(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd eval_g(const Eigen::VectorXd& x) const;
  Eigen::VectorXd eval_rhs(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const;
  double eval_h(const Eigen::VectorXd& x) const;

  /// Printed normal form of the full definition; stable across runs.
  std::string canonical_text() const;
  std::uint64_t hash() const;
};

/// Parse the system file format:
///   system <name>
///   states x1 x2 ...
///   inputs u1 ...
///   f = [e1, ..., en]
///   g = [[...], ..., [...]]      # n rows of m entries
///   h = e
/// '#' starts a comment. Throws ParseError on malformed input.
ControlAffineSystem parse_system(std::string_view text);

ControlAffineSystem load_system(const std::string& path);

}  // namespace obsform
