#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "obsform/expr.hpp"

namespace obsform {

/// Input signal u(t): constant, piecewise-constant or expression of t.
class InputSignal {
public:
  static InputSignal constant(Eigen::VectorXd value);
  /// times[k] is the start of segment k (times[0] must be 0).
  static InputSignal piecewise(std::vector<double> times, std::vector<Eigen::VectorXd> values);
  /// One expression per input channel over the single variable "t".
  static InputSignal expression(const std::vector<std::string>& exprs);

  Eigen::VectorXd operator()(double t) const;
  int channels() const { return channels_; }

private:
  enum class Kind { Constant, Piecewise, Expression } kind_ = Kind::Constant;
  int channels_ = 0;
  Eigen::VectorXd value_;
  std::vector<double> times_;
  std::vector<Eigen::VectorXd> values_;
  std::vector<Expr> exprs_;
};

}  // namespace obsform
