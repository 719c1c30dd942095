#pragma once

#include <Eigen/Dense>
#include <optional>

namespace obsform {

enum class ExtensionMode { McShane, NearestSample };

/// Finite table of (key point, value) samples with a global extension rule.
/// McShane mode evaluates the inf-convolution min_i (v_i + L |z - z_i|) per
/// output component, which is globally L-Lipschitz and reproduces the sample
/// values whenever the table is L-consistent (validated at construction).
class SampledFunction {
public:
  SampledFunction(Eigen::MatrixXd keys, Eigen::MatrixXd values, ExtensionMode mode,
                  double lipschitz);

  int key_dim() const { return static_cast<int>(keys_.cols()); }
  int out_dim() const { return static_cast<int>(values_.cols()); }
  int size() const { return static_cast<int>(keys_.rows()); }
  ExtensionMode mode() const { return mode_; }
  double lipschitz() const { return lipschitz_; }

  const Eigen::MatrixXd& keys() const { return keys_; }
  const Eigen::MatrixXd& values() const { return values_; }

  Eigen::VectorXd operator()(const Eigen::VectorXd& z) const;

  int nearest(const Eigen::VectorXd& z) const;

  /// All sample values equal within `tol` (max-norm).
  bool is_constant(double tol = 0.0) const;
  Eigen::VectorXd constant_value() const { return values_.row(0); }

  /// Anchor points in the original state space that generated the samples;
  /// optional, used for warm-started inversion.
  void set_anchors(Eigen::MatrixXd anchors) { anchors_ = std::move(anchors); }
  const std::optional<Eigen::MatrixXd>& anchors() const { return anchors_; }

private:
  Eigen::MatrixXd keys_;    // N x q
  Eigen::MatrixXd values_;  // N x r
  ExtensionMode mode_;
  double lipschitz_;
  std::optional<Eigen::MatrixXd> anchors_;  // N x n
};

/// McShane extension of an L-consistent sample set. Throws ConfigError (with
/// a witness pair in the message) when |v_i - v_j| > L |z_i - z_j| holds for
/// some pair beyond arithmetic slack.
SampledFunction mcshane_extend(const Eigen::MatrixXd& keys, const Eigen::MatrixXd& values,
                               double lipschitz);

}  // namespace obsform
