#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace obsform {

/// Deterministic random stream with a platform-independent double mapping.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

  /// Independent substream tagged by an integer (order, anchor index, ...).
  Rng fork(std::uint64_t tag) const {
    Rng r(state_ ^ (0xd1342543de82ef95ull * (tag + 1)));
    r.next_u64();
    return r;
  }

private:
  std::uint64_t state_;
};

/// Cylindrical exclusion: points whose restriction to `axes` lies within
/// `radius` of `center` are removed from the sampling domain.
struct Tube {
  std::vector<int> axes;
  Eigen::VectorXd center;  // one entry per axis in `axes`
  double radius = 0.0;

  bool contains(const Eigen::VectorXd& x) const {
    double d2 = 0.0;
    for (std::size_t k = 0; k < axes.size(); ++k) {
      const double d = x[axes[k]] - center[static_cast<Eigen::Index>(k)];
      d2 += d * d;
    }
    return d2 < radius * radius;
  }
};

/// Axis-aligned sampling box with per-axis grid counts, a random-sample
/// budget and optional exclusion tubes.
struct SampleBox {
  Eigen::VectorXd lower, upper;
  std::vector<int> grid_counts;
  int random_count = 0;
  std::uint64_t seed = 1;
  std::vector<Tube> exclusions;

  int dim() const { return static_cast<int>(lower.size()); }

  bool contains(const Eigen::VectorXd& x, double margin = 0.0) const {
    for (int j = 0; j < dim(); ++j) {
      const double pad = margin * (upper[j] - lower[j]);
      if (x[j] < lower[j] - pad || x[j] > upper[j] + pad) return false;
    }
    return true;
  }

  bool excluded(const Eigen::VectorXd& x) const {
    for (const Tube& t : exclusions) {
      if (t.contains(x)) return true;
    }
    return false;
  }

  Eigen::VectorXd clamp(const Eigen::VectorXd& x, double margin = 0.0) const {
    Eigen::VectorXd out = x;
    for (int j = 0; j < dim(); ++j) {
      const double pad = margin * (upper[j] - lower[j]);
      out[j] = std::min(std::max(out[j], lower[j] - pad), upper[j] + pad);
    }
    return out;
  }

  /// Endpoint-exact grid coordinate: lo*(1-t) + hi*t with t = k/(count-1).
  double grid_coord(int axis, int k) const {
    const int count = grid_counts[static_cast<std::size_t>(axis)];
    if (count <= 1) return 0.5 * (lower[axis] + upper[axis]);
    const double t = static_cast<double>(k) / static_cast<double>(count - 1);
    return lower[axis] * (1.0 - t) + upper[axis] * t;
  }

  Eigen::VectorXd random_point(Rng& rng) const {
    Eigen::VectorXd x(dim());
    for (int j = 0; j < dim(); ++j) x[j] = rng.uniform(lower[j], upper[j]);
    return x;
  }
};

/// Full grid enumeration (exclusions applied), deterministic order.
std::vector<Eigen::VectorXd> grid_points(const SampleBox& box);

/// Seeded random points (exclusions applied; rejected draws are retried).
std::vector<Eigen::VectorXd> random_points(const SampleBox& box, int count, Rng& rng);

/// grid_points followed by box.random_count random points.
std::vector<Eigen::VectorXd> sample_points(const SampleBox& box);

}  // namespace obsform
