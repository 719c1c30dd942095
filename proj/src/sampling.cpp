#include "obsform/sampling.hpp"

namespace obsform {

std::vector<Eigen::VectorXd> grid_points(const SampleBox& box) {
  const int n = box.dim();
  long long total = 1;
  for (int j = 0; j < n; ++j) total *= box.grid_counts[static_cast<std::size_t>(j)];
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(total));
  std::vector<int> idx(static_cast<std::size_t>(n), 0);
  Eigen::VectorXd x(n);
  for (long long s = 0; s < total; ++s) {
    for (int j = 0; j < n; ++j) x[j] = box.grid_coord(j, idx[static_cast<std::size_t>(j)]);
    if (!box.excluded(x)) out.push_back(x);
    for (int j = n - 1; j >= 0; --j) {
      if (++idx[static_cast<std::size_t>(j)] < box.grid_counts[static_cast<std::size_t>(j)]) break;
      idx[static_cast<std::size_t>(j)] = 0;
    }
  }
  return out;
}

std::vector<Eigen::VectorXd> random_points(const SampleBox& box, int count, Rng& rng) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Eigen::VectorXd x = box.random_point(rng);
    for (int tries = 0; tries < 64 && box.excluded(x); ++tries) x = box.random_point(rng);
    if (!box.excluded(x)) out.push_back(x);
  }
  return out;
}

std::vector<Eigen::VectorXd> sample_points(const SampleBox& box) {
  std::vector<Eigen::VectorXd> out = grid_points(box);
  Rng rng(box.seed);
  auto rand = random_points(box, box.random_count, rng);
  out.insert(out.end(), rand.begin(), rand.end());
  return out;
}

}  // namespace obsform
