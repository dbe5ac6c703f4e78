#pragma once

#include <algorithm>
#include <limits>
#include <cstdint>
#include <numeric>
#include <vector>

#include <bjda/bjda.hpp>

namespace testing_support {

inline bjda::Matrix random_matrix(bjda::Rng& rng, std::size_t r, std::size_t c, double lo = -1.0,
                                  double hi = 1.0) {
  bjda::Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

inline bjda::Matrix gaussian_matrix(bjda::Rng& rng, std::size_t r, std::size_t c) {
  bjda::Matrix m(r, c);
  for (double& v : m.data()) v = rng.normal();
  return m;
}

/// Minimum of (1/n) sum ||a_i - b_pi(i)||^2 over every permutation pi.
inline double brute_force_ot(const bjda::Matrix& a, const bjda::Matrix& b) {
  const std::size_t n = a.rows();
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double row = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        const double d = a(i, k) - b(perm[i], k);
        row += d * d;
      }
      s += row;
    }
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

/// Small labeled domain pair for fast training tests.
inline std::pair<bjda::Dataset, bjda::Dataset> tiny_blobs(double shift = 50.0, std::size_t per_class = 20) {
  bjda::SynthSpec s;
  s.classes = 3;
  s.dim = 6;
  s.per_class = per_class;
  s.shift_angle = shift;
  return bjda::gen_rotated_blobs(s);
}

inline bjda::TrainConfig tiny_config() {
  bjda::TrainConfig c;
  c.hidden = 16;
  c.feat = 8;
  c.t_max = 12;
  c.batch_source = 12;
  c.batch_target = 12;
  c.eval_every = 4;
  return c;
}

}  // namespace testing_support
