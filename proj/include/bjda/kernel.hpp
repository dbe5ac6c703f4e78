#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "linalg.hpp"
#include "matrix.hpp"

namespace bjda {

enum class KernelKind { gaussian, linear };

struct KernelSpec {
  KernelKind kind = KernelKind::gaussian;
  /// sigma^2; computed per kernel matrix by the mean heuristic when empty.
  std::optional<double> bandwidth_sq;

  void validate() const {
    if (bandwidth_sq && !(std::isfinite(*bandwidth_sq) && *bandwidth_sq > 0.0))
      throw ConfigError("kernel bandwidth_sq must be positive and finite, got " +
                        std::to_string(*bandwidth_sq));
  }
};

inline const char* to_string(KernelKind k) { return k == KernelKind::gaussian ? "gaussian" : "linear"; }

/// H_n = I - (1/n) 1 1^T, applied implicitly.
class CenteringMatrix {
 public:
  explicit CenteringMatrix(std::size_t n) : n_{n} {}
  std::size_t size() const noexcept { return n_; }

  Matrix dense() const {
    Matrix h(n_, n_, -1.0 / static_cast<double>(n_));
    for (std::size_t i = 0; i < n_; ++i) h(i, i) += 1.0;
    return h;
  }
  /// H * m (subtracts column means).
  Matrix left(const Matrix& m) const {
    require(m.rows(), "left");
    return center_rows(m);
  }
  /// m * H (subtracts row means).
  Matrix right(const Matrix& m) const {
    require(m.cols(), "right");
    Matrix out = m;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double mu = 0.0;
      for (double v : m.row(i)) mu += v;
      mu /= static_cast<double>(m.cols());
      for (double& v : out.row(i)) v -= mu;
    }
    return out;
  }

 private:
  void require(std::size_t dim, const char* side) const {
    if (dim != n_)
      throw DimensionError(std::string("CenteringMatrix::") + side + ": size " +
                           std::to_string(n_) + " against dimension " + std::to_string(dim));
  }
  std::size_t n_;
};

/// H_n K H_m for K [n x m]; differentiable.
inline Value double_center(Value k) {
  const CenteringMatrix hl(k.rows()), hr(k.cols());
  Matrix out = hr.right(hl.left(k.value()));
  const std::size_t ik = k.id();
  return k.tape()->record(std::move(out), {k}, [ik](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const CenteringMatrix hl(g.rows()), hr(g.cols());
    tp.accumulate(ik, hr.right(hl.left(g)));
  });
}

/// Means below this are treated as all-zero distances. Dividing by anything
/// smaller overflows the kernel gradient.
inline const double kMinBandwidthSq = std::sqrt(std::numeric_limits<double>::min());

/// Mean of all pairwise squared distances between rows of a and b; 1.0 when
/// every distance is (numerically) zero.
inline double gaussian_bandwidth(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("gaussian_bandwidth: feature dimension mismatch " + a.shape() + " vs " +
                         b.shape());
  if (a.rows() == 0 || b.rows() == 0) throw InputError("gaussian_bandwidth: empty sample set");
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        const double d = a(i, k) - b(j, k);
        s += d * d;
      }
      total += s;
    }
  const double mean = total / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
  return mean >= kMinBandwidthSq ? mean : 1.0;
}

/// Bandwidth over the union of both sample sets (all pairs of the stacked rows).
inline double shared_gaussian_bandwidth(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("shared_gaussian_bandwidth: feature dimension mismatch " + a.shape() +
                         " vs " + b.shape());
  std::vector<double> rows(a.data().begin(), a.data().end());
  rows.insert(rows.end(), b.data().begin(), b.data().end());
  const Matrix u(a.rows() + b.rows(), a.cols(), std::move(rows));
  return gaussian_bandwidth(u, u);
}

namespace detail {
// exp(-D / sigma^2) with sigma^2 the mean entry of `sq` taken from `pool`.
// The bandwidth is itself a function of the inputs and is differentiated.
inline Value gaussian_from_sqdist(Value sq, Value pool) {
  const double n = static_cast<double>(pool.value().size());
  if (!(pool.value().sum() / n >= kMinBandwidthSq)) return ad::exp(ad::scale(sq, -1.0));
  const Value bw = ad::scale(ad::sum(pool), 1.0 / n);
  return ad::exp(ad::scale(ad::div_scalar(sq, bw), -1.0));
}
}  // namespace detail

/// (K)_ij = k(a_i, b_j). Gaussian: exp(-||a_i - b_j||^2 / sigma^2); without a
/// fixed sigma^2 the mean of this matrix's own squared distances is used.
/// Linear: a_i . b_j.
inline Value kernel_matrix(Value a, Value b, const KernelSpec& spec) {
  spec.validate();
  if (a.cols() != b.cols())
    throw DimensionError("kernel_matrix: feature dimension mismatch " + a.value().shape() +
                         " vs " + b.value().shape());
  if (spec.kind == KernelKind::linear) return ad::matmul(a, ad::transpose(b));
  const Value sq = ad::pairwise_sqdist(a, b);
  if (spec.bandwidth_sq) return ad::exp(ad::scale(sq, -1.0 / *spec.bandwidth_sq));
  return detail::gaussian_from_sqdist(sq, sq);
}

/// Squared kernel Bures-Wasserstein distance between the empirical measures
/// on the rows of a [n x d] and b [m x d]:
///   (1/n) tr(K_aa H_n) + (1/m) tr(K_bb H_m) - 2/sqrt(nm) ||H_n K_ab H_m||_*
/// clamped at zero. With `shared_bandwidth`, one Gaussian sigma^2 is taken from
/// the union of both sets instead of one per kernel matrix.
inline Value kbw_sq(Value a, Value b, const KernelSpec& spec, bool shared_bandwidth = false) {
  spec.validate();
  const std::size_t n = a.rows(), m = b.rows();
  if (n < 2 || m < 2)
    throw InputError("kbw_sq: need at least 2 samples per set, got " + std::to_string(n) +
                     " and " + std::to_string(m));
  if (a.cols() != b.cols())
    throw DimensionError("kbw_sq: feature dimension mismatch " + a.value().shape() + " vs " +
                         b.value().shape());
  Value k_aa, k_bb, k_ab;
  if (shared_bandwidth && spec.kind == KernelKind::gaussian && !spec.bandwidth_sq) {
    const Value u = ad::concat_rows(a, b);
    const Value pool = ad::pairwise_sqdist(u, u);
    k_aa = detail::gaussian_from_sqdist(ad::pairwise_sqdist(a, a), pool);
    k_bb = detail::gaussian_from_sqdist(ad::pairwise_sqdist(b, b), pool);
    k_ab = detail::gaussian_from_sqdist(ad::pairwise_sqdist(a, b), pool);
  } else {
    k_aa = kernel_matrix(a, a, spec);
    k_bb = kernel_matrix(b, b, spec);
    k_ab = kernel_matrix(a, b, spec);
  }

  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  // tr(K H) == tr(H K H) because H is idempotent.
  const Value self_a = ad::scale(ad::trace(double_center(k_aa)), 1.0 / dn);
  const Value self_b = ad::scale(ad::trace(double_center(k_bb)), 1.0 / dm);
  const Value cross = ad::scale(ad::nuclear_norm(double_center(k_ab)), -2.0 / std::sqrt(dn * dm));
  return ad::clamp_min(ad::add(ad::add(self_a, self_b), cross), 0.0);
}

inline double kbw_sq(const Matrix& a, const Matrix& b, const KernelSpec& spec,
                     bool shared_bandwidth = false) {
  Tape t;
  return kbw_sq(t.constant(a), t.constant(b), spec, shared_bandwidth).item();
}

namespace detail {
// Square root of the symmetric part of s. Eigenvalues below the numerical
// rank cutoff (including negative round-off) are treated as exact zeros.
inline Matrix psd_sqrt_truncated(const Matrix& s) {
  const linalg::SymEigen e = linalg::sym_eigen(s);
  const std::size_t n = s.rows();
  const double top = n ? std::max(e.values.back(), 0.0) : 0.0;
  const double cutoff = top * static_cast<double>(n) * 1e-15;
  Matrix out(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    if (!(e.values[k] > cutoff)) continue;
    const double r = std::sqrt(e.values[k]);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out(i, j) += r * e.vectors(i, k) * e.vectors(j, k);
  }
  return out;
}
}  // namespace detail

/// Closed-form Bures-Wasserstein distance between two covariance matrices,
///   [tr S1 + tr S2 - 2 tr((S1^1/2 S2 S1^1/2)^1/2)]^1/2,
/// evaluated as min over orthogonal Q of ||S1^1/2 - S2^1/2 Q||_F. The
/// minimiser is the polar factor of S2^1/2 S1^1/2, and the Frobenius form
/// avoids the cancellation of the trace expression near zero distance.
/// Inputs are symmetrized; eigenvalues at round-off level count as zero.
inline double closed_form_bures(const Matrix& s1, const Matrix& s2) {
  if (s1.rows() != s1.cols() || s2.rows() != s2.cols() || s1.rows() != s2.rows())
    throw DimensionError("closed_form_bures: need two square matrices of equal size, got " +
                         s1.shape() + " and " + s2.shape());
  const std::size_t n = s1.rows();
  const Matrix ra = detail::psd_sqrt_truncated(s1);
  const Matrix rb = detail::psd_sqrt_truncated(s2);
  const linalg::Svd f = linalg::svd(matmul(rb, ra));

  // Left singular vectors of (numerically) zero singular values are
  // arbitrary; rebuild them as an orthonormal completion.
  const double cutoff = (f.s.empty() ? 0.0 : f.s[0]) * 1e-12;
  Matrix u(n, n);
  std::size_t kept = 0;
  for (; kept < n && f.s[kept] > cutoff; ++kept)
    for (std::size_t i = 0; i < n; ++i) u(i, kept) = f.u(i, kept);
  for (std::size_t e = 0; kept < n && e < n; ++e) {
    std::vector<double> c(n, 0.0);
    c[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t j = 0; j < kept; ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += u(i, j) * c[i];
        for (std::size_t i = 0; i < n; ++i) c[i] -= dot * u(i, j);
      }
    double norm = 0.0;
    for (double v : c) norm += v * v;
    norm = std::sqrt(norm);
    if (norm < 0.5) continue;
    for (std::size_t i = 0; i < n; ++i) u(i, kept) = c[i] / norm;
    ++kept;
  }
  const Matrix q = matmul(u, f.v, Trans::none, Trans::transpose);
  return (ra - matmul(rb, q)).frobenius_norm();
}

/// Squared 2-Wasserstein cost between uniform empirical measures of equal size,
/// (1/n) min_pi sum_i ||a_i - b_pi(i)||^2, solved exactly by assignment.
inline double exact_wasserstein_sq(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw InputError("exact_wasserstein_sq: unequal sample counts " + std::to_string(a.rows()) +
                     " and " + std::to_string(b.rows()) + " (only uniform equal-size OT supported)");
  if (a.cols() != b.cols())
    throw DimensionError("exact_wasserstein_sq: feature dimension mismatch " + a.shape() + " vs " +
                         b.shape());
  if (a.rows() == 0) throw InputError("exact_wasserstein_sq: empty sample sets");
  const std::size_t n = a.rows();
  Matrix cost(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        const double d = a(i, k) - b(j, k);
        s += d * d;
      }
      cost(i, j) = s;
    }
  const std::vector<std::size_t> assign = linalg::hungarian(cost);
  double total = 0.0;
  for (std::size_t i = 0; i < assign.size(); ++i) total += cost(i, assign[i]);
  return total / static_cast<double>(a.rows());
}

}  // namespace bjda
