#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "kernel.hpp"
#include "linalg.hpp"
#include "losses.hpp"
#include "model.hpp"
#include "random.hpp"

namespace bjda::gradcheck {

/// Builds a graph from leaf inputs. Non-scalar outputs are reduced by the
/// harness with a fixed random weighting before differentiation.
using Builder = std::function<Value(Tape&, const std::vector<Value>&)>;

struct Case {
  std::string name;
  std::vector<Matrix> inputs;
  Builder build;
  double tolerance = 1e-4;
};

struct Row {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string error;  // exception text when the case could not run
};

inline constexpr double kStep = 1e-4;

namespace detail {

inline Matrix uniform(Rng& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

/// Uniform in [-1, 1] with every |entry| >= 0.2 (clear of kinks at zero).
inline Matrix away_from_zero(Rng& rng, std::size_t r, std::size_t c) {
  Matrix m(r, c);
  for (double& v : m.data()) {
    const double u = rng.uniform(0.2, 1.0);
    v = rng.uniform() < 0.5 ? -u : u;
  }
  return m;
}

inline Matrix random_orthonormal(Rng& rng, std::size_t n, std::size_t k) {
  Matrix q(n, k);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) q(i, c) = rng.normal();
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += q(i, c) * q(i, p);
        for (std::size_t i = 0; i < n; ++i) q(i, c) -= dot * q(i, p);
      }
    double nrm = 0.0;
    for (std::size_t i = 0; i < n; ++i) nrm += q(i, c) * q(i, c);
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < n; ++i) q(i, c) /= nrm;
  }
  return q;
}

inline double evaluate(const Case& c, const std::vector<Matrix>& inputs, const Matrix* weights) {
  Tape t;
  std::vector<Value> leaves;
  for (const Matrix& m : inputs) leaves.push_back(t.constant(m));
  Value out = c.build(t, leaves);
  if (weights) out = ad::sum(ad::hadamard(out, t.constant(*weights)));
  return out.item();
}

}  // namespace detail

/// Central finite differences (h = 1e-4) against the tape gradient of every
/// input. Error per input is max|analytic - numeric| / max(max|analytic|,
/// max|numeric|) (absolute when both gradients vanish); the row reports the
/// worst input.
inline Row check(const Case& c, std::uint64_t seed = 1) {
  Row row;
  row.name = c.name;
  row.tolerance = c.tolerance;
  try {
    Tape t;
    std::vector<Value> leaves;
    for (const Matrix& m : c.inputs) leaves.push_back(t.variable(m));
    Value out = c.build(t, leaves);
    std::optional<Matrix> weights;
    if (out.rows() != 1 || out.cols() != 1) {
      Rng rng(seed * 7919 + out.rows() * 31 + out.cols());
      weights = detail::uniform(rng, out.rows(), out.cols(), 0.5, 1.5);
      out = ad::sum(ad::hadamard(out, t.constant(*weights)));
    }
    t.backward(out);

    double worst = 0.0;
    std::vector<Matrix> probe = c.inputs;
    for (std::size_t k = 0; k < c.inputs.size(); ++k) {
      const Matrix& analytic = leaves[k].grad();
      Matrix numeric(analytic.rows(), analytic.cols());
      for (std::size_t e = 0; e < numeric.size(); ++e) {
        const double x0 = c.inputs[k].data()[e];
        probe[k].data()[e] = x0 + kStep;
        const double fp = detail::evaluate(c, probe, weights ? &*weights : nullptr);
        probe[k].data()[e] = x0 - kStep;
        const double fm = detail::evaluate(c, probe, weights ? &*weights : nullptr);
        probe[k].data()[e] = x0;
        numeric.data()[e] = (fp - fm) / (2.0 * kStep);
      }
      const double scale = std::max(analytic.max_abs(), numeric.max_abs());
      const double diff = max_abs_diff(analytic, numeric);
      worst = std::max(worst, scale > 1e-10 ? diff / scale : diff);
    }
    row.max_rel_error = worst;
    row.passed = worst <= c.tolerance;
  } catch (const std::exception& e) {
    row.error = e.what();
    row.passed = false;
  }
  return row;
}

/// Full objective L_cls + 0.5 L_da + 0.3 L_dmc through G and F on a tiny model
/// (d=4, hidden=6, feat=5, C=3, n=m=4). Quantities the training step treats as
/// constants (prototypes, margins, pseudo-labels) are frozen at the base point
/// so finite differences see the same function.
inline Case end_to_end_case(std::uint64_t seed) {
  const ModelDims dims{4, 6, 5, 3};
  Rng rng(seed + 101);
  const std::vector<int> ys = {0, 1, 2, 0};
  const Matrix ys1h = one_hot(ys, 3);

  for (int attempt = 0;; ++attempt) {
    ModelParams p = init_xavier(dims, seed + static_cast<std::uint64_t>(attempt));
    for (std::size_t k = 1; k < ModelParams::kCount; k += 2)
      p.params[k] = detail::uniform(rng, 1, p.params[k].cols(), -0.1, 0.1);
    const Matrix xs = detail::uniform(rng, 4, 4), xt = detail::uniform(rng, 4, 4);

    Tape base;
    const BoundParams bp = bind(base, p);
    const Value gs = forward_G(bp, base.constant(xs));
    const Value gt = forward_G(bp, base.constant(xt));
    const Matrix pt = forward_F(bp, gt).value();
    const Matrix ps = forward_F(bp, gs).value();
    Prototypes protos(3, dims.feat);
    protos.update(gs.value(), ys);
    std::vector<int> labels = ys;
    for (const PseudoLabel& q : hard_pseudo_labels(pt)) labels.push_back(q.label);
    std::vector<double> stacked(ps.data().begin(), ps.data().end());
    stacked.insert(stacked.end(), pt.data().begin(), pt.data().end());
    const Matrix probs(8, 3, std::move(stacked));
    const KernelSpec spec;

    // Keep every DMC row >= 0.05 away from its hinge and nearest-negative tie.
    const Value g_all = ad::concat_rows(gs, gt);
    bool ok = true;
    for (std::size_t i = 0; i < 8 && ok; ++i) {
      std::vector<double> d(3);
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < dims.feat; ++k)
          s += std::pow(g_all.value()(i, k) - protos.means()(c, k), 2);
        d[c] = std::sqrt(s);
      }
      std::vector<double> negs;
      for (std::size_t c = 0; c < 3; ++c)
        if (static_cast<int>(c) != labels[i]) negs.push_back(d[c]);
      const double h = d[labels[i]] - std::min(negs[0], negs[1]) + entropy(probs.row(i));
      ok = std::abs(h) >= 0.05 && std::abs(negs[0] - negs[1]) >= 0.05;
    }
    if (!ok && attempt < 1000) continue;

    Case c;
    c.name = "end_to_end_objective";
    c.tolerance = 1e-3;
    c.inputs.assign(p.params.begin(), p.params.end());
    c.build = [xs, xt, ys1h, labels, probs, protos, spec](Tape& t, const std::vector<Value>& v) {
      BoundParams b;
      for (std::size_t k = 0; k < ModelParams::kCount; ++k) b.v[k] = v[k];
      const Value gs = forward_G(b, t.constant(xs));
      const Value gt = forward_G(b, t.constant(xt));
      const Value cls = l_cls(forward_F(b, gs), ys1h);
      const Value da = l_da(gs, ys1h, gt, forward_F(b, gt), spec);
      const Value dmc = l_dmc(ad::concat_rows(gs, gt), labels, probs, protos);
      return total_objective(cls, da, dmc, 0.5, 0.3);
    };
    return c;
  }
}

/// An exp op whose backward is deliberately off by 50%; the harness must flag it.
inline Case corrupted_case() {
  Rng rng(5);
  return {"corrupted_exp", {detail::uniform(rng, 3, 3)}, [](Tape& t, const std::vector<Value>& v) {
            Matrix out = v[0].value();
            for (double& x : out.data()) x = std::exp(x);
            const std::size_t ia = v[0].id();
            return t.record(std::move(out), {v[0]}, [ia](Tape& tp, std::size_t self) {
              tp.accumulate(ia, bjda::hadamard(tp.grad(self), tp.value(self)) * 1.5);
            });
          }};
}

/// Runs every case; the suite passes iff every row passes.
inline std::vector<Row> run(const std::vector<Case>& cases, std::uint64_t seed = 1) {
  std::vector<Row> rows;
  rows.reserve(cases.size());
  for (const Case& c : cases) rows.push_back(check(c, seed));
  return rows;
}

/// Tiny well-conditioned instances covering every tape op and every loss.
inline std::vector<Case> standard_cases(std::uint64_t seed) {
  using detail::away_from_zero;
  using detail::uniform;
  Rng rng(seed);
  std::vector<Case> cases;
  auto unary = [&](std::string name, Matrix x, std::function<Value(Value)> f) {
    cases.push_back({std::move(name), {std::move(x)},
                     [f](Tape&, const std::vector<Value>& v) { return f(v[0]); }});
  };
  auto binary = [&](std::string name, Matrix a, Matrix b, std::function<Value(Value, Value)> f) {
    cases.push_back({std::move(name), {std::move(a), std::move(b)},
                     [f](Tape&, const std::vector<Value>& v) { return f(v[0], v[1]); }});
  };

  binary("matmul", uniform(rng, 3, 4), uniform(rng, 4, 2), ad::matmul);
  binary("add", uniform(rng, 3, 3), uniform(rng, 3, 3), ad::add);
  binary("sub", uniform(rng, 3, 3), uniform(rng, 3, 3), ad::sub);
  binary("add_row", uniform(rng, 3, 4), uniform(rng, 1, 4), ad::add_row);
  binary("div_scalar", uniform(rng, 3, 4), uniform(rng, 1, 1, 0.5, 1.5), ad::div_scalar);
  binary("hadamard", uniform(rng, 3, 3), uniform(rng, 3, 3), [](Value a, Value b) { return ad::hadamard(a, b); });
  unary("scale", uniform(rng, 3, 3), [](Value a) { return ad::scale(a, -1.7); });
  unary("exp", uniform(rng, 3, 3), [](Value a) { return ad::exp(a); });
  unary("log", uniform(rng, 3, 3, 0.5, 1.5), [](Value a) { return ad::log(a); });
  unary("clamp_min", away_from_zero(rng, 3, 3), [](Value a) { return ad::clamp_min(a, 0.0); });
  unary("leaky_relu", away_from_zero(rng, 3, 4), [](Value a) { return ad::leaky_relu(a, 0.01); });
  unary("softmax_rows", uniform(rng, 3, 4), [](Value a) { return ad::softmax_rows(a); });
  unary("sum", uniform(rng, 3, 3), [](Value a) { return ad::sum(a); });
  unary("trace", uniform(rng, 4, 4), [](Value a) { return ad::trace(a); });
  unary("transpose", uniform(rng, 3, 2), [](Value a) { return ad::transpose(a); });
  binary("pairwise_sqdist", uniform(rng, 4, 3), uniform(rng, 4, 3), ad::pairwise_sqdist);
  unary("select_rows", uniform(rng, 4, 3), [](Value a) { return ad::select_rows(a, {2, 0, 2}); });
  binary("concat_rows", uniform(rng, 2, 3), uniform(rng, 3, 3), ad::concat_rows);
  {
    // Well-separated spectrum {3.0, 2.2, 1.4, 0.6}.
    const Matrix u = detail::random_orthonormal(rng, 5, 4);
    const Matrix v = detail::random_orthonormal(rng, 4, 4);
    const std::vector<double> s = {3.0, 2.2, 1.4, 0.6};
    const Matrix a = matmul(matmul(u, Matrix::diag(s)), v, Trans::none, Trans::transpose);
    unary("nuclear_norm", a, [](Value x) { return ad::nuclear_norm(x); });
  }
  unary("double_center", uniform(rng, 4, 5), [](Value a) { return double_center(a); });

  KernelSpec fixed_gauss;
  fixed_gauss.bandwidth_sq = 1.5;
  binary("kernel_matrix", uniform(rng, 4, 3), uniform(rng, 5, 3),
         [fixed_gauss](Value a, Value b) { return kernel_matrix(a, b, fixed_gauss); });
  binary("kbw_sq", uniform(rng, 5, 3), uniform(rng, 6, 3),
         [fixed_gauss](Value a, Value b) { return kbw_sq(a, b, fixed_gauss); });
  binary("kernel_matrix_auto_bandwidth", uniform(rng, 4, 3), uniform(rng, 5, 3),
         [](Value a, Value b) { return kernel_matrix(a, b, KernelSpec{}); });
  binary("kbw_sq_auto_bandwidth", uniform(rng, 5, 3), uniform(rng, 6, 3),
         [](Value a, Value b) { return kbw_sq(a, b, KernelSpec{}); });
  binary("kbw_sq_shared_bandwidth", uniform(rng, 5, 3), uniform(rng, 6, 3),
         [](Value a, Value b) { return kbw_sq(a, b, KernelSpec{}, true); });

  // Composite losses.
  {
    const std::vector<int> ys = {0, 1, 2, 0, 1};
    const Matrix ys1h = one_hot(ys, 3);
    cases.push_back({"l_da",
                     {uniform(rng, 5, 3), uniform(rng, 5, 3), uniform(rng, 5, 3, -2.0, 2.0)},
                     [ys1h, fixed_gauss](Tape&, const std::vector<Value>& v) {
                       return l_da(v[0], ys1h, v[1], ad::softmax_rows(v[2]), KernelSpec{});
                     }});
  }
  {
    const Matrix y = one_hot(std::vector<int>{0, 2, 1, 1}, 3);
    cases.push_back({"l_cls", {uniform(rng, 4, 3, -2.0, 2.0)},
                     [y](Tape&, const std::vector<Value>& v) {
                       return l_cls(ad::softmax_rows(v[0]), y);
                     }});
  }
  {
    // Resample until every row sits >= 0.1 from the hinge and from a nearest-negative tie.
    const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
    Prototypes protos(3, 3);
    protos.set(0, std::vector<double>{1.0, 0.0, 0.0});
    protos.set(1, std::vector<double>{0.0, 1.0, 0.0});
    protos.set(2, std::vector<double>{0.0, 0.0, 1.0});
    Matrix g, probs;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      g = uniform(rng, 6, 3, -0.5, 1.5);
      probs = Matrix(6, 3);
      for (std::size_t i = 0; i < 6; ++i) {
        double z = 0.0;
        for (std::size_t c = 0; c < 3; ++c) z += probs(i, c) = rng.uniform(0.1, 1.0);
        for (std::size_t c = 0; c < 3; ++c) probs(i, c) /= z;
      }
      bool ok = true;
      for (std::size_t i = 0; i < 6 && ok; ++i) {
        std::vector<double> d(3);
        for (std::size_t c = 0; c < 3; ++c) {
          double s = 0.0;
          for (std::size_t k = 0; k < 3; ++k) s += std::pow(g(i, k) - protos.means()(c, k), 2);
          d[c] = std::sqrt(s);
        }
        std::vector<double> negs;
        for (std::size_t c = 0; c < 3; ++c)
          if (static_cast<int>(c) != labels[i]) negs.push_back(d[c]);
        const double h = d[labels[i]] - std::min(negs[0], negs[1]) + entropy(probs.row(i));
        ok = std::abs(h) >= 0.1 && std::abs(negs[0] - negs[1]) >= 0.1 && d[labels[i]] > 0.1;
      }
      if (ok) break;
    }
    cases.push_back({"l_dmc", {g},
                     [labels, probs, protos](Tape&, const std::vector<Value>& v) {
                       return l_dmc(v[0], labels, probs, protos);
                     }});
  }
  {
    const std::vector<int> labels = {0, 0, 1, 1, 0, 1};
    const double margin = 0.5;
    Matrix g;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      g = uniform(rng, 6, 3);
      bool ok = true;
      auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0.0;
        for (std::size_t k = 0; k < 3; ++k) s += std::pow(g(i, k) - g(j, k), 2);
        return std::sqrt(s);
      };
      for (std::size_t i = 0; i < 6 && ok; ++i)
        for (std::size_t j = 0; j < 6 && ok; ++j) {
          if (i == j || labels[i] != labels[j]) continue;
          for (std::size_t k = 0; k < 6 && ok; ++k)
            if (labels[k] != labels[i]) ok = std::abs(dist(i, j) - dist(i, k) + margin) >= 0.05;
        }
      if (ok) break;
    }
    cases.push_back({"l_trip", {g},
                     [labels, margin](Tape&, const std::vector<Value>& v) {
                       return l_trip(v[0], labels, margin);
                     }});
  }
  {
    const Matrix ys1h = one_hot(std::vector<int>{0, 1, 2, 1}, 3);
    cases.push_back({"l_wd", {uniform(rng, 4, 3), uniform(rng, 4, 3), uniform(rng, 4, 3, -2.0, 2.0)},
                     [ys1h](Tape&, const std::vector<Value>& v) {
                       return l_wd(v[0], ys1h, v[1], ad::softmax_rows(v[2]));
                     }});
  }
  cases.push_back(end_to_end_case(seed));
  return cases;
}

}  // namespace bjda::gradcheck
