#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "linalg.hpp"
#include "matrix.hpp"

namespace bjda {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Value {
 public:
  Value() = default;
  Value(Tape* tape, std::size_t id) : tape_{tape}, id_{id} {}

  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  /// Convenience accessor for 1x1 results.
  double item() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Append-only reverse-mode tape. Nodes are created in topological order,
/// so backward is a single reverse sweep over creation order.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value variable(Matrix m) { return push(std::move(m), true, {}); }
  Value constant(Matrix m) { return push(std::move(m), false, {}); }

  /// Registers an op result. `backward` is only kept (and later run) if some
  /// parent requires a gradient.
  Value record(Matrix value, std::initializer_list<Value> parents, BackwardFn backward) {
    bool needs = false;
    for (const Value& p : parents) {
      check_owned(p);
      needs = needs || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), needs, needs ? std::move(backward) : BackwardFn{});
  }

  const Matrix& value(std::size_t id) const { return nodes_.at(id).value; }
  const Matrix& grad(std::size_t id) const { return nodes_.at(id).grad; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// grad(id) += g, skipped for nodes that do not require a gradient.
  void accumulate(std::size_t id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    n.grad += g;
    n.grad_is_zero = false;
  }
  void accumulate(std::size_t id, Matrix&& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad_is_zero) {
      if (!n.grad.same_shape(g))
        throw DimensionError("accumulate: gradient shape " + g.shape() + " vs value " +
                             n.value.shape());
      n.grad = std::move(g);
      n.grad_is_zero = false;
      return;
    }
    n.grad += g;
  }

  /// Seeds d(root)/d(root) = ones and sweeps nodes in reverse creation order.
  /// Gradients accumulate across calls until zero_grad().
  void backward(Value root) {
    check_owned(root);
    Node& r = nodes_[root.id()];
    if (!r.requires_grad) return;
    accumulate(root.id(), Matrix(r.value.rows(), r.value.cols(), 1.0));
    for (std::size_t k = root.id() + 1; k-- > 0;) {
      Node& n = nodes_[k];
      if (n.backward && !n.grad_is_zero) n.backward(*this, k);
    }
  }

  void zero_grad() {
    for (Node& n : nodes_) {
      n.grad = Matrix(n.value.rows(), n.value.cols());
      n.grad_is_zero = true;
    }
  }

  void check_owned(const Value& v) const {
    if (v.tape() != this || v.id() >= nodes_.size())
      throw std::logic_error("Value does not belong to this tape");
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool grad_is_zero = true;
    BackwardFn backward;
  };

  Value push(Matrix m, bool requires_grad, BackwardFn fn) {
    Node n;
    n.grad = Matrix(m.rows(), m.cols());
    n.value = std::move(m);
    n.requires_grad = requires_grad;
    n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Value(this, nodes_.size() - 1);
  }

  std::deque<Node> nodes_;  // stable addresses: value() references survive later pushes
};

inline const Matrix& Value::value() const { return tape_->value(id_); }
inline const Matrix& Value::grad() const { return tape_->grad(id_); }
inline double Value::item() const {
  const Matrix& m = value();
  if (m.rows() != 1 || m.cols() != 1) throw DimensionError("item: value is " + m.shape());
  return m(0, 0);
}

namespace ad {

namespace detail {
inline Tape& same_tape(const Value& a, const Value& b) {
  if (a.tape() != b.tape() || a.tape() == nullptr)
    throw std::logic_error("operands live on different tapes");
  return *a.tape();
}
inline void require_same_shape(const Value& a, const Value& b, const char* op) {
  if (!a.value().same_shape(b.value()))
    throw DimensionError(std::string(op) + ": shape mismatch " + a.value().shape() + " vs " +
                         b.value().shape());
}
inline Matrix scalar(double v) { return Matrix(1, 1, v); }
}  // namespace detail

inline Value matmul(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  if (a.cols() != b.rows())
    throw DimensionError("matmul: " + a.value().shape() + " x " + b.value().shape());
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(bjda::matmul(a.value(), b.value()), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia))
      tp.accumulate(ia, bjda::matmul(g, tp.value(ib), Trans::none, Trans::transpose));
    if (tp.requires_grad(ib))
      tp.accumulate(ib, bjda::matmul(tp.value(ia), g, Trans::transpose, Trans::none));
  });
}

inline Value add(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "add");
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate(ib, tp.grad(self));
  });
}

inline Value sub(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "sub");
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() - b.value(), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate(ib, tp.grad(self) * -1.0);
  });
}

/// x [n x p] + bias [1 x p], bias broadcast over rows.
inline Value add_row(Value x, Value bias) {
  Tape& t = detail::same_tape(x, bias);
  if (bias.rows() != 1 || bias.cols() != x.cols())
    throw DimensionError("add_row: bias " + bias.value().shape() + " for input " +
                         x.value().shape());
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bias.value()(0, j);
  const std::size_t ix = x.id(), ib = bias.id();
  return t.record(std::move(out), {x, bias}, [ix, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    tp.accumulate(ix, g);
    if (tp.requires_grad(ib)) {
      Matrix gb(1, g.cols());
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      tp.accumulate(ib, std::move(gb));
    }
  });
}

inline Value scale(Value a, double s) {
  Tape& t = *a.tape();
  const std::size_t ia = a.id();
  return t.record(a.value() * s, {a},
                  [ia, s](Tape& tp, std::size_t self) { tp.accumulate(ia, tp.grad(self) * s); });
}

/// a / s for a 1x1 divisor s.
inline Value div_scalar(Value a, Value s) {
  Tape& t = detail::same_tape(a, s);
  if (s.rows() != 1 || s.cols() != 1)
    throw DimensionError("div_scalar: divisor must be 1x1, got " + s.value().shape());
  const double sv = s.item();
  if (sv == 0.0) throw DomainError("div_scalar: division by zero");
  const std::size_t ia = a.id(), is = s.id();
  Matrix out = a.value();
  for (double& v : out.data()) v /= sv;
  return t.record(std::move(out), {a, s}, [ia, is](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const double sv = tp.value(is)(0, 0);
    if (tp.requires_grad(ia)) {
      Matrix ga = g;
      for (double& v : ga.data()) v /= sv;
      tp.accumulate(ia, std::move(ga));
    }
    if (tp.requires_grad(is)) {
      const Matrix& av = tp.value(ia);
      double dot = 0.0;
      for (std::size_t k = 0; k < g.size(); ++k) dot += g.data()[k] * av.data()[k];
      tp.accumulate(is, Matrix(1, 1, -(dot / sv) / sv));
    }
  });
}

inline Value hadamard(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  detail::require_same_shape(a, b, "hadamard");
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(bjda::hadamard(a.value(), b.value()), {a, b},
                  [ia, ib](Tape& tp, std::size_t self) {
                    const Matrix& g = tp.grad(self);
                    if (tp.requires_grad(ia)) tp.accumulate(ia, bjda::hadamard(g, tp.value(ib)));
                    if (tp.requires_grad(ib)) tp.accumulate(ib, bjda::hadamard(g, tp.value(ia)));
                  });
}

inline Value exp(Value a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    tp.accumulate(ia, bjda::hadamard(tp.grad(self), tp.value(self)));
  });
}

/// Natural log; every entry must be strictly positive.
inline Value log(Value a) {
  Matrix out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double v = out.data()[k];
    if (!(v > 0.0))
      throw DomainError("log: nonpositive entry " + std::to_string(v) + " at (" +
                        std::to_string(k / out.cols()) + "," + std::to_string(k % out.cols()) +
                        ")");
    out.data()[k] = std::log(v);
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    Matrix g = tp.grad(self);
    const Matrix& x = tp.value(ia);
    for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] /= x.data()[k];
    tp.accumulate(ia, std::move(g));
  });
}

/// max(x, lo) entrywise; zero gradient where the floor is active.
inline Value clamp_min(Value a, double lo) {
  Matrix out = a.value();
  for (double& v : out.data()) v = std::max(v, lo);
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, lo](Tape& tp, std::size_t self) {
    Matrix g = tp.grad(self);
    const Matrix& x = tp.value(ia);
    for (std::size_t k = 0; k < g.size(); ++k)
      if (x.data()[k] < lo) g.data()[k] = 0.0;
    tp.accumulate(ia, std::move(g));
  });
}

inline Value leaky_relu(Value a, double slope = 0.01) {
  Matrix out = a.value();
  for (double& v : out.data())
    if (v < 0.0) v *= slope;
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, slope](Tape& tp, std::size_t self) {
    Matrix g = tp.grad(self);
    const Matrix& x = tp.value(ia);
    for (std::size_t k = 0; k < g.size(); ++k)
      if (x.data()[k] < 0.0) g.data()[k] *= slope;
    tp.accumulate(ia, std::move(g));
  });
}

/// Row-wise softmax with max subtraction.
inline Value softmax_rows(Value a) {
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : r) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      z += v;
    }
    for (double& v : r) v /= z;
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(self);
    Matrix g = tp.grad(self);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols(); ++j) dot += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < g.cols(); ++j) g(i, j) = y(i, j) * (g(i, j) - dot);
    }
    tp.accumulate(ia, std::move(g));
  });
}

inline Value sum(Value a) {
  const std::size_t ia = a.id();
  return a.tape()->record(detail::scalar(a.value().sum()), {a},
                          [ia](Tape& tp, std::size_t self) {
                            const Matrix& x = tp.value(ia);
                            tp.accumulate(ia, Matrix(x.rows(), x.cols(), tp.grad(self)(0, 0)));
                          });
}

inline Value trace(Value a) {
  const std::size_t ia = a.id();
  return a.tape()->record(detail::scalar(a.value().trace()), {a},
                          [ia](Tape& tp, std::size_t self) {
                            const std::size_t n = tp.value(ia).rows();
                            Matrix g(n, n);
                            for (std::size_t i = 0; i < n; ++i) g(i, i) = tp.grad(self)(0, 0);
                            tp.accumulate(ia, std::move(g));
                          });
}

inline Value transpose(Value a) {
  const std::size_t ia = a.id();
  return a.tape()->record(a.value().transpose(), {a}, [ia](Tape& tp, std::size_t self) {
    tp.accumulate(ia, tp.grad(self).transpose());
  });
}

/// Entry (i, j) = ||a_i - b_j||^2, summed directly so entries are exactly >= 0.
inline Value pairwise_sqdist(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  if (a.cols() != b.cols())
    throw DimensionError("pairwise_sqdist: feature dimension mismatch " + a.value().shape() +
                         " vs " + b.value().shape());
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const std::size_t n = av.rows(), m = bv.rows(), d = av.cols();
  Matrix out(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ai = av.row(i);
    for (std::size_t j = 0; j < m; ++j) {
      const auto bj = bv.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = ai[k] - bj[k];
        s += diff * diff;
      }
      out(i, j) = s;
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const Matrix& av = tp.value(ia);
    const Matrix& bv = tp.value(ib);
    const std::size_t n = av.rows(), m = bv.rows(), d = av.cols();
    if (tp.requires_grad(ia)) {
      // dA_i = 2 (rowsum(G)_i a_i - (G B)_i)
      Matrix ga = bjda::matmul(g, bv) * -2.0;
      for (std::size_t i = 0; i < n; ++i) {
        double rs = 0.0;
        for (std::size_t j = 0; j < m; ++j) rs += g(i, j);
        for (std::size_t k = 0; k < d; ++k) ga(i, k) += 2.0 * rs * av(i, k);
      }
      tp.accumulate(ia, std::move(ga));
    }
    if (tp.requires_grad(ib)) {
      Matrix gb = bjda::matmul(g, av, Trans::transpose, Trans::none) * -2.0;
      for (std::size_t j = 0; j < m; ++j) {
        double cs = 0.0;
        for (std::size_t i = 0; i < n; ++i) cs += g(i, j);
        for (std::size_t k = 0; k < d; ++k) gb(j, k) += 2.0 * cs * bv(j, k);
      }
      tp.accumulate(ib, std::move(gb));
    }
  });
}

/// Rows of `a` picked by `index` (duplicates allowed); gradients scatter back.
inline Value select_rows(Value a, std::vector<std::size_t> index) {
  const Matrix& av = a.value();
  Matrix out(index.size(), av.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= av.rows())
      throw DimensionError("select_rows: row " + std::to_string(index[r]) + " out of range for " +
                           av.shape());
    std::copy(av.row(index[r]).begin(), av.row(index[r]).end(), out.row(r).begin());
  }
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a},
                          [ia, index = std::move(index)](Tape& tp, std::size_t self) {
                            const Matrix& g = tp.grad(self);
                            Matrix ga(tp.value(ia).rows(), g.cols());
                            for (std::size_t r = 0; r < index.size(); ++r)
                              for (std::size_t j = 0; j < g.cols(); ++j) ga(index[r], j) += g(r, j);
                            tp.accumulate(ia, std::move(ga));
                          });
}

/// Stacks the rows of a on top of the rows of b.
inline Value concat_rows(Value a, Value b) {
  Tape& t = detail::same_tape(a, b);
  if (a.cols() != b.cols())
    throw DimensionError("concat_rows: column mismatch " + a.value().shape() + " vs " +
                         b.value().shape());
  std::vector<double> data(a.value().data().begin(), a.value().data().end());
  data.insert(data.end(), b.value().data().begin(), b.value().data().end());
  Matrix out(a.rows() + b.rows(), a.cols(), std::move(data));
  const std::size_t ia = a.id(), ib = b.id();
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(self);
    const std::size_t na = tp.value(ia).rows(), cols = g.cols();
    const auto gd = g.data();
    if (tp.requires_grad(ia))
      tp.accumulate(ia, Matrix(na, cols, std::vector<double>(gd.begin(), gd.begin() + na * cols)));
    if (tp.requires_grad(ib))
      tp.accumulate(ib, Matrix(g.rows() - na, cols,
                               std::vector<double>(gd.begin() + na * cols, gd.end())));
  });
}

/// Relative cutoff below which singular directions are dropped from the
/// nuclear-norm subgradient.
inline constexpr double kNuclearRankEps = 1e-8;

/// Sum of singular values. Backward uses g * U_r V_r^T over singular triplets
/// with sigma > kNuclearRankEps * sigma_max.
inline Value nuclear_norm(Value a) {
  linalg::Svd f = linalg::svd(a.value());
  double total = 0.0;
  for (double s : f.s) total += s;
  const std::size_t ia = a.id();
  return a.tape()->record(
      detail::scalar(total), {a}, [ia, f = std::move(f)](Tape& tp, std::size_t self) {
        const Matrix& x = tp.value(ia);
        Matrix g(x.rows(), x.cols());
        const double smax = f.s.empty() ? 0.0 : f.s.front();
        const double cutoff = kNuclearRankEps * smax;
        for (std::size_t k = 0; k < f.s.size(); ++k) {
          if (!(f.s[k] > cutoff)) continue;
          for (std::size_t i = 0; i < x.rows(); ++i) {
            const double uik = f.u(i, k);
            if (uik == 0.0) continue;
            for (std::size_t j = 0; j < x.cols(); ++j) g(i, j) += uik * f.v(j, k);
          }
        }
        tp.accumulate(ia, g * tp.grad(self)(0, 0));
      });
}

}  // namespace ad
}  // namespace bjda
