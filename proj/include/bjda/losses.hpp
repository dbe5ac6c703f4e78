#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "kernel.hpp"
#include "linalg.hpp"
#include "matrix.hpp"

namespace bjda {

inline constexpr double kProbFloor = 1e-12;

enum class PrototypeMode { batch, ema };

/// Per-class mean feature vectors with presence flags.
class Prototypes {
 public:
  Prototypes() = default;
  Prototypes(std::size_t classes, std::size_t feat_dim, PrototypeMode mode = PrototypeMode::batch,
             double ema_decay = 0.9)
      : means_(classes, feat_dim), present_(classes, false), mode_{mode}, ema_decay_{ema_decay} {
    if (mode == PrototypeMode::ema && !(ema_decay > 0.0 && ema_decay < 1.0))
      throw ConfigError("ema_decay must lie in (0, 1), got " + std::to_string(ema_decay));
  }

  std::size_t classes() const noexcept { return present_.size(); }
  std::size_t feat_dim() const noexcept { return means_.cols(); }
  PrototypeMode mode() const noexcept { return mode_; }
  bool present(std::size_t c) const { return c < present_.size() && present_[c]; }
  std::size_t present_count() const {
    std::size_t k = 0;
    for (bool p : present_) k += p;
    return k;
  }
  std::span<const double> prototype(std::size_t c) const {
    if (!present(c)) throw InputError("prototype for class " + std::to_string(c) + " is not set");
    return means_.row(c);
  }
  const Matrix& means() const noexcept { return means_; }

  /// Batch mode: prototypes become this batch's class means; classes absent
  /// from the batch are cleared. EMA mode: p <- rho p + (1 - rho) mean for
  /// classes in the batch, absent classes keep their previous value.
  void update(const Matrix& features, std::span<const int> labels) {
    if (features.rows() != labels.size())
      throw DimensionError("Prototypes::update: " + std::to_string(features.rows()) +
                           " feature rows for " + std::to_string(labels.size()) + " labels");
    if (features.cols() != means_.cols())
      throw DimensionError("Prototypes::update: feature dim " + std::to_string(features.cols()) +
                           " vs " + std::to_string(means_.cols()));
    const std::size_t C = classes();
    Matrix sums(C, features.cols());
    std::vector<std::size_t> counts(C, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= C)
        throw InputError("Prototypes::update: label " + std::to_string(y) + " out of range");
      ++counts[y];
      for (std::size_t j = 0; j < features.cols(); ++j) sums(y, j) += features(i, j);
    }
    for (std::size_t c = 0; c < C; ++c) {
      if (counts[c] == 0) {
        if (mode_ == PrototypeMode::batch) present_[c] = false;
        continue;
      }
      const double inv = 1.0 / static_cast<double>(counts[c]);
      for (std::size_t j = 0; j < features.cols(); ++j) {
        const double mean = sums(c, j) * inv;
        means_(c, j) = (mode_ == PrototypeMode::ema && present_[c])
                           ? ema_decay_ * means_(c, j) + (1.0 - ema_decay_) * mean
                           : mean;
      }
      present_[c] = true;
    }
  }

  /// Directly sets one prototype (tests, restored state).
  void set(std::size_t c, std::span<const double> p) {
    if (c >= classes() || p.size() != feat_dim())
      throw DimensionError("Prototypes::set: bad class or dimension");
    std::copy(p.begin(), p.end(), means_.row(c).begin());
    present_[c] = true;
  }

 private:
  Matrix means_;
  std::vector<bool> present_;
  PrototypeMode mode_ = PrototypeMode::batch;
  double ema_decay_ = 0.9;
};

struct LossBreakdown {
  double l_cls = 0.0;
  double l_da = 0.0;
  double l_dmc = 0.0;
  double total = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

inline Matrix one_hot(std::span<const int> labels, std::size_t classes) {
  Matrix out(labels.size(), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw InputError("one_hot: label " + std::to_string(labels[i]) + " outside [0, " +
                       std::to_string(classes) + ")");
    out(i, labels[i]) = 1.0;
  }
  return out;
}

/// Prediction entropy -sum_c p_c ln p_c, probabilities floored at 1e-12.
inline double entropy(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs) {
    const double q = std::max(p, kProbFloor);
    h -= q * std::log(q);
  }
  return h;
}

inline void require_probability_rows(const Matrix& p, const char* who, double tol = 1e-6) {
  for (std::size_t i = 0; i < p.rows(); ++i) {
    double s = 0.0;
    for (double v : p.row(i)) s += v;
    if (std::abs(s - 1.0) > tol)
      throw InputError(std::string(who) + ": row " + std::to_string(i) +
                       " is not a probability vector (sum " + std::to_string(s) + ")");
  }
}

// ---------------------------------------------------------------------------
// Bures joint distribution alignment
// ---------------------------------------------------------------------------

struct AlignmentTerms {
  Value feature;
  std::optional<Value> label;  // empty when too few target rows survive filtering
  Value total;
};

/// Feature term kbw^2(G(Xs), G(Xt)) plus label term kbw^2(Ys, soft Yt).
/// `label_rows` restricts the label term to a subset of target rows
/// (confidence filtering); fewer than two rows drops the label term.
inline AlignmentTerms l_da_terms(Value g_s, const Matrix& y_s_onehot, Value g_t, Value y_t_soft,
                                 const KernelSpec& spec, bool shared_bandwidth = false,
                                 std::optional<std::vector<std::size_t>> label_rows = std::nullopt) {
  if (y_s_onehot.rows() != g_s.rows() || y_t_soft.rows() != g_t.rows())
    throw DimensionError("l_da: label rows do not match feature rows");
  if (y_s_onehot.cols() != y_t_soft.cols())
    throw DimensionError("l_da: class dimension mismatch " + y_s_onehot.shape() + " vs " +
                         y_t_soft.value().shape());
  require_probability_rows(y_t_soft.value(), "l_da soft target labels");

  AlignmentTerms out;
  out.feature = kbw_sq(g_s, g_t, spec, shared_bandwidth);
  Value yt = y_t_soft;
  if (label_rows) yt = ad::select_rows(y_t_soft, *label_rows);
  if (yt.rows() >= 2) {
    const Value ys = g_s.tape()->constant(y_s_onehot);
    out.label = kbw_sq(ys, yt, spec, shared_bandwidth);
    out.total = ad::add(out.feature, *out.label);
  } else {
    out.total = out.feature;
  }
  return out;
}

inline Value l_da(Value g_s, const Matrix& y_s_onehot, Value g_t, Value y_t_soft,
                  const KernelSpec& spec, bool shared_bandwidth = false) {
  return l_da_terms(g_s, y_s_onehot, g_t, y_t_soft, spec, shared_bandwidth).total;
}

// ---------------------------------------------------------------------------
// Source cross-entropy
// ---------------------------------------------------------------------------

inline Value l_cls(Value pred_probs, const Matrix& y_onehot) {
  if (!pred_probs.value().same_shape(y_onehot))
    throw DimensionError("l_cls: predictions " + pred_probs.value().shape() + " vs labels " +
                         y_onehot.shape());
  if (pred_probs.rows() == 0) throw InputError("l_cls: empty batch");
  Tape& t = *pred_probs.tape();
  const Value logp = ad::log(ad::clamp_min(pred_probs, kProbFloor));
  const Value picked = ad::sum(ad::hadamard(logp, t.constant(y_onehot)));
  return ad::scale(picked, -1.0 / static_cast<double>(pred_probs.rows()));
}

// ---------------------------------------------------------------------------
// Dynamic-margin contrastive loss
// ---------------------------------------------------------------------------

struct DmcStats {
  std::size_t rows_used = 0;
  std::size_t rows_skipped = 0;  // label without a prototype, or no negative prototype
};

/// sum_i max{ ||g_i - p^{y_i}|| - min_{c != y_i} ||g_i - p^c|| + alpha_i, 0 },
/// alpha_i the entropy of pred_probs row i. Prototypes, alpha and the
/// predictions are constants here: the gradient reaches g only. Ties in the
/// nearest negative go to the lowest class index.
inline Value l_dmc(Value g, std::span<const int> labels, const Matrix& pred_probs,
                   const Prototypes& protos, DmcStats* stats = nullptr) {
  const Matrix& gv = g.value();
  if (labels.size() != gv.rows() || pred_probs.rows() != gv.rows())
    throw DimensionError("l_dmc: " + std::to_string(gv.rows()) + " rows, " +
                         std::to_string(labels.size()) + " labels, " +
                         std::to_string(pred_probs.rows()) + " prediction rows");
  if (gv.cols() != protos.feat_dim())
    throw DimensionError("l_dmc: feature dim " + std::to_string(gv.cols()) + " vs prototypes " +
                         std::to_string(protos.feat_dim()));

  const std::size_t n = gv.rows(), p = gv.cols(), C = protos.classes();
  auto dist = [&](std::size_t i, std::span<const double> q) {
    double s = 0.0;
    for (std::size_t k = 0; k < p; ++k) {
      const double d = gv(i, k) - q[k];
      s += d * d;
    }
    return std::sqrt(s);
  };

  // Per active row: positive and negative prototype class plus both distances.
  struct Active {
    std::size_t row, pos, neg;
    double dpos, dneg;
  };
  std::vector<Active> active;
  DmcStats st;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= C || !protos.present(y)) {
      ++st.rows_skipped;
      continue;
    }
    std::optional<std::size_t> neg;
    double dneg = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      if (c == static_cast<std::size_t>(y) || !protos.present(c)) continue;
      const double d = dist(i, protos.prototype(c));
      if (!neg || d < dneg) {
        neg = c;
        dneg = d;
      }
    }
    if (!neg) {
      ++st.rows_skipped;
      continue;
    }
    ++st.rows_used;
    const double dpos = dist(i, protos.prototype(y));
    const double alpha = entropy(pred_probs.row(i));
    const double h = dpos - dneg + alpha;
    if (h > 0.0) {
      loss += h;
      active.push_back({i, static_cast<std::size_t>(y), *neg, dpos, dneg});
    }
  }
  if (stats) *stats = st;

  const std::size_t ig = g.id();
  return g.tape()->record(
      Matrix(1, 1, loss), {g},
      [ig, active = std::move(active), means = protos.means()](Tape& tp, std::size_t self) {
        const double w = tp.grad(self)(0, 0);
        const Matrix& gv = tp.value(ig);
        Matrix grad(gv.rows(), gv.cols());
        for (const Active& a : active) {
          for (std::size_t k = 0; k < gv.cols(); ++k) {
            double d = 0.0;
            if (a.dpos > 0.0) d += (gv(a.row, k) - means(a.pos, k)) / a.dpos;
            if (a.dneg > 0.0) d -= (gv(a.row, k) - means(a.neg, k)) / a.dneg;
            grad(a.row, k) += w * d;
          }
        }
        tp.accumulate(ig, std::move(grad));
      });
}

// ---------------------------------------------------------------------------
// Fixed-margin triplet loss (ablation baseline)
// ---------------------------------------------------------------------------

struct TripletStats {
  std::size_t triplets = 0;
  std::size_t single_class_batches = 0;
};

/// Batch-all triplet loss: for each anchor i, every same-class j != i is a
/// positive and every other-class k a negative;
///   sum max{ ||g_i - g_j|| - ||g_i - g_k|| + margin, 0 }.
inline Value l_trip(Value g, std::span<const int> labels, double margin,
                    TripletStats* stats = nullptr) {
  if (!(margin >= 0.0)) throw ConfigError("l_trip: margin must be >= 0");
  const Matrix& gv = g.value();
  const std::size_t n = gv.rows(), p = gv.cols();
  if (labels.size() != n)
    throw DimensionError("l_trip: " + std::to_string(n) + " rows for " +
                         std::to_string(labels.size()) + " labels");

  TripletStats st;
  bool multi = false;
  for (std::size_t i = 1; i < n && !multi; ++i) multi = labels[i] != labels[0];
  if (!multi) {
    st.single_class_batches = 1;
    if (stats) *stats = st;
    return g.tape()->record(Matrix(1, 1, 0.0), {g}, [](Tape&, std::size_t) {});
  }

  Matrix dist(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < p; ++k) {
        const double d = gv(i, k) - gv(j, k);
        s += d * d;
      }
      dist(i, j) = dist(j, i) = std::sqrt(s);
    }

  // coef(i, j): net weight of d(i, j) across active triples.
  Matrix coef(n, n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || labels[j] != labels[i]) continue;
      for (std::size_t k = 0; k < n; ++k) {
        if (labels[k] == labels[i]) continue;
        ++st.triplets;
        const double h = dist(i, j) - dist(i, k) + margin;
        if (h > 0.0) {
          loss += h;
          coef(i, j) += 1.0;
          coef(i, k) -= 1.0;
        }
      }
    }
  if (stats) *stats = st;

  const std::size_t ig = g.id();
  return g.tape()->record(Matrix(1, 1, loss), {g},
                          [ig, coef = std::move(coef), dist = std::move(dist)](Tape& tp,
                                                                               std::size_t self) {
                            const double w = tp.grad(self)(0, 0);
                            const Matrix& gv = tp.value(ig);
                            Matrix grad(gv.rows(), gv.cols());
                            for (std::size_t i = 0; i < gv.rows(); ++i)
                              for (std::size_t j = 0; j < gv.rows(); ++j) {
                                const double c = coef(i, j);
                                if (c == 0.0 || dist(i, j) == 0.0) continue;
                                const double s = w * c / dist(i, j);
                                for (std::size_t k = 0; k < gv.cols(); ++k) {
                                  const double u = s * (gv(i, k) - gv(j, k));
                                  grad(i, k) += u;
                                  grad(j, k) -= u;
                                }
                              }
                            tp.accumulate(ig, std::move(grad));
                          });
}

// ---------------------------------------------------------------------------
// Exact-OT alignment (the "+WD" ablation): joint cost split into a feature
// and a label assignment problem, each solved exactly.
// ---------------------------------------------------------------------------

/// (1/n) sum_i ||a_i - b_pi(i)||^2 for the optimal assignment pi, which is held
/// fixed in the backward pass.
inline Value ot_assignment_cost(Value a, Value b) {
  if (a.rows() != b.rows())
    throw InputError("ot_assignment_cost: unequal sample counts " + std::to_string(a.rows()) +
                     " and " + std::to_string(b.rows()));
  if (a.rows() == 0) throw InputError("ot_assignment_cost: empty sample sets");
  const Value cost = ad::pairwise_sqdist(a, b);
  const std::vector<std::size_t> assign = linalg::hungarian(cost.value());
  Matrix mask(a.rows(), b.rows());
  for (std::size_t i = 0; i < assign.size(); ++i) mask(i, assign[i]) = 1.0;
  const Value picked = ad::sum(ad::hadamard(cost, a.tape()->constant(std::move(mask))));
  return ad::scale(picked, 1.0 / static_cast<double>(a.rows()));
}

inline Value l_wd(Value g_s, const Matrix& y_s_onehot, Value g_t, Value y_t_soft) {
  require_probability_rows(y_t_soft.value(), "l_wd soft target labels");
  const Value ys = g_s.tape()->constant(y_s_onehot);
  return ad::add(ot_assignment_cost(g_s, g_t), ot_assignment_cost(ys, y_t_soft));
}

// ---------------------------------------------------------------------------
// Total objective
// ---------------------------------------------------------------------------

/// L_cls + lambda1 L_da + lambda2 L_dmc. A missing term, or one whose weight is
/// zero, is left out of the graph entirely.
inline Value total_objective(Value cls, std::optional<Value> da, std::optional<Value> dmc,
                             double lambda1, double lambda2, LossBreakdown* parts = nullptr) {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0))
    throw ConfigError("total_objective: lambda1 and lambda2 must be nonnegative, got " +
                      std::to_string(lambda1) + ", " + std::to_string(lambda2));
  Value total = cls;
  LossBreakdown b;
  b.lambda1 = lambda1;
  b.lambda2 = lambda2;
  b.l_cls = cls.item();
  if (da && lambda1 > 0.0) {
    b.l_da = da->item();
    total = ad::add(total, ad::scale(*da, lambda1));
  }
  if (dmc && lambda2 > 0.0) {
    b.l_dmc = dmc->item();
    total = ad::add(total, ad::scale(*dmc, lambda2));
  }
  b.total = total.item();
  if (parts) *parts = b;
  return total;
}

}  // namespace bjda
