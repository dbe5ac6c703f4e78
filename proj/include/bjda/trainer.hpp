#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "autodiff.hpp"
#include "dataio.hpp"
#include "kernel.hpp"
#include "losses.hpp"
#include "matrix.hpp"
#include "model.hpp"
#include "random.hpp"

namespace bjda {

enum class Variant { full, no_da, no_dmc, triplet, source_only, wd };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_da: return "no_da";
    case Variant::no_dmc: return "no_dmc";
    case Variant::triplet: return "triplet";
    case Variant::source_only: return "source_only";
    case Variant::wd: return "wd";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::full, Variant::no_da, Variant::no_dmc, Variant::triplet,
                    Variant::source_only, Variant::wd})
    if (s == to_string(v)) return v;
  throw ConfigError("unknown variant '" + s + "'");
}

struct TrainConfig {
  double lambda1 = 0.5;
  double lambda2 = 0.3;
  double lr = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int t_max = 300;
  std::size_t batch_source = 64;
  std::size_t batch_target = 64;
  std::uint64_t seed = 0;
  Variant variant = Variant::full;
  double triplet_margin = 1.0;
  double confidence_threshold = 0.8;
  bool pl = false;
  KernelSpec kernel;
  double leaky_slope = 0.01;
  PrototypeMode proto_mode = PrototypeMode::batch;
  double ema_decay = 0.9;
  bool shared_bandwidth = false;
  std::size_t hidden = 1024;
  std::size_t feat = 512;
  int eval_every = 50;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError(m); };
    if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) fail("lambda1 and lambda2 must be >= 0");
    if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
    if (t_max < 1) fail("t_max must be >= 1");
    if (batch_source < 2 || batch_target < 2) fail("batch sizes must be >= 2");
    if (!(triplet_margin >= 0.0)) fail("triplet_margin must be >= 0");
    if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0))
      fail("confidence_threshold must lie in (0, 1)");
    if (!(ema_decay > 0.0 && ema_decay < 1.0)) fail("ema_decay must lie in (0, 1)");
    if (!(leaky_slope >= 0.0) || !std::isfinite(leaky_slope)) fail("leaky_slope must be >= 0");
    if (hidden < 1 || feat < 1) fail("hidden and feat must be >= 1");
    if (eval_every < 1) fail("eval_every must be >= 1");
    if (variant == Variant::wd && batch_source != batch_target)
      fail("variant wd needs batch_source == batch_target (equal-size assignment)");
    if (variant == Variant::wd && pl) fail("variant wd does not support pseudo-label filtering");
    kernel.validate();
  }

  friend bool operator==(const TrainConfig& a, const TrainConfig& b) {
    return a.lambda1 == b.lambda1 && a.lambda2 == b.lambda2 && a.lr == b.lr &&
           a.momentum == b.momentum && a.weight_decay == b.weight_decay && a.t_max == b.t_max &&
           a.batch_source == b.batch_source && a.batch_target == b.batch_target &&
           a.seed == b.seed && a.variant == b.variant && a.triplet_margin == b.triplet_margin &&
           a.confidence_threshold == b.confidence_threshold && a.pl == b.pl &&
           a.kernel.kind == b.kernel.kind && a.kernel.bandwidth_sq == b.kernel.bandwidth_sq &&
           a.leaky_slope == b.leaky_slope && a.proto_mode == b.proto_mode &&
           a.ema_decay == b.ema_decay && a.shared_bandwidth == b.shared_bandwidth &&
           a.hidden == b.hidden && a.feat == b.feat && a.eval_every == b.eval_every;
  }
};

struct IterationRecord {
  int iter = 0;
  LossBreakdown losses;
  std::optional<double> target_acc;
  std::optional<double> pl_accept;
};

struct RunMetrics {
  std::vector<IterationRecord> iterations;
  std::size_t prototype_skips = 0;   // L_dmc rows without usable prototypes
  std::size_t pl_skipped_terms = 0;  // terms dropped because < 2 target rows passed the filter
  std::size_t single_class_triplet_batches = 0;
};

struct TrainResult {
  ModelParams params;
  RunMetrics metrics;
};

/// One metrics line: {"iter","l_cls","l_da","l_dmc","total","target_acc","pl_accept"}.
inline std::string metrics_json_line(const IterationRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["l_cls"] = r.losses.l_cls;
  j["l_da"] = r.losses.l_da;
  j["l_dmc"] = r.losses.l_dmc;
  j["total"] = r.losses.total;
  j["target_acc"] = r.target_acc ? nlohmann::ordered_json(*r.target_acc) : nlohmann::ordered_json();
  j["pl_accept"] = r.pl_accept ? nlohmann::ordered_json(*r.pl_accept) : nlohmann::ordered_json();
  return j.dump();
}

/// Momentum SGD with coupled weight decay: v <- mu v + g + wd theta; theta <- theta - lr v.
inline void sgd_step(Matrix& theta, Matrix& velocity, const Matrix& grad, double lr,
                     double momentum, double weight_decay) {
  if (!theta.same_shape(velocity) || !theta.same_shape(grad))
    throw DimensionError("sgd_step: shapes " + theta.shape() + ", " + velocity.shape() + ", " +
                         grad.shape());
  auto t = theta.data();
  auto v = velocity.data();
  const auto g = grad.data();
  for (std::size_t k = 0; k < t.size(); ++k) {
    v[k] = momentum * v[k] + g[k] + weight_decay * t[k];
    t[k] -= lr * v[k];
  }
}

/// Epoch-style sampler: walks a shuffled permutation, reshuffling when exhausted.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, Rng& rng) : order_(n), rng_{&rng} {
    for (std::size_t i = 0; i < n; ++i) order_[i] = i;
    rng_->shuffle(order_);
  }
  std::vector<std::size_t> next(std::size_t k) {
    std::vector<std::size_t> out;
    out.reserve(k);
    while (out.size() < k) {
      if (pos_ == order_.size()) {
        rng_->shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  Rng* rng_;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::optional<double>> per_class;  // empty optional: class absent
  std::vector<std::size_t> per_class_count;
  std::vector<int> predictions;  // one per row, unlabeled rows included
  std::size_t excluded_unlabeled = 0;
};

/// Accuracy of the argmax prediction over the labeled rows of `data`.
inline EvalResult evaluate(const ModelParams& params, const Dataset& data, double leaky_slope = 0.01) {
  if (data.dim() != params.dims.input)
    throw DimensionError("evaluate: data has " + std::to_string(data.dim()) +
                         " features, model expects " + std::to_string(params.dims.input));
  EvalResult r;
  const std::size_t C = params.dims.classes;
  r.per_class.assign(C, std::nullopt);
  r.per_class_count.assign(C, 0);
  r.predictions.reserve(data.size());
  std::vector<std::size_t> hits(C, 0);
  std::size_t correct = 0, labeled = 0;

  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < data.size(); start += kChunk) {
    const std::size_t stop = std::min(data.size(), start + kChunk);
    std::vector<std::size_t> rows(stop - start);
    for (std::size_t i = start; i < stop; ++i) rows[i - start] = i;
    const Matrix probs = predict_proba(params, data.subset(rows).features, leaky_slope);
    const auto pl = hard_pseudo_labels(probs);
    for (std::size_t i = start; i < stop; ++i) {
      const int pred = pl[i - start].label;
      r.predictions.push_back(pred);
      const int y = data.labels[i];
      if (y < 0) {
        ++r.excluded_unlabeled;
        continue;
      }
      ++labeled;
      if (static_cast<std::size_t>(y) < C) {
        ++r.per_class_count[y];
        if (pred == y) ++hits[y];
      }
      if (pred == y) ++correct;
    }
  }
  r.accuracy = labeled ? static_cast<double>(correct) / static_cast<double>(labeled) : 0.0;
  for (std::size_t c = 0; c < C; ++c)
    if (r.per_class_count[c])
      r.per_class[c] = static_cast<double>(hits[c]) / static_cast<double>(r.per_class_count[c]);
  return r;
}

namespace detail {
inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = m.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}
inline bool has_labels(const Dataset& d) {
  return std::any_of(d.labels.begin(), d.labels.end(), [](int y) { return y >= 0; });
}
}  // namespace detail

using IterationObserver = std::function<void(const IterationRecord&)>;

/// Runs t_max mini-batch iterations of joint alignment training. Target labels,
/// when present, feed only the periodic accuracy in the metrics.
inline TrainResult train(const Dataset& source, const Dataset& target, const TrainConfig& cfg,
                         const IterationObserver& observer = {}) {
  cfg.validate();
  source.validate();
  target.validate();
  if (source.size() < 2 || target.size() < 2)
    throw InputError("train: source and target need at least 2 rows each");
  if (!source.fully_labeled()) throw InputError("train: source contains unlabeled rows");
  if (source.class_count != target.class_count)
    throw InputError("train: class count mismatch, source " + std::to_string(source.class_count) +
                     " vs target " + std::to_string(target.class_count));
  if (source.class_count < 2) throw InputError("train: need at least 2 classes");
  if (source.dim() != target.dim())
    throw InputError("train: feature dimension mismatch, source " + std::to_string(source.dim()) +
                     " vs target " + std::to_string(target.dim()));

  const std::size_t C = static_cast<std::size_t>(source.class_count);
  const ModelDims dims{source.dim(), cfg.hidden, cfg.feat, C};
  TrainResult result{init_xavier(dims, cfg.seed), {}};
  ModelParams& params = result.params;
  RunMetrics& metrics = result.metrics;

  // The optimisation loop sees target features only.
  const Matrix& target_x = target.features;
  const bool can_eval = detail::has_labels(target);

  Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  BatchSampler src_sampler(source.size(), rng);
  BatchSampler tgt_sampler(target.size(), rng);
  const std::size_t bs = std::min(cfg.batch_source, source.size());
  const std::size_t bt = std::min(cfg.batch_target, target.size());

  const bool use_da = cfg.lambda1 > 0.0 && (cfg.variant == Variant::full ||
                                            cfg.variant == Variant::no_dmc ||
                                            cfg.variant == Variant::triplet);
  const bool use_wd = cfg.lambda1 > 0.0 && cfg.variant == Variant::wd;
  const bool use_dmc = cfg.lambda2 > 0.0 && (cfg.variant == Variant::full ||
                                             cfg.variant == Variant::no_da ||
                                             cfg.variant == Variant::wd);
  const bool use_trip = cfg.lambda2 > 0.0 && cfg.variant == Variant::triplet;

  Prototypes protos(C, cfg.feat, cfg.proto_mode, cfg.ema_decay);

  for (int it = 1; it <= cfg.t_max; ++it) {
    const auto src_rows = src_sampler.next(bs);
    const auto tgt_rows = tgt_sampler.next(bt);
    std::vector<int> ys(bs);
    for (std::size_t i = 0; i < bs; ++i) ys[i] = source.labels[src_rows[i]];
    const Matrix ys_onehot = one_hot(ys, C);

    Tape tape;
    const BoundParams bp = bind(tape, params);
    const Value gs = forward_G(bp, tape.constant(detail::gather_rows(source.features, src_rows)),
                               cfg.leaky_slope);
    const Value gt = forward_G(bp, tape.constant(detail::gather_rows(target_x, tgt_rows)),
                               cfg.leaky_slope);
    protos.update(gs.value(), ys);
    const Value ps = forward_F(bp, gs);
    const Value pt = forward_F(bp, gt);

    const auto pseudo = hard_pseudo_labels(pt.value());
    std::vector<std::size_t> accepted;
    for (std::size_t i = 0; i < bt; ++i)
      if (!cfg.pl || pseudo[i].confidence > cfg.confidence_threshold) accepted.push_back(i);
    const bool target_rows_ok = accepted.size() >= 2;
    if (cfg.pl && !target_rows_ok && (use_da || use_dmc || use_trip)) ++metrics.pl_skipped_terms;

    const Value cls = l_cls(ps, ys_onehot);

    std::optional<Value> da;
    if (use_da) {
      da = l_da_terms(gs, ys_onehot, gt, pt, cfg.kernel, cfg.shared_bandwidth,
                      cfg.pl ? std::optional(accepted) : std::nullopt)
               .total;
    } else if (use_wd) {
      da = l_wd(gs, ys_onehot, gt, pt);
    }

    std::optional<Value> metric_term;
    if (use_dmc || use_trip) {
      // Source rows with true labels, plus target rows with hard pseudo-labels.
      Value g = gs;
      std::vector<int> labels = ys;
      Matrix probs = ps.value();
      if (target_rows_ok) {
        g = ad::concat_rows(gs, ad::select_rows(gt, accepted));
        Matrix tp = detail::gather_rows(pt.value(), accepted);
        std::vector<double> stacked(probs.data().begin(), probs.data().end());
        stacked.insert(stacked.end(), tp.data().begin(), tp.data().end());
        probs = Matrix(bs + accepted.size(), C, std::move(stacked));
        for (std::size_t i : accepted) labels.push_back(pseudo[i].label);
      }
      if (use_dmc) {
        DmcStats st;
        metric_term = l_dmc(g, labels, probs, protos, &st);
        metrics.prototype_skips += st.rows_skipped;
      } else {
        TripletStats st;
        metric_term = l_trip(g, labels, cfg.triplet_margin, &st);
        metrics.single_class_triplet_batches += st.single_class_batches;
      }
    }

    IterationRecord rec;
    rec.iter = it;
    const Value total = total_objective(cls, da, metric_term, cfg.lambda1, cfg.lambda2, &rec.losses);
    if (!std::isfinite(rec.losses.total))
      throw NumericalError("non-finite loss at iteration " + std::to_string(it));
    tape.backward(total);
    for (std::size_t k = 0; k < ModelParams::kCount; ++k)
      sgd_step(params.params[k], params.velocity[k], bp.v[k].grad(), cfg.lr, cfg.momentum,
               cfg.weight_decay);
    if (!params.all_finite())
      throw NumericalError("non-finite parameters after iteration " + std::to_string(it));

    if (cfg.pl) rec.pl_accept = static_cast<double>(accepted.size()) / static_cast<double>(bt);
    if (can_eval && (it % cfg.eval_every == 0 || it == cfg.t_max))
      rec.target_acc = evaluate(params, target, cfg.leaky_slope).accuracy;
    if (observer) observer(rec);
    metrics.iterations.push_back(rec);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Multi-variant, multi-seed suite
// ---------------------------------------------------------------------------

struct SuiteCell {
  Variant variant = Variant::full;
  std::uint64_t seed = 0;
  std::optional<double> accuracy;
  std::string error;
};

struct SuiteSummary {
  Variant variant = Variant::full;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for a single run
  std::size_t runs = 0;
};

struct SuiteResult {
  std::vector<SuiteCell> cells;
  std::vector<SuiteSummary> summary;
};

inline SuiteSummary summarize(Variant v, const std::vector<double>& acc) {
  SuiteSummary s;
  s.variant = v;
  s.runs = acc.size();
  if (acc.empty()) return s;
  double sum = 0.0;
  for (double a : acc) sum += a;
  s.mean = sum / static_cast<double>(acc.size());
  if (acc.size() > 1) {
    double ss = 0.0;
    for (double a : acc) ss += (a - s.mean) * (a - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(acc.size() - 1));
  }
  return s;
}

/// Trains every (variant, seed) cell and reports final target accuracy. A
/// failing cell is recorded with its error; the rest of the suite still runs.
inline SuiteResult run_suite(const Dataset& source, const Dataset& target, const TrainConfig& base,
                             const std::vector<Variant>& variants,
                             const std::vector<std::uint64_t>& seeds, unsigned jobs = 1) {
  if (seeds.empty()) throw ConfigError("run_suite: need at least one seed");
  if (variants.empty()) throw ConfigError("run_suite: need at least one variant");
  SuiteResult out;
  for (Variant v : variants)
    for (std::uint64_t s : seeds) out.cells.push_back({v, s, std::nullopt, {}});

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < out.cells.size(); k = next++) {
      SuiteCell& cell = out.cells[k];
      try {
        TrainConfig cfg = base;
        cfg.variant = cell.variant;
        cfg.seed = cell.seed;
        const TrainResult r = train(source, target, cfg);
        cell.accuracy = evaluate(r.params, target, cfg.leaky_slope).accuracy;
      } catch (const std::exception& e) {
        cell.error = e.what();
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(out.cells.size())));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (Variant v : variants) {
    std::vector<double> acc;
    for (const SuiteCell& c : out.cells)
      if (c.variant == v && c.accuracy) acc.push_back(*c.accuracy);
    out.summary.push_back(summarize(v, acc));
  }
  return out;
}

inline void write_suite_cells_csv(std::ostream& os, const SuiteResult& r) {
  os << "variant,seed,accuracy\n";
  char buf[64];
  for (const SuiteCell& c : r.cells) {
    os << to_string(c.variant) << ',' << c.seed << ',';
    if (c.accuracy) {
      std::snprintf(buf, sizeof buf, "%.10g", *c.accuracy);
      os << buf;
    } else {
      os << "failed";
    }
    os << '\n';
  }
}

inline void write_suite_summary_csv(std::ostream& os, const SuiteResult& r) {
  os << "variant,mean,std\n";
  char buf[96];
  for (const SuiteSummary& s : r.summary) {
    std::snprintf(buf, sizeof buf, "%.10g,%.10g", s.mean, s.std);
    os << to_string(s.variant) << ',' << buf << '\n';
  }
}

}  // namespace bjda
