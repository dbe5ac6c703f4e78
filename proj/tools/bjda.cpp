// bjda: synthesize domain pairs, train, evaluate, compare distributions and
// self-check gradients from the command line.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <bjda/bjda.hpp>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kFailed = 1, kUsage = 2, kIo = 3, kNumerical = 4 };

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw bjda::IoError("cannot write " + path.string());
  f << text;
  if (!f) throw bjda::IoError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw bjda::IoError("cannot create directory " + dir.string());
}

// Loading failures of any kind are input problems, not numerical ones.
bjda::Dataset load_input(const fs::path& path) {
  try {
    return bjda::load_csv(path);
  } catch (const bjda::IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw bjda::IoError(e.what());
  }
}

// Config echo with numbers and booleans kept typed.
ordered_json config_json(const bjda::TrainConfig& cfg) {
  ordered_json j = ordered_json::object();
  std::istringstream in(bjda::emit_config(cfg));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    const std::string key = line.substr(0, eq), val = line.substr(eq + 3);
    std::uint64_t whole = 0;
    double num = 0.0;
    if (val == "true" || val == "false") j[key] = val == "true";
    else if (bjda::detail::parse_number(val, whole)) j[key] = whole;
    else if (bjda::detail::parse_number(val, num)) j[key] = num;
    else j[key] = val;
  }
  return j;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto part : bjda::detail::split_commas(s))
    if (!part.empty()) out.emplace_back(part);
  return out;
}

int run_synth(const bjda::SynthSpec& spec, const fs::path& out) {
  const auto [source, target] = bjda::gen_rotated_blobs(spec);
  ensure_dir(out);
  bjda::save_csv(source, out / "source.csv");
  bjda::save_csv(target, out / "target.csv");
  ordered_json j;
  j["classes"] = spec.classes;
  j["dim"] = spec.dim;
  j["per_class"] = spec.per_class;
  j["shift_angle"] = spec.shift_angle;
  j["noise_sigma"] = spec.noise_sigma;
  j["projection_seed"] = spec.projection_seed;
  j["sample_seed"] = spec.sample_seed;
  write_text(out / "spec.json", j.dump(2) + "\n");
  std::cout << "wrote " << source.size() << " source and " << target.size() << " target rows to "
            << out.string() << "\n";
  return kOk;
}

bjda::TrainConfig resolve_config(const std::string& config_path,
                                 const std::vector<std::string>& overrides) {
  bjda::TrainConfig cfg;
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw bjda::IoError("cannot open config " + config_path);
    std::stringstream ss;
    ss << f.rdbuf();
    cfg = bjda::parse_config(ss.str());
  }
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw bjda::ConfigError("--set expects key=value, got '" + kv + "'");
    bjda::apply_config_value(cfg, std::string(bjda::detail::trim(kv.substr(0, eq))),
                             bjda::detail::trim(std::string_view(kv).substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

int run_train(const fs::path& source_path, const fs::path& target_path,
              const bjda::TrainConfig& cfg, const fs::path& out, bool quiet) {
  const bjda::Dataset source = load_input(source_path);
  const bjda::Dataset target = load_input(target_path);
  ensure_dir(out);
  std::ofstream metrics(out / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw bjda::IoError("cannot write " + (out / "metrics.jsonl").string());

  const auto t0 = std::chrono::steady_clock::now();
  const bjda::TrainResult r = bjda::train(source, target, cfg, [&](const bjda::IterationRecord& rec) {
    metrics << bjda::metrics_json_line(rec) << '\n';
    if (!quiet && rec.target_acc)
      std::cerr << "iter " << rec.iter << "  total " << rec.losses.total << "  target_acc "
                << *rec.target_acc << "\n";
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  metrics.close();
  if (!metrics) throw bjda::IoError("write failed for " + (out / "metrics.jsonl").string());

  bjda::save_checkpoint(r.params, out / "model.bin");

  ordered_json s;
  const bool labeled = std::any_of(target.labels.begin(), target.labels.end(), [](int y) { return y >= 0; });
  const double acc = labeled ? bjda::evaluate(r.params, target, cfg.leaky_slope).accuracy : 0.0;
  s["final_target_accuracy"] = labeled ? ordered_json(acc) : ordered_json();
  s["iterations"] = cfg.t_max;
  s["prototype_skips"] = r.metrics.prototype_skips;
  s["pl_skipped_terms"] = r.metrics.pl_skipped_terms;
  s["single_class_triplet_batches"] = r.metrics.single_class_triplet_batches;
  s["config"] = config_json(cfg);
  s["wall_clock_seconds"] = seconds;
  write_text(out / "summary.json", s.dump(2) + "\n");
  if (labeled) std::printf("final target accuracy %.4f\n", acc);
  return kOk;
}

int run_eval(const fs::path& model_path, const fs::path& data_path, double slope) {
  const bjda::ModelParams p = bjda::load_checkpoint(model_path);
  const bjda::Dataset d = load_input(data_path);
  const bjda::EvalResult r = bjda::evaluate(p, d, slope);
  std::printf("accuracy %.6f\n", r.accuracy);
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    if (r.per_class[c]) std::printf("class %zu %.6f (n=%zu)\n", c, *r.per_class[c], r.per_class_count[c]);
    else std::printf("class %zu absent\n", c);
  }
  if (r.excluded_unlabeled) std::printf("unlabeled rows excluded %zu\n", r.excluded_unlabeled);
  return kOk;
}

int run_distance(const fs::path& a_path, const fs::path& b_path, const std::string& kind,
                 const std::string& kernel) {
  const bjda::Dataset a = load_input(a_path);
  const bjda::Dataset b = load_input(b_path);
  if (a.dim() != b.dim())
    throw bjda::InputError("feature dimensions differ: " + std::to_string(a.dim()) + " vs " +
                           std::to_string(b.dim()));
  if (kind == "kbw") {
    bjda::KernelSpec spec;
    spec.kind = kernel == "linear" ? bjda::KernelKind::linear : bjda::KernelKind::gaussian;
    std::printf("kbw_distance %.12f\n", std::sqrt(bjda::kbw_sq(a.features, b.features, spec)));
  } else if (kind == "bures") {
    const double d = bjda::closed_form_bures(bjda::empirical_covariance(a.features),
                                             bjda::empirical_covariance(b.features));
    std::printf("bures_distance %.12f\n", d);
  } else {
    std::printf("ot_squared_cost %.12f\n", bjda::exact_wasserstein_sq(a.features, b.features));
  }
  return kOk;
}

int run_gradcheck(std::uint64_t seed, bool corrupt) {
  auto cases = bjda::gradcheck::standard_cases(seed);
  if (corrupt) cases.push_back(bjda::gradcheck::corrupted_case());
  const auto rows = bjda::gradcheck::run(cases, seed);
  bool ok = true;
  std::printf("%-30s %14s %10s  %s\n", "op", "max_rel_error", "tolerance", "status");
  for (const auto& r : rows) {
    ok = ok && r.passed;
    std::printf("%-30s %14.3e %10.0e  %s%s\n", r.name.c_str(), r.max_rel_error, r.tolerance,
                r.passed ? "ok" : "FAIL", r.error.empty() ? "" : ("  " + r.error).c_str());
  }
  std::printf("%s\n", ok ? "all gradients agree with finite differences" : "gradient check FAILED");
  return ok ? kOk : kFailed;
}

int run_suite_cmd(const fs::path& source_path, const fs::path& target_path,
                  const bjda::TrainConfig& base, const std::string& variants_arg,
                  const std::string& seeds_arg, unsigned jobs, const fs::path& out) {
  std::vector<bjda::Variant> variants;
  for (const auto& v : split_list(variants_arg)) variants.push_back(bjda::parse_variant(v));
  std::vector<std::uint64_t> seeds;
  for (const auto& s : split_list(seeds_arg)) {
    std::uint64_t v = 0;
    if (!bjda::detail::parse_number(s, v)) throw bjda::ConfigError("bad seed '" + s + "'");
    seeds.push_back(v);
  }
  const bjda::Dataset source = load_input(source_path);
  const bjda::Dataset target = load_input(target_path);
  const bjda::SuiteResult r = bjda::run_suite(source, target, base, variants, seeds, jobs);
  ensure_dir(out);
  std::ostringstream cells, summary;
  bjda::write_suite_cells_csv(cells, r);
  bjda::write_suite_summary_csv(summary, r);
  write_text(out / "cells.csv", cells.str());
  write_text(out / "summary.csv", summary.str());
  std::cout << summary.str();
  for (const auto& c : r.cells)
    if (!c.error.empty())
      std::cerr << "cell " << bjda::to_string(c.variant) << "/" << c.seed << " failed: " << c.error << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bures joint distribution alignment for unsupervised domain adaptation"};
  app.require_subcommand(1);

  bjda::SynthSpec synth;
  std::string synth_out = "data";
  auto* cmd_synth = app.add_subcommand("synth", "Write a rotated-blobs source/target pair");
  cmd_synth->add_option("--classes", synth.classes, "Number of classes")->capture_default_str();
  cmd_synth->add_option("--dim", synth.dim, "Ambient feature dimension")->capture_default_str();
  cmd_synth->add_option("--per-class", synth.per_class, "Rows per class and domain")->capture_default_str();
  cmd_synth->add_option("--shift-angle", synth.shift_angle, "Target rotation in degrees")->capture_default_str();
  cmd_synth->add_option("--noise", synth.noise_sigma, "Gaussian noise sigma")->capture_default_str();
  cmd_synth->add_option("--projection-seed", synth.projection_seed)->capture_default_str();
  cmd_synth->add_option("--sample-seed", synth.sample_seed)->capture_default_str();
  cmd_synth->add_option("--out", synth_out, "Output directory")->capture_default_str();

  std::string source_path, target_path, config_path, out_dir = "run";
  std::vector<std::string> overrides;
  bool quiet = false;
  auto* cmd_train = app.add_subcommand("train", "Train one model and write metrics, checkpoint and summary");
  cmd_train->add_option("--source", source_path, "Labeled source CSV")->required();
  cmd_train->add_option("--target", target_path, "Target CSV (labels used only for reporting)")->required();
  cmd_train->add_option("--config", config_path, "key = value config file");
  cmd_train->add_option("--set", overrides, "Override one config key (key=value), repeatable");
  cmd_train->add_option("--out", out_dir, "Output directory")->capture_default_str();
  cmd_train->add_flag("--quiet", quiet, "No progress on stderr");

  std::string model_path, data_path;
  double eval_slope = 0.01;
  auto* cmd_eval = app.add_subcommand("eval", "Accuracy of a checkpoint on a labeled CSV");
  cmd_eval->add_option("--model", model_path)->required();
  cmd_eval->add_option("--data", data_path)->required();
  cmd_eval->add_option("--leaky-slope", eval_slope)->capture_default_str();

  std::string a_path, b_path, kind = "kbw", kernel = "gauss";
  auto* cmd_dist = app.add_subcommand("distance", "Distance between the rows of two CSVs");
  cmd_dist->add_option("--a", a_path)->required();
  cmd_dist->add_option("--b", b_path)->required();
  cmd_dist->add_option("--kind", kind, "kbw | bures | ot")
      ->check(CLI::IsMember({"kbw", "bures", "ot"}))
      ->capture_default_str();
  cmd_dist->add_option("--kernel", kernel, "gauss | linear (kind=kbw)")
      ->check(CLI::IsMember({"gauss", "linear"}))
      ->capture_default_str();

  std::uint64_t gc_seed = 1;
  bool gc_corrupt = false;
  auto* cmd_gc = app.add_subcommand("gradcheck", "Compare every backward rule with central differences");
  cmd_gc->add_option("--seed", gc_seed)->capture_default_str();
  cmd_gc->add_flag("--corrupt", gc_corrupt)->group("");

  std::string variants_arg = "full,no_da,no_dmc,source_only", seeds_arg = "0,1,2,3,4";
  unsigned jobs = 1;
  auto* cmd_suite = app.add_subcommand("suite", "Train a variant x seed grid and summarize accuracy");
  cmd_suite->add_option("--source", source_path)->required();
  cmd_suite->add_option("--target", target_path)->required();
  cmd_suite->add_option("--config", config_path);
  cmd_suite->add_option("--set", overrides, "Override one config key (key=value), repeatable");
  cmd_suite->add_option("--variants", variants_arg, "Comma-separated variants")->capture_default_str();
  cmd_suite->add_option("--seeds", seeds_arg, "Comma-separated seeds")->capture_default_str();
  cmd_suite->add_option("--jobs", jobs, "Cells trained in parallel")->capture_default_str();
  cmd_suite->add_option("--out", out_dir, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*cmd_synth) return run_synth(synth, synth_out);
    if (*cmd_train)
      return run_train(source_path, target_path, resolve_config(config_path, overrides), out_dir, quiet);
    if (*cmd_eval) return run_eval(model_path, data_path, eval_slope);
    if (*cmd_dist) return run_distance(a_path, b_path, kind, kernel);
    if (*cmd_gc) return run_gradcheck(gc_seed, gc_corrupt);
    if (*cmd_suite)
      return run_suite_cmd(source_path, target_path, resolve_config(config_path, overrides),
                           variants_arg, seeds_arg, jobs, out_dir);
  } catch (const bjda::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const bjda::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  } catch (const bjda::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const bjda::DomainError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}
