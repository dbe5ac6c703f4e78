#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>

#include "dataio.hpp"
#include "trainer.hpp"

namespace bjda {

// Flat `key = value` configuration mirroring TrainConfig. Blank lines and
// lines starting with '#' are ignored; unknown keys are rejected.

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double to_double(const std::string& key, std::string_view s) {
  double v = 0.0;
  if (!parse_number(s, v)) throw ConfigError("config: key '" + key + "' expects a number, got '" + std::string(s) + "'");
  return v;
}

template <class Int>
Int to_int(const std::string& key, std::string_view s) {
  Int v{};
  if (!parse_number(s, v)) throw ConfigError("config: key '" + key + "' expects an integer, got '" + std::string(s) + "'");
  return v;
}

inline bool to_bool(const std::string& key, std::string_view s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + std::string(s) + "'");
}

}  // namespace detail

/// Applies one key/value pair; throws ConfigError for unknown keys or bad values.
inline void apply_config_value(TrainConfig& c, const std::string& key, std::string_view v) {
  using namespace detail;
  if (key == "lambda1") c.lambda1 = to_double(key, v);
  else if (key == "lambda2") c.lambda2 = to_double(key, v);
  else if (key == "lr") c.lr = to_double(key, v);
  else if (key == "momentum") c.momentum = to_double(key, v);
  else if (key == "weight_decay") c.weight_decay = to_double(key, v);
  else if (key == "t_max") c.t_max = to_int<int>(key, v);
  else if (key == "batch_source") c.batch_source = to_int<std::size_t>(key, v);
  else if (key == "batch_target") c.batch_target = to_int<std::size_t>(key, v);
  else if (key == "seed") c.seed = to_int<std::uint64_t>(key, v);
  else if (key == "variant") c.variant = parse_variant(std::string(v));
  else if (key == "triplet_margin") c.triplet_margin = to_double(key, v);
  else if (key == "confidence_threshold") c.confidence_threshold = to_double(key, v);
  else if (key == "pl") c.pl = to_bool(key, v);
  else if (key == "kernel") {
    if (v == "gaussian" || v == "gauss") c.kernel.kind = KernelKind::gaussian;
    else if (v == "linear") c.kernel.kind = KernelKind::linear;
    else throw ConfigError("config: kernel must be gaussian or linear, got '" + std::string(v) + "'");
  } else if (key == "bandwidth_sq") {
    if (v == "auto") c.kernel.bandwidth_sq.reset();
    else c.kernel.bandwidth_sq = to_double(key, v);
  } else if (key == "leaky_slope") c.leaky_slope = to_double(key, v);
  else if (key == "proto_mode") {
    if (v == "batch") c.proto_mode = PrototypeMode::batch;
    else if (v == "ema") c.proto_mode = PrototypeMode::ema;
    else throw ConfigError("config: proto_mode must be batch or ema, got '" + std::string(v) + "'");
  } else if (key == "ema_decay") c.ema_decay = to_double(key, v);
  else if (key == "shared_bandwidth") c.shared_bandwidth = to_bool(key, v);
  else if (key == "hidden") c.hidden = to_int<std::size_t>(key, v);
  else if (key == "feat") c.feat = to_int<std::size_t>(key, v);
  else if (key == "eval_every") c.eval_every = to_int<int>(key, v);
  else throw ConfigError("config: unknown key '" + key + "'");
}

inline TrainConfig parse_config(std::string_view text, TrainConfig base = {}) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view s = detail::trim(line);
    if (s.empty() || s.front() == '#') continue;
    const std::size_t eq = s.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key(detail::trim(s.substr(0, eq)));
    try {
      apply_config_value(base, key, detail::trim(s.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  base.validate();
  return base;
}

inline std::string emit_config(const TrainConfig& c) {
  using detail::fmt_double;
  std::ostringstream os;
  os << "lambda1 = " << fmt_double(c.lambda1) << "\n"
     << "lambda2 = " << fmt_double(c.lambda2) << "\n"
     << "lr = " << fmt_double(c.lr) << "\n"
     << "momentum = " << fmt_double(c.momentum) << "\n"
     << "weight_decay = " << fmt_double(c.weight_decay) << "\n"
     << "t_max = " << c.t_max << "\n"
     << "batch_source = " << c.batch_source << "\n"
     << "batch_target = " << c.batch_target << "\n"
     << "seed = " << c.seed << "\n"
     << "variant = " << to_string(c.variant) << "\n"
     << "triplet_margin = " << fmt_double(c.triplet_margin) << "\n"
     << "confidence_threshold = " << fmt_double(c.confidence_threshold) << "\n"
     << "pl = " << (c.pl ? "true" : "false") << "\n"
     << "kernel = " << to_string(c.kernel.kind) << "\n"
     << "bandwidth_sq = " << (c.kernel.bandwidth_sq ? fmt_double(*c.kernel.bandwidth_sq) : "auto") << "\n"
     << "leaky_slope = " << fmt_double(c.leaky_slope) << "\n"
     << "proto_mode = " << (c.proto_mode == PrototypeMode::batch ? "batch" : "ema") << "\n"
     << "ema_decay = " << fmt_double(c.ema_decay) << "\n"
     << "shared_bandwidth = " << (c.shared_bandwidth ? "true" : "false") << "\n"
     << "hidden = " << c.hidden << "\n"
     << "feat = " << c.feat << "\n"
     << "eval_every = " << c.eval_every << "\n";
  return os.str();
}

inline TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace bjda
