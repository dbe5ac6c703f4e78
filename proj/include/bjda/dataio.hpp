#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "matrix.hpp"
#include "random.hpp"

namespace bjda {

/// Feature rows with integer labels; -1 marks an unlabeled row.
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  int class_count = 0;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  void validate() const {
    if (features.rows() != labels.size())
      throw InputError("dataset '" + name + "': " + std::to_string(features.rows()) +
                       " feature rows for " + std::to_string(labels.size()) + " labels");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] < -1 || labels[i] >= class_count)
        throw InputError("dataset '" + name + "': row " + std::to_string(i) + " label " +
                         std::to_string(labels[i]) + " outside [-1, " +
                         std::to_string(class_count) + ")");
    if (!features.all_finite()) throw DomainError("dataset '" + name + "': non-finite feature");
  }

  bool fully_labeled() const {
    for (int y : labels)
      if (y < 0) return false;
    return true;
  }

  /// Rows picked by index, in that order.
  Dataset subset(const std::vector<std::size_t>& rows) const {
    Dataset out;
    out.name = name;
    out.class_count = class_count;
    out.features = Matrix(rows.size(), dim());
    out.labels.reserve(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto src = features.row(rows[r]);
      std::copy(src.begin(), src.end(), out.features.row(r).begin());
      out.labels.push_back(labels[rows[r]]);
    }
    return out;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace detail

/// Parses the CSV exchange format:
///   [# classes=C]
///   label,f0,...,f{d-1}
///   <int>,<float>,...
inline Dataset parse_csv(std::istream& in, const std::string& name = "") {
  Dataset ds;
  ds.name = name;
  std::string line;
  std::size_t lineno = 0;
  int declared_classes = -1;
  std::size_t d = 0;
  bool have_header = false;
  std::vector<double> values;

  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view sv = detail::trim(line);
    if (sv.empty()) continue;
    if (sv.front() == '#') {
      const std::string_view body = detail::trim(sv.substr(1));
      constexpr std::string_view key = "classes=";
      if (!have_header && body.substr(0, key.size()) == key) {
        if (!detail::parse_number(detail::trim(body.substr(key.size())), declared_classes) ||
            declared_classes < 0)
          throw ParseError(name + ":" + std::to_string(lineno) + ": bad classes comment");
      }
      continue;
    }
    const auto fields = detail::split_commas(sv);
    if (!have_header) {
      if (fields.front() != "label")
        throw ParseError(name + ":" + std::to_string(lineno) +
                         ": expected header starting with 'label'");
      d = fields.size() - 1;
      have_header = true;
      continue;
    }
    if (fields.size() != d + 1)
      throw ParseError(name + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(d + 1) + " fields, found " + std::to_string(fields.size()));
    int label = 0;
    if (!detail::parse_number(fields[0], label) || label < -1)
      throw ParseError(name + ":" + std::to_string(lineno) + ": bad label '" +
                       std::string(fields[0]) + "'");
    ds.labels.push_back(label);
    for (std::size_t k = 1; k <= d; ++k) {
      double v = 0.0;
      if (!detail::parse_number(fields[k], v))
        throw ParseError(name + ":" + std::to_string(lineno) + ": bad number '" +
                         std::string(fields[k]) + "' in column " + std::to_string(k));
      if (!std::isfinite(v))
        throw DomainError(name + ":" + std::to_string(lineno) + ": non-finite value in column " +
                          std::to_string(k));
      values.push_back(v);
    }
  }
  if (!have_header) throw ParseError(name + ": missing header row");

  ds.features = Matrix(ds.labels.size(), d, std::move(values));
  int max_label = -1;
  for (int y : ds.labels) max_label = std::max(max_label, y);
  ds.class_count = max_label + 1;
  if (declared_classes >= 0) {
    if (declared_classes < ds.class_count)
      throw ParseError(name + ": declared classes=" + std::to_string(declared_classes) +
                       " but label " + std::to_string(max_label) + " is present");
    ds.class_count = declared_classes;
  }
  return ds;
}

inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  return parse_csv(f, path.string());
}

/// Writes the CSV format with 17 significant digits (lossless for doubles).
inline void write_csv(std::ostream& out, const Dataset& ds) {
  out << "# classes=" << ds.class_count << "\n";
  out << "label";
  for (std::size_t k = 0; k < ds.dim(); ++k) out << ",f" << k;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (double v : ds.features.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << ',' << buf;
    }
    out << "\n";
  }
}

inline void save_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  write_csv(f, ds);
  f.flush();
  if (!f) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Synthetic rotated-blobs domain pair
// ---------------------------------------------------------------------------

struct SynthSpec {
  int classes = 4;
  std::size_t dim = 32;
  std::size_t per_class = 200;
  double shift_angle = 50.0;  // degrees
  double noise_sigma = 0.25;
  std::uint64_t projection_seed = 7;
  std::uint64_t sample_seed = 11;

  void validate() const {
    if (classes < 2) throw ConfigError("synth: classes must be >= 2");
    if (dim < 2) throw ConfigError("synth: dim must be >= 2");
    if (!(shift_angle >= 0.0 && shift_angle < 360.0))
      throw ConfigError("synth: shift_angle must lie in [0, 360)");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
      throw ConfigError("synth: noise_sigma must be finite and >= 0");
  }
};

/// Random d x 2 matrix with orthonormal columns (Gram-Schmidt on Gaussians).
inline Matrix random_projection(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  Matrix p(dim, 2);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < dim; ++i) p(i, c) = rng.normal();
    // Two passes of Gram-Schmidt for orthogonality at round-off level.
    for (int pass = 0; pass < 2; ++pass)
      for (std::size_t prev = 0; prev < c; ++prev) {
        double dot = 0.0;
        for (std::size_t i = 0; i < dim; ++i) dot += p(i, c) * p(i, prev);
        for (std::size_t i = 0; i < dim; ++i) p(i, c) -= dot * p(i, prev);
      }
    double norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) norm += p(i, c) * p(i, c);
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < dim; ++i) p(i, c) /= norm;
  }
  return p;
}

/// Class c sits at angle 2 pi c / C on the unit circle. Source rows are
/// center + N(0, noise^2 I); target rows are drawn the same way and then
/// rotated by shift_angle. Both are embedded with one shared projection.
inline std::pair<Dataset, Dataset> gen_rotated_blobs(const SynthSpec& spec) {
  spec.validate();
  const Matrix proj = random_projection(spec.dim, spec.projection_seed);
  Rng rng(spec.sample_seed);
  const double theta = spec.shift_angle * std::numbers::pi / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const std::size_t C = static_cast<std::size_t>(spec.classes);

  auto make = [&](bool rotate, const char* name) {
    Dataset ds;
    ds.name = name;
    ds.class_count = spec.classes;
    ds.features = Matrix(C * spec.per_class, spec.dim);
    ds.labels.reserve(C * spec.per_class);
    std::size_t r = 0;
    for (std::size_t c = 0; c < C; ++c) {
      const double phi = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(C);
      for (std::size_t k = 0; k < spec.per_class; ++k, ++r) {
        double x = std::cos(phi) + spec.noise_sigma * rng.normal();
        double y = std::sin(phi) + spec.noise_sigma * rng.normal();
        if (rotate) {
          const double xr = ct * x - st * y;
          y = st * x + ct * y;
          x = xr;
        }
        for (std::size_t i = 0; i < spec.dim; ++i) ds.features(r, i) = proj(i, 0) * x + proj(i, 1) * y;
        ds.labels.push_back(static_cast<int>(c));
      }
    }
    return ds;
  };
  Dataset source = make(false, "source");
  Dataset target = make(true, "target");
  return {std::move(source), std::move(target)};
}

}  // namespace bjda
