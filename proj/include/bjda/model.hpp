#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "matrix.hpp"
#include "random.hpp"

namespace bjda {

struct ModelDims {
  std::size_t input = 0;
  std::size_t hidden = 1024;
  std::size_t feat = 512;
  std::size_t classes = 0;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// G: input -> hidden (LeakyReLU) -> feat (linear). F: feat -> classes (softmax).
struct ModelParams {
  static constexpr std::size_t kCount = 6;
  static constexpr std::array<const char*, kCount> kNames = {"W1", "b1", "W2", "b2", "Wc", "bc"};

  ModelDims dims;
  std::array<Matrix, kCount> params;    // W1, b1, W2, b2, Wc, bc
  std::array<Matrix, kCount> velocity;  // SGD momentum, same shapes

  const Matrix& w1() const { return params[0]; }
  const Matrix& b1() const { return params[1]; }
  const Matrix& w2() const { return params[2]; }
  const Matrix& b2() const { return params[3]; }
  const Matrix& wc() const { return params[4]; }
  const Matrix& bc() const { return params[5]; }

  bool all_finite() const {
    for (const Matrix& m : params)
      if (!m.all_finite()) return false;
    return true;
  }
};

inline std::array<std::pair<std::size_t, std::size_t>, ModelParams::kCount> param_shapes(
    const ModelDims& d) {
  return {{{d.input, d.hidden}, {1, d.hidden}, {d.hidden, d.feat}, {1, d.feat},
           {d.feat, d.classes}, {1, d.classes}}};
}

inline ModelParams zero_params(const ModelDims& dims) {
  ModelParams p;
  p.dims = dims;
  const auto shapes = param_shapes(dims);
  for (std::size_t k = 0; k < ModelParams::kCount; ++k) {
    p.params[k] = Matrix(shapes[k].first, shapes[k].second);
    p.velocity[k] = Matrix(shapes[k].first, shapes[k].second);
  }
  return p;
}

/// Xavier-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
inline ModelParams init_xavier(const ModelDims& dims, std::uint64_t seed) {
  if (dims.input == 0 || dims.hidden == 0 || dims.feat == 0 || dims.classes == 0)
    throw ConfigError("init_xavier: all dimensions must be >= 1");
  ModelParams p = zero_params(dims);
  Rng rng(seed);
  for (std::size_t k = 0; k < ModelParams::kCount; k += 2) {
    Matrix& w = p.params[k];
    const double bound = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
  }
  return p;
}

/// Parameters bound onto a tape as gradient-tracked leaves.
struct BoundParams {
  std::array<Value, ModelParams::kCount> v;
};

inline BoundParams bind(Tape& tape, const ModelParams& p) {
  BoundParams b;
  for (std::size_t k = 0; k < ModelParams::kCount; ++k) b.v[k] = tape.variable(p.params[k]);
  return b;
}

inline Value forward_G(const BoundParams& p, Value x, double leaky_slope = 0.01) {
  if (x.cols() != p.v[0].rows())
    throw DimensionError("forward_G: input has " + std::to_string(x.cols()) +
                         " features, model expects " + std::to_string(p.v[0].rows()));
  const Value h = ad::leaky_relu(ad::add_row(ad::matmul(x, p.v[0]), p.v[1]), leaky_slope);
  return ad::add_row(ad::matmul(h, p.v[2]), p.v[3]);
}

inline Value forward_F(const BoundParams& p, Value g) {
  if (g.cols() != p.v[4].rows())
    throw DimensionError("forward_F: features have " + std::to_string(g.cols()) +
                         " columns, classifier expects " + std::to_string(p.v[4].rows()));
  return ad::softmax_rows(ad::add_row(ad::matmul(g, p.v[4]), p.v[5]));
}

/// Gradient-free inference: class probabilities for every row of x.
inline Matrix predict_proba(const ModelParams& params, const Matrix& x, double leaky_slope = 0.01) {
  Tape t;
  BoundParams b;
  for (std::size_t k = 0; k < ModelParams::kCount; ++k) b.v[k] = t.constant(params.params[k]);
  return forward_F(b, forward_G(b, t.constant(x), leaky_slope)).value();
}

struct PseudoLabel {
  int label = 0;
  double confidence = 0.0;
};

/// Row argmax (ties to the lowest index) with its probability.
inline std::vector<PseudoLabel> hard_pseudo_labels(const Matrix& probs) {
  std::vector<PseudoLabel> out(probs.rows());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto r = probs.row(i);
    std::size_t best = 0;
    for (std::size_t c = 1; c < r.size(); ++c)
      if (r[c] > r[best]) best = c;
    out[i] = {static_cast<int>(best), r.empty() ? 0.0 : r[best]};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: "BJDA", u32 version, u32 dims (input, hidden, feat, classes),
// then W1, b1, W2, b2, Wc, bc as row-major little-endian float64.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}
inline void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
}
inline std::uint64_t get_le(const std::string& in, std::size_t& pos, int bytes) {
  if (pos + bytes > in.size()) throw ParseError("checkpoint: truncated at byte " + std::to_string(pos));
  std::uint64_t v = 0;
  for (int k = 0; k < bytes; ++k)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + k])) << (8 * k);
  pos += bytes;
  return v;
}
}  // namespace detail

inline std::string encode_checkpoint(const ModelParams& p) {
  std::string out = "BJDA";
  detail::put_u32(out, kCheckpointVersion);
  for (std::size_t d : {p.dims.input, p.dims.hidden, p.dims.feat, p.dims.classes})
    detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (const Matrix& m : p.params)
    for (double v : m.data()) detail::put_f64(out, v);
  return out;
}

inline ModelParams decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "BJDA") != 0)
    throw ParseError("checkpoint: bad magic");
  std::size_t pos = 4;
  const auto version = detail::get_le(bytes, pos, 4);
  if (version != kCheckpointVersion)
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  ModelDims dims;
  dims.input = detail::get_le(bytes, pos, 4);
  dims.hidden = detail::get_le(bytes, pos, 4);
  dims.feat = detail::get_le(bytes, pos, 4);
  dims.classes = detail::get_le(bytes, pos, 4);
  ModelParams p = zero_params(dims);
  for (Matrix& m : p.params)
    for (double& v : m.data()) v = std::bit_cast<double>(detail::get_le(bytes, pos, 8));
  if (pos != bytes.size()) throw ParseError("checkpoint: trailing bytes after parameters");
  return p;
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_checkpoint(p);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path.string());
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace bjda
