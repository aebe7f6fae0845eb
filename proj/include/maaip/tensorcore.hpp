#pragma once

// Taped multilayer perceptrons in double precision: forward pass, reverse
// mode gradients for parameters and inputs, the input-gradient penalty with
// its parameter gradient, and Adam.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <cstdint>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "maaip/binary_io.hpp"
#include "maaip/error.hpp"

namespace maaip {

// Batches are row-major in the sense that each row is one sample.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation : std::uint8_t { ReLU = 0, Linear = 1 };

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
  Activation act = Activation::Linear;

  int in_dim() const { return static_cast<int>(weight.cols()); }
  int out_dim() const { return static_cast<int>(weight.rows()); }
};

struct NetParams {
  std::vector<Layer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  int output_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  friend bool operator==(const NetParams& a, const NetParams& b) {
    if (a.layers.size() != b.layers.size()) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
      const Layer& x = a.layers[i];
      const Layer& y = b.layers[i];
      if (x.act != y.act || x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols() ||
          x.weight != y.weight || x.bias != y.bias) {
        return false;
      }
    }
    return true;
  }
};

// Gradients share the parameter layout.
using NetGrads = NetParams;

inline NetGrads zeros_like(const NetParams& p) {
  NetGrads g;
  g.layers.reserve(p.layers.size());
  for (const auto& l : p.layers) {
    g.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size()), l.act});
  }
  return g;
}

inline void add_scaled(NetGrads& acc, const NetGrads& g, double scale = 1.0) {
  for (std::size_t i = 0; i < acc.layers.size(); ++i) {
    acc.layers[i].weight += scale * g.layers[i].weight;
    acc.layers[i].bias += scale * g.layers[i].bias;
  }
}

inline double global_norm(const NetGrads& g) {
  double s = 0.0;
  for (const auto& l : g.layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Initialization

enum class InitScheme { Orthogonal, UniformScaled };

struct InitSpec {
  InitScheme scheme = InitScheme::Orthogonal;
  double hidden_gain = 1.4142135623730951;
  double output_gain = 1.0;
};

namespace detail {

inline Matrix orthogonal(int rows, int cols, double gain, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int big = std::max(rows, cols), small = std::min(rows, cols);
  Matrix a(big, small);
  for (Eigen::Index c = 0; c < a.cols(); ++c) {
    for (Eigen::Index r = 0; r < a.rows(); ++r) a(r, c) = normal(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(big, small);
  const Matrix r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int i = 0; i < small; ++i) {
    if (r(i, i) < 0.0) q.col(i) *= -1.0;
  }
  return gain * (rows >= cols ? q : Matrix(q.transpose()));
}

}  // namespace detail

// `sizes` = {input, hidden..., output}. Hidden layers use ReLU, the output
// layer is linear. Biases start at zero.
inline NetParams net_init(std::span<const int> sizes, std::uint64_t seed, const InitSpec& spec = {}) {
  if (sizes.size() < 2) throw DimensionError("net_init: need at least one layer");
  for (int s : sizes) {
    if (s <= 0) throw DimensionError("net_init: zero-sized layer");
  }
  std::mt19937_64 rng(seed);
  NetParams p;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const bool last = i + 2 == sizes.size();
    const int in = sizes[i], out = sizes[i + 1];
    const double gain = last ? spec.output_gain : spec.hidden_gain;
    Layer l;
    if (spec.scheme == InitScheme::Orthogonal) {
      l.weight = detail::orthogonal(out, in, gain, rng);
    } else {
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      const double bound = gain / std::sqrt(static_cast<double>(in));
      l.weight.resize(out, in);
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = bound * u(rng);
      }
    }
    l.bias = Vector::Zero(out);
    l.act = last ? Activation::Linear : Activation::ReLU;
    p.layers.push_back(std::move(l));
  }
  return p;
}

inline NetParams net_init(std::initializer_list<int> sizes, std::uint64_t seed, const InitSpec& spec = {}) {
  return net_init(std::span<const int>(sizes.begin(), sizes.size()), seed, spec);
}

// ---------------------------------------------------------------------------
// Forward / backward

struct Tape {
  std::vector<Matrix> inputs;  // input of each layer
  std::vector<Matrix> pre;     // pre-activation of each layer
  Eigen::Index rows() const { return inputs.empty() ? 0 : inputs.front().rows(); }
};

struct ForwardResult {
  Matrix output;
  Tape tape;
};

namespace detail {

inline void check_input(const NetParams& p, const Matrix& x, const char* who) {
  if (p.layers.empty()) throw DimensionError(std::string(who) + ": empty network");
  if (x.cols() != p.input_dim()) {
    throw DimensionError(std::string(who) + ": batch width " + std::to_string(x.cols()) + " != input dim " +
                         std::to_string(p.input_dim()));
  }
}

inline Matrix affine(const Layer& l, const Matrix& x) {
  Matrix z(x.rows(), l.out_dim());
  z.noalias() = x * l.weight.transpose();
  z.rowwise() += l.bias.transpose();
  return z;
}

// ReLU derivative at exactly 0 is taken as 0.
inline Matrix relu_mask(const Matrix& z) { return (z.array() > 0.0).cast<double>().matrix(); }

}  // namespace detail

inline ForwardResult forward(const NetParams& p, const Matrix& batch) {
  detail::check_input(p, batch, "forward");
  ForwardResult r;
  r.tape.inputs.reserve(p.layers.size());
  r.tape.pre.reserve(p.layers.size());
  Matrix x = batch;
  for (const Layer& l : p.layers) {
    Matrix z = detail::affine(l, x);
    r.tape.inputs.push_back(std::move(x));
    x = l.act == Activation::ReLU ? Matrix(z.cwiseMax(0.0)) : z;
    r.tape.pre.push_back(std::move(z));
  }
  r.output = std::move(x);
  return r;
}

// Forward pass without keeping intermediates.
inline Matrix predict(const NetParams& p, const Matrix& batch) {
  detail::check_input(p, batch, "predict");
  Matrix x = batch;
  for (const Layer& l : p.layers) {
    Matrix z = detail::affine(l, x);
    if (l.act == Activation::ReLU) z = z.cwiseMax(0.0);
    x = std::move(z);
  }
  return x;
}

struct BackwardResult {
  NetGrads grads;
  Matrix input_grad;
};

// Gradients of sum(out_grad .* output) for the batch that produced `tape`.
inline BackwardResult backward(const NetParams& p, const Tape& tape, const Matrix& out_grad) {
  if (tape.inputs.size() != p.layers.size() || tape.pre.size() != p.layers.size()) {
    throw DimensionError("backward: tape does not match network depth");
  }
  if (out_grad.rows() != tape.rows() || out_grad.cols() != p.output_dim()) {
    throw DimensionError("backward: out_grad shape does not match the taped forward pass");
  }
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    if (tape.inputs[i].cols() != p.layers[i].in_dim() || tape.pre[i].cols() != p.layers[i].out_dim()) {
      throw DimensionError("backward: stale tape (layer shape mismatch)");
    }
  }
  BackwardResult r;
  r.grads = zeros_like(p);
  Matrix g = out_grad;
  for (std::size_t k = p.layers.size(); k-- > 0;) {
    const Layer& l = p.layers[k];
    if (l.act == Activation::ReLU) g = g.cwiseProduct(detail::relu_mask(tape.pre[k]));
    r.grads.layers[k].weight.noalias() = g.transpose() * tape.inputs[k];
    r.grads.layers[k].bias = g.colwise().sum().transpose();
    Matrix next(g.rows(), l.in_dim());
    next.noalias() = g * l.weight;
    g = std::move(next);
  }
  r.input_grad = std::move(g);
  return r;
}

struct GradientPenalty {
  double value = 0.0;      // mean over rows of |d output / d input|^2
  Matrix input_grad;       // d output / d input per row
  NetGrads grads;          // d value / d params
};

// For scalar-output nets. The ReLU masks are piecewise constant in the
// parameters, so the penalty's parameter gradient flows only through weights.
inline GradientPenalty gradient_penalty(const NetParams& p, const Tape& tape) {
  if (p.output_dim() != 1) throw DimensionError("gradient_penalty: network must have a scalar output");
  if (tape.inputs.size() != p.layers.size()) throw DimensionError("gradient_penalty: tape depth mismatch");
  const Eigen::Index rows = tape.rows();
  const std::size_t depth = p.layers.size();
  std::vector<Matrix> masked(depth);  // s_k = u_{k+1} .* mask_k
  Matrix u = Matrix::Ones(rows, 1);
  for (std::size_t k = depth; k-- > 0;) {
    const Layer& l = p.layers[k];
    masked[k] = l.act == Activation::ReLU ? Matrix(u.cwiseProduct(detail::relu_mask(tape.pre[k]))) : u;
    Matrix next(rows, l.in_dim());
    next.noalias() = masked[k] * l.weight;
    u = std::move(next);
  }
  GradientPenalty gp;
  gp.input_grad = u;
  gp.value = rows > 0 ? u.squaredNorm() / static_cast<double>(rows) : 0.0;
  gp.grads = zeros_like(p);
  if (rows == 0) return gp;
  Matrix ubar = (2.0 / static_cast<double>(rows)) * u;
  for (std::size_t k = 0; k < depth; ++k) {
    const Layer& l = p.layers[k];
    gp.grads.layers[k].weight.noalias() = masked[k].transpose() * ubar;
    if (k + 1 == depth) break;
    Matrix sbar(rows, l.out_dim());
    sbar.noalias() = ubar * l.weight.transpose();
    if (l.act == Activation::ReLU) sbar = sbar.cwiseProduct(detail::relu_mask(tape.pre[k]));
    ubar = std::move(sbar);
  }
  return gp;
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables global-norm clipping
};

struct OptState {
  NetParams m;
  NetParams v;
  std::int64_t step = 0;
  AdamConfig config;
};

inline OptState adam_init(const NetParams& p, const AdamConfig& config = {}) {
  return {zeros_like(p), zeros_like(p), 0, config};
}

// Returns the pre-clipping global gradient norm.
inline double adam_step(NetParams& p, NetGrads grads, OptState& opt) {
  if (opt.m.layers.size() != p.layers.size() || grads.layers.size() != p.layers.size()) {
    throw DimensionError("adam_step: optimizer/gradient layout does not match parameters");
  }
  const AdamConfig& c = opt.config;
  const double gnorm = global_norm(grads);
  if (c.clip_norm > 0.0 && gnorm > c.clip_norm) {
    const double s = c.clip_norm / gnorm;
    for (auto& l : grads.layers) {
      l.weight *= s;
      l.bias *= s;
    }
  }
  ++opt.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(opt.step));
  const auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    param.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  };
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    update(p.layers[i].weight, opt.m.layers[i].weight, opt.v.layers[i].weight, grads.layers[i].weight);
    update(p.layers[i].bias, opt.m.layers[i].bias, opt.v.layers[i].bias, grads.layers[i].bias);
  }
  return gnorm;
}

// ---------------------------------------------------------------------------
// Serialization: "MAAIP1", layout version, layer shape table, row-major
// weights then biases per layer.

inline constexpr char kParamMagic[6] = {'M', 'A', 'A', 'I', 'P', '1'};
inline constexpr std::uint32_t kParamBlobVersion = 1;

inline void write_net(std::ostream& os, const NetParams& p) {
  os.write(kParamMagic, sizeof(kParamMagic));
  bin::write<std::uint32_t>(os, kParamBlobVersion);
  bin::write<std::uint32_t>(os, static_cast<std::uint32_t>(p.layers.size()));
  for (const Layer& l : p.layers) {
    bin::write<std::uint32_t>(os, static_cast<std::uint32_t>(l.out_dim()));
    bin::write<std::uint32_t>(os, static_cast<std::uint32_t>(l.in_dim()));
    bin::write<std::uint8_t>(os, static_cast<std::uint8_t>(l.act));
  }
  for (const Layer& l : p.layers) {
    bin::write_matrix_rowmajor(os, l.weight);
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) bin::write<double>(os, l.bias(i));
  }
}

inline NetParams read_net(std::istream& is) {
  char magic[6];
  if (!is.read(magic, sizeof(magic))) throw ParseError("parameter blob truncated");
  if (!std::equal(magic, magic + 6, kParamMagic)) throw ParseError("parameter blob: bad magic");
  const auto version = bin::read<std::uint32_t>(is);
  if (version != kParamBlobVersion) {
    throw VersionError("parameter blob version " + std::to_string(version) + " != supported " +
                       std::to_string(kParamBlobVersion));
  }
  const auto n = bin::read<std::uint32_t>(is);
  if (n == 0 || n > 64) throw ParseError("parameter blob: implausible layer count");
  NetParams p;
  p.layers.resize(n);
  for (auto& l : p.layers) {
    const auto out = bin::read<std::uint32_t>(is);
    const auto in = bin::read<std::uint32_t>(is);
    const auto act = bin::read<std::uint8_t>(is);
    if (out == 0 || in == 0 || out > (1u << 16) || in > (1u << 16) || act > 1) {
      throw ParseError("parameter blob: bad layer shape entry");
    }
    l.weight.resize(out, in);
    l.bias.resize(out);
    l.act = static_cast<Activation>(act);
  }
  for (std::size_t i = 1; i < p.layers.size(); ++i) {
    if (p.layers[i].in_dim() != p.layers[i - 1].out_dim()) throw ParseError("parameter blob: layers do not chain");
  }
  for (auto& l : p.layers) {
    l.weight = bin::read_matrix_rowmajor(is, l.weight.rows(), l.weight.cols());
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = bin::read<double>(is);
  }
  return p;
}

inline void write_opt(std::ostream& os, const OptState& o) {
  write_net(os, o.m);
  write_net(os, o.v);
  bin::write<std::int64_t>(os, o.step);
  bin::write<double>(os, o.config.lr);
  bin::write<double>(os, o.config.beta1);
  bin::write<double>(os, o.config.beta2);
  bin::write<double>(os, o.config.eps);
  bin::write<double>(os, o.config.clip_norm);
}

inline OptState read_opt(std::istream& is) {
  OptState o;
  o.m = read_net(is);
  o.v = read_net(is);
  o.step = bin::read<std::int64_t>(is);
  o.config.lr = bin::read<double>(is);
  o.config.beta1 = bin::read<double>(is);
  o.config.beta2 = bin::read<double>(is);
  o.config.eps = bin::read<double>(is);
  o.config.clip_norm = bin::read<double>(is);
  return o;
}

}  // namespace maaip
