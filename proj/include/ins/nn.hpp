#pragma once
// Dense numerical core: perceptrons with hand-written backward passes,
// softmax cross-entropy, heavy-ball SGD, EMA parameter copies and a
// central-difference gradient checker. Everything is double precision.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ins/error.hpp"

namespace ins::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using Vector = Eigen::VectorXd;

/// Named, contiguous view of one parameter (or gradient) tensor.
struct Block {
  std::string name;
  std::span<double> values;
};
using BlockList = std::vector<Block>;

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

// ---------------------------------------------------------------------------
// Multi-layer perceptron: y = x W + b per layer, relu between layers,
// identity on the output. Weights are stored (in x out) so a batch is a
// row-major (batch x in) matrix.
// ---------------------------------------------------------------------------

struct DenseLayer {
  Matrix weight;
  RowVector bias;
};

struct MlpCache {
  std::vector<int> dims;
  std::vector<Matrix> inputs;    // input to each layer
  std::vector<Matrix> preacts;   // pre-activation of each layer
};

struct MlpGrads {
  std::vector<Matrix> weight;
  std::vector<RowVector> bias;

  BlockList blocks(const std::string& prefix) {
    BlockList out;
    for (std::size_t l = 0; l < weight.size(); ++l) {
      out.push_back({prefix + ".W" + std::to_string(l),
                     {weight[l].data(), static_cast<std::size_t>(weight[l].size())}});
      out.push_back({prefix + ".b" + std::to_string(l),
                     {bias[l].data(), static_cast<std::size_t>(bias[l].size())}});
    }
    return out;
  }

  MlpGrads& operator+=(const MlpGrads& other) {
    if (other.weight.size() != weight.size()) throw DimensionError("adding mismatched gradient sets");
    for (std::size_t l = 0; l < weight.size(); ++l) {
      weight[l] += other.weight[l];
      bias[l] += other.bias[l];
    }
    return *this;
  }
};

class Mlp {
 public:
  Mlp() = default;

  /// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
  Mlp(std::vector<int> dims, std::mt19937_64& rng) : dims_(std::move(dims)) {
    check_dims();
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      const int fan_in = dims_[l], fan_out = dims_[l + 1];
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      DenseLayer layer{Matrix(fan_in, fan_out), RowVector::Zero(fan_out)};
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = dist(rng);
      layers_.push_back(std::move(layer));
    }
  }

  static Mlp zeros(std::vector<int> dims) {
    Mlp net;
    net.dims_ = std::move(dims);
    net.check_dims();
    for (std::size_t l = 0; l + 1 < net.dims_.size(); ++l)
      net.layers_.push_back({Matrix::Zero(net.dims_[l], net.dims_[l + 1]),
                             RowVector::Zero(net.dims_[l + 1])});
    return net;
  }

  const std::vector<int>& dims() const noexcept { return dims_; }
  int in_dim() const { return dims_.front(); }
  int out_dim() const { return dims_.back(); }
  std::size_t num_layers() const noexcept { return layers_.size(); }
  DenseLayer& layer(std::size_t l) { return layers_.at(l); }
  const DenseLayer& layer(std::size_t l) const { return layers_.at(l); }

  BlockList parameters(const std::string& prefix) {
    BlockList out;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      auto& ly = layers_[l];
      out.push_back({prefix + ".W" + std::to_string(l),
                     {ly.weight.data(), static_cast<std::size_t>(ly.weight.size())}});
      out.push_back({prefix + ".b" + std::to_string(l),
                     {ly.bias.data(), static_cast<std::size_t>(ly.bias.size())}});
    }
    return out;
  }

  MlpGrads zero_grads() const {
    MlpGrads g;
    for (const auto& ly : layers_) {
      g.weight.push_back(Matrix::Zero(ly.weight.rows(), ly.weight.cols()));
      g.bias.push_back(RowVector::Zero(ly.bias.size()));
    }
    return g;
  }

  /// Throws DimensionError when the stored tensors disagree with dims().
  void check_shapes() const {
    if (layers_.size() + 1 != dims_.size()) throw DimensionError("layer count does not match dims");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& ly = layers_[l];
      if (ly.weight.rows() != dims_[l] || ly.weight.cols() != dims_[l + 1] ||
          ly.bias.size() != dims_[l + 1])
        throw DimensionError("layer " + std::to_string(l) + " has weight " +
                             shape_str(ly.weight.rows(), ly.weight.cols()) + ", expected " +
                             shape_str(dims_[l], dims_[l + 1]));
    }
  }

 private:
  void check_dims() const {
    if (dims_.size() < 2) throw DimensionError("an MLP needs at least input and output dims");
    for (int d : dims_)
      if (d <= 0) throw DimensionError("layer dims must be positive");
  }

  std::vector<int> dims_;
  std::vector<DenseLayer> layers_;
};

/// Forward pass. When `cache` is non-null it receives what backward needs.
inline Matrix mlp_forward(const Mlp& net, const Matrix& x, MlpCache* cache = nullptr) {
  if (x.cols() != net.in_dim())
    throw DimensionError("layer 0 expects " + std::to_string(net.in_dim()) + " inputs, got " +
                         std::to_string(x.cols()));
  if (cache) {
    cache->dims = net.dims();
    cache->inputs.clear();
    cache->preacts.clear();
  }
  Matrix h = x;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const auto& ly = net.layer(l);
    Matrix pre = h * ly.weight;
    pre.rowwise() += ly.bias;
    if (cache) {
      cache->inputs.push_back(h);
      cache->preacts.push_back(pre);
    }
    if (l + 1 < net.num_layers())
      h = pre.cwiseMax(0.0);
    else
      h = std::move(pre);
  }
  return h;
}

inline std::pair<Matrix, MlpCache> mlp_forward_cached(const Mlp& net, const Matrix& x) {
  MlpCache cache;
  Matrix out = mlp_forward(net, x, &cache);
  return {std::move(out), std::move(cache)};
}

struct MlpBackward {
  MlpGrads grads;
  Matrix grad_input;
};

inline MlpBackward mlp_backward(const Mlp& net, const MlpCache& cache, const Matrix& grad_output) {
  if (cache.dims != net.dims() || cache.preacts.size() != net.num_layers())
    throw UsageError("backward called with a cache from a different network");
  const Eigen::Index batch = cache.inputs.front().rows();
  if (grad_output.rows() != batch || grad_output.cols() != net.out_dim())
    throw UsageError("grad_output is " + shape_str(grad_output.rows(), grad_output.cols()) +
                     ", cache expects " + shape_str(batch, net.out_dim()));
  MlpBackward out;
  out.grads = net.zero_grads();
  Matrix g = grad_output;
  for (std::size_t l = net.num_layers(); l-- > 0;) {
    if (l + 1 < net.num_layers()) g = g.cwiseProduct((cache.preacts[l].array() > 0.0).cast<double>().matrix());
    out.grads.weight[l].noalias() = cache.inputs[l].transpose() * g;
    out.grads.bias[l] = g.colwise().sum();
    g = g * net.layer(l).weight.transpose();
  }
  out.grad_input = std::move(g);
  return out;
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy against soft (simplex) targets.
// ---------------------------------------------------------------------------

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) z += (p(i, c) = std::exp(logits(i, c) - mx));
    p.row(i) /= z;
  }
  return p;
}

struct XentResult {
  double loss = 0.0;
  Matrix grad_logits;
};

/// Mean over rows of -sum_c s_c log softmax(logits)_c; grad = (softmax - s) / batch.
inline XentResult softmax_xent(const Matrix& logits, const Matrix& target) {
  if (logits.rows() != target.rows() || logits.cols() != target.cols())
    throw DimensionError("logits " + shape_str(logits.rows(), logits.cols()) + " vs target " +
                         shape_str(target.rows(), target.cols()));
  constexpr double kSimplexTol = 1e-9;
  for (Eigen::Index i = 0; i < target.rows(); ++i) {
    if (target.row(i).minCoeff() < -kSimplexTol || std::abs(target.row(i).sum() - 1.0) > kSimplexTol)
      throw ValidationError("target row " + std::to_string(i) + " is not on the simplex");
  }
  XentResult r;
  const auto n = static_cast<double>(logits.rows());
  r.grad_logits.resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      const double logp = logits(i, c) - lse;
      if (target(i, c) != 0.0) r.loss -= target(i, c) * logp;
      r.grad_logits(i, c) = (std::exp(logp) - target(i, c)) / n;
    }
  }
  r.loss /= n;
  return r;
}

// ---------------------------------------------------------------------------
// Optimizer and EMA copies.
// ---------------------------------------------------------------------------

/// Heavy-ball momentum: v <- momentum*v + g; p <- p - lr*v.
struct SgdMomentum {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::vector<std::vector<double>> velocity;

  void step(const BlockList& params, const BlockList& grads) {
    if (params.size() != grads.size())
      throw DimensionError("sgd_step: " + std::to_string(params.size()) + " parameter blocks vs " +
                           std::to_string(grads.size()) + " gradient blocks");
    if (velocity.empty()) {
      for (const auto& p : params) velocity.emplace_back(p.values.size(), 0.0);
    }
    if (velocity.size() != params.size()) throw DimensionError("sgd_step: velocity block count changed");
    for (std::size_t b = 0; b < params.size(); ++b) {
      auto& v = velocity[b];
      const auto p = params[b].values;
      const auto g = grads[b].values;
      if (p.size() != g.size() || v.size() != p.size())
        throw DimensionError("sgd_step: block " + params[b].name + " shape mismatch");
      for (std::size_t i = 0; i < p.size(); ++i) {
        v[i] = momentum * v[i] + g[i];
        p[i] -= learning_rate * v[i];
      }
    }
  }
};

inline void sgd_step(SgdMomentum& opt, const BlockList& params, const BlockList& grads) {
  opt.step(params, grads);
}

/// An online network and its exponential-moving-average shadow.
struct EmaPair {
  Mlp& online;
  Mlp& shadow;
  double m;
};

/// shadow <- m*shadow + (1-m)*online, elementwise.
inline void ema_update(const BlockList& online, const BlockList& shadow, double m) {
  if (online.size() != shadow.size()) throw DimensionError("ema_update: block count mismatch");
  for (std::size_t b = 0; b < online.size(); ++b) {
    const auto src = online[b].values;
    const auto dst = shadow[b].values;
    if (src.size() != dst.size()) throw DimensionError("ema_update: block " + online[b].name + " shape mismatch");
    // Increment form: a shadow equal to its source stays bitwise unchanged.
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = m == 0.0 ? src[i] : dst[i] + (1.0 - m) * (src[i] - dst[i]);
  }
}

inline void ema_update(EmaPair pair) {
  if (pair.online.dims() != pair.shadow.dims()) throw DimensionError("ema_update: online/shadow dims differ");
  ema_update(pair.online.parameters("online"), pair.shadow.parameters("shadow"), pair.m);
}

// ---------------------------------------------------------------------------
// Normalization.
// ---------------------------------------------------------------------------

struct Normalized {
  Vector value;
  double norm = 0.0;
  bool degenerate = false;
};

inline Normalized l2_normalize(const Vector& v, double eps = 1e-12) {
  const double n = v.norm();
  if (n > eps) return {v / n, n, false};
  return {v, n, true};
}

/// Normalizes every row; returns the original row norms in `norms`.
inline Matrix normalize_rows(const Matrix& z, Vector& norms, double eps = 1e-12) {
  Matrix q(z.rows(), z.cols());
  norms.resize(z.rows());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double n = z.row(i).norm();
    if (!(n > eps)) throw NumericalError("cannot normalize a zero embedding (row " + std::to_string(i) + ")");
    norms(i) = n;
    q.row(i) = z.row(i) / n;
  }
  return q;
}

/// Backprop through q = z/|z|: dz = (dq - q (q.dq)) / |z|.
inline Matrix normalize_rows_backward(const Matrix& q, const Vector& norms, const Matrix& grad_q) {
  Matrix gz(q.rows(), q.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    const double proj = q.row(i).dot(grad_q.row(i));
    gz.row(i) = (grad_q.row(i) - proj * q.row(i)) / norms(i);
  }
  return gz;
}

// ---------------------------------------------------------------------------
// Central finite-difference gradient check.
// ---------------------------------------------------------------------------

struct GradcheckOptions {
  double epsilon = 1e-6;
  double tolerance = 1e-5;
  /// Denominator floor for the relative error, so exactly-zero gradients
  /// compare on an absolute scale.
  double abs_floor = 1e-3;
};

struct GradcheckBlockResult {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
};

struct GradcheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::string worst_block;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<GradcheckBlockResult> blocks;
};

/// Perturbs each entry of `params` in place (restoring it afterwards) and
/// compares central differences of `loss` against `analytic`.
inline GradcheckReport gradcheck(const std::function<double()>& loss, const BlockList& params,
                                 const BlockList& analytic, GradcheckOptions opts = {}) {
  if (params.size() != analytic.size()) throw DimensionError("gradcheck: block count mismatch");
  GradcheckReport rep;
  for (std::size_t b = 0; b < params.size(); ++b) {
    const auto p = params[b].values;
    const auto g = analytic[b].values;
    if (p.size() != g.size()) throw DimensionError("gradcheck: block " + params[b].name + " shape mismatch");
    GradcheckBlockResult br{params[b].name, 0.0, 0};
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + opts.epsilon;
      const double up = loss();
      p[i] = saved - opts.epsilon;
      const double down = loss();
      p[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericalError("gradcheck: non-finite loss perturbing " + params[b].name);
      const double numeric = (up - down) / (2.0 * opts.epsilon);
      const double denom = std::max({std::abs(g[i]), std::abs(numeric), opts.abs_floor});
      const double rel = std::abs(g[i] - numeric) / denom;
      if (rel > br.max_rel_error) {
        br.max_rel_error = rel;
        br.worst_index = i;
      }
      if (rel > rep.max_rel_error || rep.worst_block.empty()) {
        rep.max_rel_error = rel;
        rep.worst_block = params[b].name;
        rep.worst_index = i;
        rep.worst_analytic = g[i];
        rep.worst_numeric = numeric;
      }
    }
    rep.blocks.push_back(br);
  }
  rep.passed = rep.max_rel_error < opts.tolerance;
  return rep;
}

}  // namespace ins::nn
