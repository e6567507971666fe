#pragma once

// Feed-forward classifier built from [Dense -> BatchNorm -> ReLU] blocks and a
// single sigmoid output unit, with hand-written backpropagation, the two
// training objectives (binary cross-entropy, Bernoulli Shannon entropy) and a
// maskable Adam optimizer. Everything is 64-bit.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedtta/matrix.hpp"

namespace fedtta {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;

  void validate() const {
    if (input_dim == 0) throw std::invalid_argument("NetworkSpec: input_dim must be positive");
    if (hidden_dims.empty()) throw std::invalid_argument("NetworkSpec: at least one hidden block");
    for (auto w : hidden_dims) {
      if (w == 0) throw std::invalid_argument("NetworkSpec: zero-width hidden layer");
    }
  }

  std::size_t block_count() const noexcept { return hidden_dims.size(); }

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

enum class ArrayKind : std::uint8_t {
  DenseWeight = 0,
  DenseBias = 1,
  BnGamma = 2,
  BnBeta = 3,
  BnRunningMean = 4,
  BnRunningVar = 5,
};

constexpr bool is_trainable(ArrayKind k) noexcept {
  return k != ArrayKind::BnRunningMean && k != ArrayKind::BnRunningVar;
}
constexpr bool is_affine(ArrayKind k) noexcept {
  return k == ArrayKind::BnGamma || k == ArrayKind::BnBeta;
}

struct NamedArray {
  std::string name;
  ArrayKind kind = ArrayKind::DenseWeight;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

// One flag per stored entry, in array order. Entries of running-statistics
// arrays are always false.
using EntryMask = std::vector<std::uint8_t>;

// Full parameter set. Array layout per hidden block l (base 6*l):
//   dense{l}.weight, dense{l}.bias, bn{l}.gamma, bn{l}.beta,
//   bn{l}.running_mean, bn{l}.running_var
// followed by out.weight (1 x last_width) and out.bias (1).
struct Parameters {
  NetworkSpec spec;
  std::vector<NamedArray> arrays;
  EntryMask affine_mask;

  static std::size_t dense_weight(std::size_t l) { return 6 * l; }
  static std::size_t dense_bias(std::size_t l) { return 6 * l + 1; }
  static std::size_t bn_gamma(std::size_t l) { return 6 * l + 2; }
  static std::size_t bn_beta(std::size_t l) { return 6 * l + 3; }
  static std::size_t bn_mean(std::size_t l) { return 6 * l + 4; }
  static std::size_t bn_var(std::size_t l) { return 6 * l + 5; }
  std::size_t out_weight() const { return 6 * spec.block_count(); }
  std::size_t out_bias() const { return 6 * spec.block_count() + 1; }

  std::size_t entry_count() const noexcept {
    std::size_t n = 0;
    for (const auto& a : arrays) n += a.values.size();
    return n;
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

// Mask selecting every entry of arrays matching `pred`.
template <typename Pred>
EntryMask make_mask(const Parameters& params, Pred pred) {
  EntryMask mask;
  mask.reserve(params.entry_count());
  for (const auto& a : params.arrays) mask.insert(mask.end(), a.values.size(), pred(a.kind) ? 1 : 0);
  return mask;
}

inline EntryMask all_trainable_mask(const Parameters& params) {
  return make_mask(params, [](ArrayKind k) { return is_trainable(k); });
}

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) noexcept {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}
inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

inline double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline void check_shapes(const Parameters& params, const NetworkSpec& spec) {
  if (!(params.spec == spec)) throw std::invalid_argument("Parameters built for a different NetworkSpec");
  if (params.arrays.size() != 6 * spec.block_count() + 2) {
    throw std::invalid_argument("Parameters: unexpected array count");
  }
}

inline std::uint64_t trainable_fingerprint(const Parameters& params) noexcept {
  std::uint64_t h = kFnvOffset;
  for (const auto& a : params.arrays) {
    if (!is_trainable(a.kind)) continue;
    h = fnv1a(h, a.values.data(), a.values.size() * sizeof(double));
  }
  return h;
}

}  // namespace detail

// Checksum over every stored value (including running statistics).
inline std::uint64_t parameters_checksum(const Parameters& params) noexcept {
  std::uint64_t h = detail::kFnvOffset;
  for (const auto& a : params.arrays) {
    h = detail::fnv1a(h, a.values.data(), a.values.size() * sizeof(double));
  }
  return h;
}

inline Parameters init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Parameters params;
  params.spec = spec;

  auto dense = [&](const std::string& prefix, std::size_t out, std::size_t in, double gain) {
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(in)));
    NamedArray w{prefix + ".weight", ArrayKind::DenseWeight, out, in, std::vector<double>(out * in)};
    for (auto& v : w.values) v = dist(rng);
    params.arrays.push_back(std::move(w));
    params.arrays.push_back({prefix + ".bias", ArrayKind::DenseBias, 1, out, std::vector<double>(out, 0.0)});
  };

  std::size_t in = spec.input_dim;
  for (std::size_t l = 0; l < spec.block_count(); ++l) {
    const std::size_t width = spec.hidden_dims[l];
    const std::string bn = "bn" + std::to_string(l);
    dense("dense" + std::to_string(l), width, in, 2.0);
    params.arrays.push_back({bn + ".gamma", ArrayKind::BnGamma, 1, width, std::vector<double>(width, 1.0)});
    params.arrays.push_back({bn + ".beta", ArrayKind::BnBeta, 1, width, std::vector<double>(width, 0.0)});
    params.arrays.push_back(
        {bn + ".running_mean", ArrayKind::BnRunningMean, 1, width, std::vector<double>(width, 0.0)});
    params.arrays.push_back(
        {bn + ".running_var", ArrayKind::BnRunningVar, 1, width, std::vector<double>(width, 1.0)});
    in = width;
  }
  dense("out", 1, in, 1.0);
  params.affine_mask = make_mask(params, [](ArrayKind k) { return is_affine(k); });
  return params;
}

enum class ForwardMode {
  Train,            // batch statistics; running statistics updated
  Eval,             // stored running statistics; pure
  AdaptBatchStats,  // batch statistics; running statistics untouched
};

struct BnLayerCache {
  std::vector<double> mean;
  std::vector<double> var;  // biased batch variance, or running variance in Eval
  std::vector<double> inv_std;
  Matrix xhat;
};

struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
};

// Everything backward() needs from one forward pass.
struct ForwardCache {
  ForwardMode mode = ForwardMode::Eval;
  std::uint64_t fingerprint = 0;
  std::size_t batch_rows = 0;
  std::vector<Matrix> dense_inputs;  // input to each dense layer, output layer last
  std::vector<Matrix> bn_outputs;    // pre-ReLU
  std::vector<BnLayerCache> bn;
  std::vector<double> probs;
  std::vector<std::uint8_t> clamped;
  bool consumed = false;
};

struct ForwardResult {
  std::vector<double> p;
  ForwardCache cache;
  // Exponential-moving-average statistics, present only in Train mode.
  std::vector<RunningStats> running_stats;
};

inline ForwardResult forward(const Parameters& params, const NetworkSpec& spec, const Matrix& X,
                             ForwardMode mode) {
  detail::check_shapes(params, spec);
  if (X.cols() != spec.input_dim) {
    throw std::invalid_argument("forward: input has " + std::to_string(X.cols()) +
                                " columns, network expects " + std::to_string(spec.input_dim));
  }
  const std::size_t n = X.rows();
  if (n == 0) throw std::invalid_argument("forward: empty batch");
  const bool batch_stats = mode != ForwardMode::Eval;
  if (batch_stats && n < 2) {
    throw std::invalid_argument("forward: batch-statistics mode needs at least 2 rows");
  }

  ForwardResult res;
  ForwardCache& cache = res.cache;
  cache.mode = mode;
  cache.fingerprint = detail::trainable_fingerprint(params);
  cache.batch_rows = n;

  Matrix act = X;
  for (std::size_t l = 0; l < spec.block_count(); ++l) {
    const auto& W = params.arrays[Parameters::dense_weight(l)];
    const auto& b = params.arrays[Parameters::dense_bias(l)].values;
    const auto& gamma = params.arrays[Parameters::bn_gamma(l)].values;
    const auto& beta = params.arrays[Parameters::bn_beta(l)].values;
    const std::size_t width = W.rows;
    const std::size_t in = W.cols;

    Matrix z(n, width);
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = act.row(i);
      for (std::size_t j = 0; j < width; ++j) {
        double s = b[j];
        const double* wj = W.values.data() + j * in;
        for (std::size_t c = 0; c < in; ++c) s += wj[c] * xi[c];
        z(i, j) = s;
      }
    }

    BnLayerCache bc;
    bc.mean.assign(width, 0.0);
    bc.var.assign(width, 0.0);
    bc.inv_std.assign(width, 0.0);
    if (batch_stats) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < width; ++j) bc.mean[j] += z(i, j);
      for (auto& m : bc.mean) m /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < width; ++j) {
          const double d = z(i, j) - bc.mean[j];
          bc.var[j] += d * d;
        }
      for (auto& v : bc.var) v /= static_cast<double>(n);
    } else {
      bc.mean = params.arrays[Parameters::bn_mean(l)].values;
      bc.var = params.arrays[Parameters::bn_var(l)].values;
    }
    for (std::size_t j = 0; j < width; ++j) bc.inv_std[j] = 1.0 / std::sqrt(bc.var[j] + kBnEps);

    if (mode == ForwardMode::Train) {
      const auto& rm = params.arrays[Parameters::bn_mean(l)].values;
      const auto& rv = params.arrays[Parameters::bn_var(l)].values;
      RunningStats rs{std::vector<double>(width), std::vector<double>(width)};
      const double unbias = static_cast<double>(n) / static_cast<double>(n - 1);
      for (std::size_t j = 0; j < width; ++j) {
        rs.mean[j] = (1.0 - kBnMomentum) * rm[j] + kBnMomentum * bc.mean[j];
        rs.var[j] = (1.0 - kBnMomentum) * rv[j] + kBnMomentum * bc.var[j] * unbias;
      }
      res.running_stats.push_back(std::move(rs));
    }

    bc.xhat = Matrix(n, width);
    Matrix y(n, width);
    Matrix a(n, width);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double xh = (z(i, j) - bc.mean[j]) * bc.inv_std[j];
        bc.xhat(i, j) = xh;
        const double yy = gamma[j] * xh + beta[j];
        y(i, j) = yy;
        a(i, j) = yy > 0.0 ? yy : 0.0;
      }

    cache.dense_inputs.push_back(std::move(act));
    cache.bn_outputs.push_back(std::move(y));
    cache.bn.push_back(std::move(bc));
    act = std::move(a);
  }

  const auto& Wo = params.arrays[params.out_weight()].values;
  const double bo = params.arrays[params.out_bias()].values[0];
  res.p.resize(n);
  cache.probs.resize(n);
  cache.clamped.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = bo;
    const auto ai = act.row(i);
    for (std::size_t c = 0; c < ai.size(); ++c) s += Wo[c] * ai[c];
    double p = detail::sigmoid(s);
    if (p < kProbClamp || p > 1.0 - kProbClamp) {
      p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
      cache.clamped[i] = 1;
    }
    res.p[i] = p;
    cache.probs[i] = p;
  }
  cache.dense_inputs.push_back(std::move(act));
  return res;
}

// Writes the Train-mode moving averages into `params`.
inline void commit_running_stats(Parameters& params, const ForwardResult& res) {
  for (std::size_t l = 0; l < res.running_stats.size(); ++l) {
    params.arrays[Parameters::bn_mean(l)].values = res.running_stats[l].mean;
    params.arrays[Parameters::bn_var(l)].values = res.running_stats[l].var;
  }
}

struct LossValue {
  double value = 0.0;
  std::vector<double> grad;  // d value / d p
};

inline void check_probabilities(std::span<const double> p, const char* who) {
  for (double v : p) {
    if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument(std::string(who) + ": probability outside (0,1)");
  }
}

// Mean negative log-likelihood of labels under p.
inline LossValue bce_loss(std::span<const double> p, std::span<const int> y) {
  if (p.size() != y.size()) throw std::invalid_argument("bce_loss: length mismatch");
  if (p.empty()) throw std::invalid_argument("bce_loss: empty input");
  check_probabilities(p, "bce_loss");
  const double inv_n = 1.0 / static_cast<double>(p.size());
  LossValue out;
  out.grad.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (y[i] != 0 && y[i] != 1) throw std::invalid_argument("bce_loss: labels must be 0 or 1");
    if (y[i] == 1) {
      out.value -= std::log(p[i]);
      out.grad[i] = -inv_n / p[i];
    } else {
      out.value -= std::log1p(-p[i]);
      out.grad[i] = inv_n / (1.0 - p[i]);
    }
  }
  out.value *= inv_n;
  return out;
}

// Mean Bernoulli Shannon entropy (nats).
inline LossValue entropy_loss(std::span<const double> p) {
  if (p.empty()) throw std::invalid_argument("entropy_loss: empty input");
  check_probabilities(p, "entropy_loss");
  const double inv_n = 1.0 / static_cast<double>(p.size());
  LossValue out;
  out.grad.resize(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double lp = std::log(p[i]);
    const double lq = std::log1p(-p[i]);
    out.value -= p[i] * lp + (1.0 - p[i]) * lq;
    out.grad[i] = inv_n * (lq - lp);
  }
  out.value *= inv_n;
  return out;
}

// Gradients share the array layout of Parameters; running-statistics arrays
// are always zero.
struct Gradients {
  std::vector<std::vector<double>> arrays;

  static Gradients zeros_like(const Parameters& params) {
    Gradients g;
    g.arrays.reserve(params.arrays.size());
    for (const auto& a : params.arrays) g.arrays.emplace_back(a.values.size(), 0.0);
    return g;
  }
};

inline Gradients backward(const Parameters& params, const NetworkSpec& spec, ForwardCache& cache,
                          std::span<const double> dloss_dp) {
  detail::check_shapes(params, spec);
  if (cache.consumed) throw std::logic_error("backward: forward cache already consumed");
  if (cache.batch_rows != dloss_dp.size() || cache.bn.size() != spec.block_count()) {
    throw std::invalid_argument("backward: cache does not match this batch or network");
  }
  if (cache.fingerprint != detail::trainable_fingerprint(params)) {
    throw std::invalid_argument("backward: cache is stale for these parameters");
  }
  cache.consumed = true;

  const std::size_t n = cache.batch_rows;
  Gradients g = Gradients::zeros_like(params);

  // Output unit.
  std::vector<double> dlogit(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = cache.probs[i];
    dlogit[i] = cache.clamped[i] ? 0.0 : dloss_dp[i] * p * (1.0 - p);
  }
  const Matrix& a_last = cache.dense_inputs.back();
  const auto& Wo = params.arrays[params.out_weight()].values;
  auto& gWo = g.arrays[params.out_weight()];
  auto& gbo = g.arrays[params.out_bias()];
  Matrix dact(n, a_last.cols());
  for (std::size_t i = 0; i < n; ++i) {
    gbo[0] += dlogit[i];
    for (std::size_t c = 0; c < a_last.cols(); ++c) {
      gWo[c] += dlogit[i] * a_last(i, c);
      dact(i, c) = dlogit[i] * Wo[c];
    }
  }

  const bool batch_stats = cache.mode != ForwardMode::Eval;
  for (std::size_t l = spec.block_count(); l-- > 0;) {
    const auto& bc = cache.bn[l];
    const Matrix& y = cache.bn_outputs[l];
    const Matrix& x_in = cache.dense_inputs[l];
    const auto& gamma = params.arrays[Parameters::bn_gamma(l)].values;
    const auto& W = params.arrays[Parameters::dense_weight(l)];
    const std::size_t width = W.rows;
    const std::size_t in = W.cols;
    auto& g_gamma = g.arrays[Parameters::bn_gamma(l)];
    auto& g_beta = g.arrays[Parameters::bn_beta(l)];

    // ReLU, then BN affine.
    Matrix dxhat(n, width);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < width; ++j) {
        const double dy = y(i, j) > 0.0 ? dact(i, j) : 0.0;
        g_gamma[j] += dy * bc.xhat(i, j);
        g_beta[j] += dy;
        dxhat(i, j) = dy * gamma[j];
      }

    Matrix dz(n, width);
    if (batch_stats) {
      std::vector<double> sum_dxhat(width, 0.0), sum_dxhat_xhat(width, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < width; ++j) {
          sum_dxhat[j] += dxhat(i, j);
          sum_dxhat_xhat[j] += dxhat(i, j) * bc.xhat(i, j);
        }
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < width; ++j) {
          dz(i, j) = bc.inv_std[j] * (dxhat(i, j) - inv_n * sum_dxhat[j] -
                                      bc.xhat(i, j) * inv_n * sum_dxhat_xhat[j]);
        }
    } else {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < width; ++j) dz(i, j) = dxhat(i, j) * bc.inv_std[j];
    }

    auto& gW = g.arrays[Parameters::dense_weight(l)];
    auto& gb = g.arrays[Parameters::dense_bias(l)];
    Matrix dx(n, in);
    for (std::size_t i = 0; i < n; ++i) {
      const auto xi = x_in.row(i);
      for (std::size_t j = 0; j < width; ++j) {
        const double d = dz(i, j);
        if (d == 0.0) continue;
        gb[j] += d;
        double* gwj = gW.data() + j * in;
        const double* wj = W.values.data() + j * in;
        for (std::size_t c = 0; c < in; ++c) {
          gwj[c] += d * xi[c];
          dx(i, c) += d * wj[c];
        }
      }
    }
    dact = std::move(dx);
  }
  return g;
}

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const Parameters& params) {
    AdamState s;
    for (const auto& a : params.arrays) {
      s.m.emplace_back(a.values.size(), 0.0);
      s.v.emplace_back(a.values.size(), 0.0);
    }
    return s;
  }
};

// One bias-corrected Adam update in place. Entries with a false mask flag, and
// all running-statistics entries, keep their value and their moments.
inline void adam_step(Parameters& params, const Gradients& grads, AdamState& state, double lr,
                      const EntryMask* mask = nullptr) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  if (grads.arrays.size() != params.arrays.size() || state.m.size() != params.arrays.size() ||
      state.v.size() != params.arrays.size()) {
    throw std::invalid_argument("adam_step: gradient/state layout does not match parameters");
  }
  if (mask && mask->size() != params.entry_count()) {
    throw std::invalid_argument("adam_step: mask length does not match parameters");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);

  std::size_t offset = 0;
  for (std::size_t a = 0; a < params.arrays.size(); ++a) {
    auto& values = params.arrays[a].values;
    const auto& g = grads.arrays[a];
    if (g.size() != values.size() || state.m[a].size() != values.size()) {
      throw std::invalid_argument("adam_step: array shape mismatch for " + params.arrays[a].name);
    }
    if (is_trainable(params.arrays[a].kind)) {
      auto& m = state.m[a];
      auto& v = state.v[a];
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (mask && !(*mask)[offset + i]) continue;
        m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
        v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        values[i] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
      }
    }
    offset += values.size();
  }
}

}  // namespace fedtta
