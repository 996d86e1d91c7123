#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tta/dataset.hpp"
#include "tta/errors.hpp"
#include "tta/matrix.hpp"
#include "tta/numerics.hpp"
#include "tta/rng.hpp"

namespace tta {

// Feed-forward classifier: [Linear -> BatchNorm -> ReLU] x K blocks, then a
// linear head. Two backward paths exist: full (pretraining) and one restricted
// to the BN affine scale/shift parameters (adaptation).

struct ArchSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t class_count = 0;
  double bn_epsilon = 1e-5;
  // Receptive-field groups for the first linear layer: with G > 1 the first
  // hidden units are split into G equal groups and group g reads only the
  // g-th contiguous slice of the input, the dense-feature analog of grouped
  // convolution channels. 1 = plain dense layer.
  std::size_t input_groups = 1;

  void validate() const {
    if (class_count < 2) throw ConfigError("ArchSpec: class_count must be >= 2");
    if (input_dim < 1) throw ConfigError("ArchSpec: input_dim must be >= 1");
    for (std::size_t h : hidden_dims)
      if (h < 1) throw ConfigError("ArchSpec: hidden dims must be >= 1");
    if (bn_epsilon <= 0.0) throw ConfigError("ArchSpec: bn_epsilon must be > 0");
    if (input_groups < 1) throw ConfigError("ArchSpec: input_groups must be >= 1");
    if (input_groups > 1) {
      if (hidden_dims.empty()) throw ConfigError("ArchSpec: input_groups need a hidden layer");
      if (input_dim % input_groups != 0 || hidden_dims[0] % input_groups != 0)
        throw ConfigError("ArchSpec: input_groups must divide input_dim and hidden_dims[0]");
    }
  }

  // First-layer fan-in (slice width under grouping).
  std::size_t group_fan_in() const { return input_dim / input_groups; }

  bool operator==(const ArchSpec&) const = default;
};

struct Tensor {
  std::string name;
  std::vector<std::size_t> dims;
  Vector values;

  std::size_t size() const { return values.size(); }
};

enum class BnMode { kBatchStats, kRunningStats };

// All named tensors of the network, in a fixed order: per block the linear
// weight/bias, BN gamma/beta and the running mean/var buffers, then the head
// weight/bias. Running mean/var are buffers, not parameters: no gradients are
// ever produced for them.
class ParamSet {
 public:
  ParamSet() = default;

  // Weight init, documented exactly for reproducibility: each linear layer
  // draws W then b from the given stream in row-major order, entries uniform
  // in (-1/sqrt(fan_in), 1/sqrt(fan_in)). BN starts at gamma=1, beta=0,
  // running_mean=0, running_var=1.
  static ParamSet init(const ArchSpec& arch, Rng& rng) {
    arch.validate();
    ParamSet p;
    p.arch_ = arch;
    std::size_t in = arch.input_dim;
    for (std::size_t k = 0; k < arch.hidden_dims.size(); ++k) {
      const std::size_t out = arch.hidden_dims[k];
      const std::string id = std::to_string(k);
      // Under grouping the first layer stores only the slice each unit reads;
      // its fan-in is the slice width.
      p.push_linear("linear." + id, out, k == 0 ? arch.group_fan_in() : in, rng);
      p.push_filled("bn." + id + ".gamma", out, 1.0);
      p.push_filled("bn." + id + ".beta", out, 0.0);
      p.push_filled("bn." + id + ".running_mean", out, 0.0);
      p.push_filled("bn." + id + ".running_var", out, 1.0);
      in = out;
    }
    p.push_linear("head", arch.class_count, in, rng);
    return p;
  }

  // Offset of the input slice read by unit j of the first layer.
  std::size_t group_offset(std::size_t unit) const {
    if (arch_.input_groups <= 1) return 0;
    const std::size_t units_per_group = arch_.hidden_dims[0] / arch_.input_groups;
    return (unit / units_per_group) * arch_.group_fan_in();
  }

  const ArchSpec& arch() const { return arch_; }
  std::size_t block_count() const { return arch_.hidden_dims.size(); }

  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }

  // 6 tensors per block, 2 for the head.
  Tensor& linear_weight(std::size_t k) { return tensors_[6 * k + 0]; }
  Tensor& linear_bias(std::size_t k) { return tensors_[6 * k + 1]; }
  Tensor& bn_gamma(std::size_t k) { return tensors_[6 * k + 2]; }
  Tensor& bn_beta(std::size_t k) { return tensors_[6 * k + 3]; }
  Tensor& bn_running_mean(std::size_t k) { return tensors_[6 * k + 4]; }
  Tensor& bn_running_var(std::size_t k) { return tensors_[6 * k + 5]; }
  Tensor& head_weight() { return tensors_[6 * block_count() + 0]; }
  Tensor& head_bias() { return tensors_[6 * block_count() + 1]; }
  const Tensor& linear_weight(std::size_t k) const { return tensors_[6 * k + 0]; }
  const Tensor& linear_bias(std::size_t k) const { return tensors_[6 * k + 1]; }
  const Tensor& bn_gamma(std::size_t k) const { return tensors_[6 * k + 2]; }
  const Tensor& bn_beta(std::size_t k) const { return tensors_[6 * k + 3]; }
  const Tensor& bn_running_mean(std::size_t k) const { return tensors_[6 * k + 4]; }
  const Tensor& bn_running_var(std::size_t k) const { return tensors_[6 * k + 5]; }
  const Tensor& head_weight() const { return tensors_[6 * block_count() + 0]; }
  const Tensor& head_bias() const { return tensors_[6 * block_count() + 1]; }

  // True for tensors that receive gradients (everything but running stats).
  static bool is_parameter(std::size_t tensor_index) { return tensor_index % 6 < 4; }

  // Deep copy; the copy is unaffected by later mutation of the live params.
  ParamSet snapshot() const { return *this; }

  // Makes this bitwise equal to the snapshot. Architectures must match.
  void restore(const ParamSet& snap) {
    if (snap.arch_ != arch_) throw ContractError("ParamSet::restore: arch mismatch");
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      tensors_[i].values = snap.tensors_[i].values;
  }

  bool same_values(const ParamSet& other) const {
    if (other.arch_ != arch_) return false;
    for (std::size_t i = 0; i < tensors_.size(); ++i)
      if (tensors_[i].values != other.tensors_[i].values) return false;
    return true;
  }

 private:
  void push_linear(const std::string& prefix, std::size_t out, std::size_t in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Tensor w{prefix + ".weight", {out, in}, Vector(out * in)};
    for (double& v : w.values) v = rng.next_uniform(-bound, bound);
    Tensor b{prefix + ".bias", {out}, Vector(out)};
    for (double& v : b.values) v = rng.next_uniform(-bound, bound);
    tensors_.push_back(std::move(w));
    tensors_.push_back(std::move(b));
  }

  void push_filled(const std::string& name, std::size_t n, double fill) {
    tensors_.push_back(Tensor{name, {n}, Vector(n, fill)});
  }

  ArchSpec arch_;
  std::vector<Tensor> tensors_;
};

// Flat scalar index over all BN gamma and beta values, in block order (all of
// block k's gamma, then its beta). Captures the origin values at construction;
// that snapshot stays fixed for the lifetime of the view.
class AdaptableView {
 public:
  explicit AdaptableView(ParamSet& params) : params_(&params) {
    for (std::size_t k = 0; k < params.block_count(); ++k) {
      const std::size_t h = params.arch().hidden_dims[k];
      for (std::size_t j = 0; j < h; ++j) slots_.push_back({6 * k + 2, j});
      for (std::size_t j = 0; j < h; ++j) slots_.push_back({6 * k + 3, j});
    }
    origin_ = values();
  }

  std::size_t size() const { return slots_.size(); }

  double get(std::size_t i) const {
    const auto& s = slots_[i];
    return params_->tensors()[s.tensor_index].values[s.offset];
  }

  void set(std::size_t i, double v) {
    const auto& s = slots_[i];
    params_->tensors()[s.tensor_index].values[s.offset] = v;
  }

  Vector values() const {
    Vector out(slots_.size());
    for (std::size_t i = 0; i < slots_.size(); ++i) out[i] = get(i);
    return out;
  }

  void set_values(std::span<const double> v) {
    if (v.size() != slots_.size()) throw ContractError("AdaptableView: length mismatch");
    for (std::size_t i = 0; i < slots_.size(); ++i) set(i, v[i]);
  }

  std::span<const double> origin() const { return origin_; }

 private:
  struct Slot {
    std::size_t tensor_index;
    std::size_t offset;
  };
  ParamSet* params_;
  std::vector<Slot> slots_;
  Vector origin_;
};

// Activations recorded by a forward pass, enough to backpropagate. A cache is
// consumed by at most one backward pass.
struct ForwardCache {
  BnMode mode = BnMode::kBatchStats;
  const ParamSet* params = nullptr;
  Matrix input;
  std::vector<Matrix> x_hat;    // per block, B x h_k
  std::vector<Vector> inv_std;  // per block, h_k
  std::vector<Matrix> act;      // per block post-ReLU, B x h_k
  bool consumed = false;
};

namespace detail {

inline Matrix forward_impl(const ParamSet& params, const Matrix& batch, BnMode mode,
                           ForwardCache* cache, ParamSet* running_update,
                           double bn_momentum) {
  const ArchSpec& arch = params.arch();
  if (batch.cols() != arch.input_dim)
    throw ContractError("forward: batch has " + std::to_string(batch.cols()) +
                        " columns, expected " + std::to_string(arch.input_dim));
  const std::size_t batch_rows = batch.rows();
  if (batch_rows == 0) throw ContractError("forward: empty batch");
  if (mode == BnMode::kBatchStats && batch_rows < 2)
    throw ContractError("forward: batch-stats mode needs >= 2 rows");

  if (cache) {
    cache->mode = mode;
    cache->params = &params;
    cache->input = batch;
    cache->x_hat.clear();
    cache->inv_std.clear();
    cache->act.clear();
    cache->consumed = false;
  }

  const double inv_b = 1.0 / static_cast<double>(batch_rows);
  Matrix a = batch;
  for (std::size_t k = 0; k < params.block_count(); ++k) {
    const std::size_t h = arch.hidden_dims[k];
    const Tensor& w = params.linear_weight(k);
    const Tensor& b = params.linear_bias(k);
    const std::size_t in = w.dims[1];

    Matrix z(batch_rows, h);
    for (std::size_t r = 0; r < batch_rows; ++r) {
      const auto ar = a.row(r);
      for (std::size_t j = 0; j < h; ++j) {
        const double* wj = w.values.data() + j * in;
        const std::size_t off = k == 0 ? params.group_offset(j) : 0;
        double acc = b.values[j];
        for (std::size_t c = 0; c < in; ++c) acc += ar[off + c] * wj[c];
        z(r, j) = acc;
      }
    }
    // ReLU would silently turn NaN into 0 downstream, so catch bad values here.
    ensure_finite(z, "forward pre-activations");

    Vector mean(h, 0.0), var(h, 0.0);
    if (mode == BnMode::kBatchStats) {
      for (std::size_t r = 0; r < batch_rows; ++r)
        for (std::size_t j = 0; j < h; ++j) mean[j] += z(r, j);
      for (double& m : mean) m *= inv_b;
      for (std::size_t r = 0; r < batch_rows; ++r)
        for (std::size_t j = 0; j < h; ++j) {
          const double d = z(r, j) - mean[j];
          var[j] += d * d;
        }
      for (double& v : var) v *= inv_b;  // biased, used for normalization
    } else {
      mean = params.bn_running_mean(k).values;
      var = params.bn_running_var(k).values;
    }

    Vector inv_std(h);
    for (std::size_t j = 0; j < h; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + arch.bn_epsilon);

    const Vector& gamma = params.bn_gamma(k).values;
    const Vector& beta = params.bn_beta(k).values;
    Matrix x_hat(batch_rows, h);
    Matrix out(batch_rows, h);
    for (std::size_t r = 0; r < batch_rows; ++r)
      for (std::size_t j = 0; j < h; ++j) {
        const double xh = (z(r, j) - mean[j]) * inv_std[j];
        x_hat(r, j) = xh;
        const double u = gamma[j] * xh + beta[j];
        out(r, j) = u > 0.0 ? u : 0.0;  // ReLU; subgradient at 0 taken as 0
      }

    if (running_update) {
      // Standard EMA of batch stats; the variance stored is the unbiased one.
      Vector& rm = running_update->bn_running_mean(k).values;
      Vector& rv = running_update->bn_running_var(k).values;
      const double unbias = batch_rows > 1
                                ? static_cast<double>(batch_rows) / static_cast<double>(batch_rows - 1)
                                : 1.0;
      for (std::size_t j = 0; j < h; ++j) {
        rm[j] = (1.0 - bn_momentum) * rm[j] + bn_momentum * mean[j];
        rv[j] = (1.0 - bn_momentum) * rv[j] + bn_momentum * var[j] * unbias;
      }
    }

    if (cache) {
      cache->x_hat.push_back(std::move(x_hat));
      cache->inv_std.push_back(std::move(inv_std));
      cache->act.push_back(out);
    }
    a = std::move(out);
  }

  const Tensor& hw = params.head_weight();
  const Tensor& hb = params.head_bias();
  const std::size_t c_count = arch.class_count;
  const std::size_t in = hw.dims[1];
  Matrix logits(batch_rows, c_count);
  for (std::size_t r = 0; r < batch_rows; ++r) {
    const auto ar = a.row(r);
    for (std::size_t j = 0; j < c_count; ++j) {
      const double* wj = hw.values.data() + j * in;
      double acc = hb.values[j];
      for (std::size_t c = 0; c < in; ++c) acc += ar[c] * wj[c];
      logits(r, j) = acc;
    }
  }
  ensure_finite(logits, "forward logits");
  return logits;
}

}  // namespace detail

inline Matrix forward(const ParamSet& params, const Matrix& batch, BnMode mode,
                      ForwardCache* cache = nullptr) {
  return detail::forward_impl(params, batch, mode, cache, nullptr, 0.0);
}

// Batch-stats forward that also folds the batch statistics into the running
// buffers (pretraining only).
inline Matrix forward_train(ParamSet& params, const Matrix& batch, ForwardCache* cache,
                            double bn_momentum = 0.1) {
  return detail::forward_impl(params, batch, BnMode::kBatchStats, cache, &params, bn_momentum);
}

struct Gradients {
  // One tensor per parameter tensor, same names/order as in ParamSet
  // (running stats excluded).
  std::vector<Tensor> tensors;

  Tensor* find(std::string_view name) {
    for (auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

// Shared backward walk. Propagates through every layer; materializes linear
// weight/bias grads only when `full` is set. BN affine grads are always
// produced, flattened in AdaptableView order.
inline void backward_impl(ForwardCache& cache, const Matrix& dlogits, bool full,
                          Gradients* out_full, Vector* out_affine) {
  if (cache.params == nullptr) throw ContractError("backward: cache not produced by forward");
  if (cache.consumed) throw ContractError("backward: cache already consumed");
  cache.consumed = true;

  const ParamSet& params = *cache.params;
  const ArchSpec& arch = params.arch();
  const std::size_t blocks = params.block_count();
  const std::size_t batch_rows = cache.input.rows();
  if (dlogits.rows() != batch_rows || dlogits.cols() != arch.class_count)
    throw ContractError("backward: dlogits shape mismatch");

  std::vector<Vector> gamma_grads(blocks), beta_grads(blocks);
  if (out_full) out_full->tensors.clear();

  // Head.
  const Matrix& last_act = blocks ? cache.act[blocks - 1] : cache.input;
  const Tensor& hw = params.head_weight();
  if (full) {
    Matrix dw = matmul_at(dlogits, last_act);  // C x h
    Tensor tw{hw.name, hw.dims, std::move(dw.data())};
    Tensor tb{params.head_bias().name, params.head_bias().dims, Vector(arch.class_count, 0.0)};
    for (std::size_t r = 0; r < batch_rows; ++r)
      for (std::size_t j = 0; j < arch.class_count; ++j) tb.values[j] += dlogits(r, j);
    out_full->tensors.push_back(std::move(tw));
    out_full->tensors.push_back(std::move(tb));
  }

  // d(last activation)
  Matrix da(batch_rows, hw.dims[1]);
  {
    const std::size_t in = hw.dims[1];
    for (std::size_t r = 0; r < batch_rows; ++r)
      for (std::size_t j = 0; j < arch.class_count; ++j) {
        const double g = dlogits(r, j);
        if (g == 0.0) continue;
        const double* wj = hw.values.data() + j * in;
        for (std::size_t c = 0; c < in; ++c) da(r, c) += g * wj[c];
      }
  }

  const double inv_b = 1.0 / static_cast<double>(batch_rows);
  for (std::size_t k = blocks; k-- > 0;) {
    const std::size_t h = arch.hidden_dims[k];
    const Matrix& act = cache.act[k];
    const Matrix& x_hat = cache.x_hat[k];
    const Vector& inv_std = cache.inv_std[k];
    const Vector& gamma = params.bn_gamma(k).values;

    // ReLU gate, then BN affine grads.
    Matrix du = std::move(da);
    for (std::size_t r = 0; r < batch_rows; ++r)
      for (std::size_t j = 0; j < h; ++j)
        if (act(r, j) <= 0.0) du(r, j) = 0.0;

    Vector dgamma(h, 0.0), dbeta(h, 0.0);
    for (std::size_t r = 0; r < batch_rows; ++r)
      for (std::size_t j = 0; j < h; ++j) {
        dgamma[j] += du(r, j) * x_hat(r, j);
        dbeta[j] += du(r, j);
      }

    // Through the normalization to the linear output.
    Matrix dz(batch_rows, h);
    if (cache.mode == BnMode::kBatchStats) {
      Vector sum_dxh(h, 0.0), sum_dxh_xh(h, 0.0);
      for (std::size_t r = 0; r < batch_rows; ++r)
        for (std::size_t j = 0; j < h; ++j) {
          const double dxh = du(r, j) * gamma[j];
          sum_dxh[j] += dxh;
          sum_dxh_xh[j] += dxh * x_hat(r, j);
        }
      for (std::size_t r = 0; r < batch_rows; ++r)
        for (std::size_t j = 0; j < h; ++j) {
          const double dxh = du(r, j) * gamma[j];
          dz(r, j) = inv_std[j] * (dxh - inv_b * sum_dxh[j] - inv_b * x_hat(r, j) * sum_dxh_xh[j]);
        }
    } else {
      // Running statistics are constants.
      for (std::size_t r = 0; r < batch_rows; ++r)
        for (std::size_t j = 0; j < h; ++j) dz(r, j) = du(r, j) * gamma[j] * inv_std[j];
    }

    const Matrix& block_input = k == 0 ? cache.input : cache.act[k - 1];
    const Tensor& w = params.linear_weight(k);
    if (full) {
      const std::size_t in = w.dims[1];
      Matrix dw(h, in);
      for (std::size_t r = 0; r < batch_rows; ++r)
        for (std::size_t j = 0; j < h; ++j) {
          const double g = dz(r, j);
          if (g == 0.0) continue;
          const std::size_t off = k == 0 ? params.group_offset(j) : 0;
          const auto br = block_input.row(r);
          for (std::size_t c = 0; c < in; ++c) dw(j, c) += g * br[off + c];
        }
      Tensor tw{w.name, w.dims, std::move(dw.data())};
      Tensor tb{params.linear_bias(k).name, params.linear_bias(k).dims, Vector(h, 0.0)};
      for (std::size_t r = 0; r < batch_rows; ++r)
        for (std::size_t j = 0; j < h; ++j) tb.values[j] += dz(r, j);
      // Prepend so the final order matches the ParamSet parameter order.
      out_full->tensors.insert(out_full->tensors.begin(),
                               {std::move(tw), std::move(tb),
                                Tensor{params.bn_gamma(k).name, {h}, dgamma},
                                Tensor{params.bn_beta(k).name, {h}, dbeta}});
    }
    gamma_grads[k] = std::move(dgamma);
    beta_grads[k] = std::move(dbeta);

    if (k > 0) {
      const std::size_t in = w.dims[1];
      Matrix dprev(batch_rows, in);
      for (std::size_t r = 0; r < batch_rows; ++r)
        for (std::size_t j = 0; j < h; ++j) {
          const double g = dz(r, j);
          if (g == 0.0) continue;
          const double* wj = w.values.data() + j * in;
          for (std::size_t c = 0; c < in; ++c) dprev(r, c) += g * wj[c];
        }
      da = std::move(dprev);
    }
  }

  if (out_affine) {
    out_affine->clear();
    for (std::size_t k = 0; k < blocks; ++k) {
      out_affine->insert(out_affine->end(), gamma_grads[k].begin(), gamma_grads[k].end());
      out_affine->insert(out_affine->end(), beta_grads[k].begin(), beta_grads[k].end());
    }
  }
}

}  // namespace detail

// Gradient over the BN affine scalars only, flattened in AdaptableView order.
inline Vector backward_adaptable(ForwardCache& cache, const Matrix& dlogits) {
  Vector affine;
  detail::backward_impl(cache, dlogits, /*full=*/false, nullptr, &affine);
  return affine;
}

inline Gradients backward_full(ForwardCache& cache, const Matrix& dlogits) {
  Gradients grads;
  detail::backward_impl(cache, dlogits, /*full=*/true, &grads, nullptr);
  return grads;
}

// Predictions in evaluation batches. Under batch-stats mode batches must have
// >= 2 rows, so a trailing single row is folded into the previous chunk.
inline std::vector<std::uint32_t> predict(const ParamSet& params, const Matrix& features,
                                          BnMode mode, std::size_t batch_size = 64) {
  const std::size_t n = features.rows();
  std::vector<std::uint32_t> out(n);
  std::size_t begin = 0;
  while (begin < n) {
    std::size_t end = std::min(begin + batch_size, n);
    if (mode == BnMode::kBatchStats && n - end == 1) end = n;
    Matrix chunk(end - begin, features.cols());
    for (std::size_t r = begin; r < end; ++r)
      std::copy(features.row(r).begin(), features.row(r).end(), chunk.row(r - begin).begin());
    Matrix logits = forward(params, chunk, mode);
    for (std::size_t r = 0; r < logits.rows(); ++r)
      out[begin + r] = static_cast<std::uint32_t>(argmax(logits.row(r)));
    begin = end;
  }
  return out;
}

inline double accuracy(const ParamSet& params, const LabeledSet& data, BnMode mode,
                       std::size_t batch_size = 64) {
  const auto preds = predict(params, data.features, mode, batch_size);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == data.labels[i]) ++hits;
  return preds.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(preds.size());
}

struct TrainHyper {
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  // Keeps logits bounded so the pretrained model reports calibrated
  // uncertainty instead of saturating.
  double label_smoothing = 0.1;
  std::uint64_t seed = 0;
};

// Supervised pretraining with SGD + momentum and cross-entropy. Deterministic
// given the seed. epochs = 0 still runs one forward-only pass so the running
// BN statistics get populated.
inline ParamSet train_base(const ArchSpec& arch, const LabeledSet& train, const TrainHyper& hyper) {
  arch.validate();
  if (train.features.rows() != train.labels.size())
    throw ContractError("train_base: feature/label count mismatch");
  if (train.features.rows() < 2) throw ContractError("train_base: need >= 2 samples");

  Rng rng(hyper.seed);
  Rng init_rng = rng.fork("init");
  ParamSet params = ParamSet::init(arch, init_rng);

  const std::size_t n = train.features.rows();
  const std::size_t bsz = std::max<std::size_t>(2, hyper.batch_size);

  auto gather = [&](const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
    Matrix batch(end - begin, arch.input_dim);
    std::vector<std::uint32_t> labels(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t src = order[i];
      std::copy(train.features.row(src).begin(), train.features.row(src).end(),
                batch.row(i - begin).begin());
      labels[i - begin] = train.labels[src];
    }
    return std::make_pair(std::move(batch), std::move(labels));
  };

  if (hyper.epochs == 0) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t begin = 0; begin < n; begin += bsz) {
      std::size_t end = std::min(begin + bsz, n);
      if (end - begin < 2) break;  // a 1-row remainder cannot form batch statistics
      auto [batch, labels] = gather(order, begin, end);
      forward_train(params, batch, nullptr);
    }
    return params;
  }

  // Momentum buffers aligned with the tensor list (buffers stay empty for
  // running stats).
  std::vector<Vector> velocity(params.tensors().size());
  for (std::size_t i = 0; i < velocity.size(); ++i)
    if (ParamSet::is_parameter(i)) velocity[i].assign(params.tensors()[i].size(), 0.0);

  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    Rng shuffle_rng = rng.fork("shuffle", epoch);
    std::vector<std::size_t> order = shuffle_rng.permutation(n);
    for (std::size_t begin = 0; begin < n; begin += bsz) {
      std::size_t end = std::min(begin + bsz, n);
      if (end - begin < 2) break;
      auto [batch, labels] = gather(order, begin, end);

      ForwardCache cache;
      Matrix logits;
      try {
        logits = forward_train(params, batch, &cache);
      } catch (const NumericError&) {
        throw DivergenceError("train_base: non-finite activations at epoch " +
                              std::to_string(epoch));
      }
      Matrix probs = softmax_rows(logits);

      const double inv_rows = 1.0 / static_cast<double>(batch.rows());
      const double smooth = hyper.label_smoothing;
      const double off_target = smooth / static_cast<double>(arch.class_count);
      double loss = 0.0;
      Matrix dlogits = probs;
      for (std::size_t r = 0; r < batch.rows(); ++r) {
        for (std::size_t c = 0; c < arch.class_count; ++c) {
          const double target = off_target + (c == labels[r] ? 1.0 - smooth : 0.0);
          loss -= target * std::log(std::max(probs(r, c), 1e-300));
          dlogits(r, c) = (dlogits(r, c) - target) * inv_rows;
        }
      }
      loss *= inv_rows;
      if (!std::isfinite(loss))
        throw DivergenceError("train_base: non-finite loss at epoch " + std::to_string(epoch));

      Gradients grads = backward_full(cache, dlogits);
      std::size_t g = 0;
      for (std::size_t i = 0; i < params.tensors().size(); ++i) {
        if (!ParamSet::is_parameter(i)) continue;
        Vector& vel = velocity[i];
        Vector& vals = params.tensors()[i].values;
        const Vector& gv = grads.tensors[g++].values;
        for (std::size_t j = 0; j < vals.size(); ++j) {
          vel[j] = hyper.momentum * vel[j] + gv[j];
          vals[j] -= hyper.lr * vel[j];
        }
      }
    }
  }
  return params;
}

}  // namespace tta
