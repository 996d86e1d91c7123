// Test-only oracles, kept independent of the library's forward/backward
// implementation: a dual-number forward-mode differentiator (also usable as a
// second opinion on the forward pass), finite differences, and extended
// precision reference formulas.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "tta/matrix.hpp"
#include "tta/network.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Forward-mode dual numbers
// ---------------------------------------------------------------------------

struct Dual {
  double v = 0.0;
  double d = 0.0;
  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit by design
  Dual(double value, double deriv) : v(value), d(deriv) {}
};

inline Dual operator+(Dual a, Dual b) { return {a.v + b.v, a.d + b.d}; }
inline Dual operator-(Dual a, Dual b) { return {a.v - b.v, a.d - b.d}; }
inline Dual operator*(Dual a, Dual b) { return {a.v * b.v, a.d * b.v + a.v * b.d}; }
inline Dual operator/(Dual a, Dual b) {
  return {a.v / b.v, (a.d * b.v - a.v * b.d) / (b.v * b.v)};
}
inline Dual dsqrt(Dual a) {
  const double s = std::sqrt(a.v);
  return {s, a.d / (2.0 * s)};
}
inline Dual dlog(Dual a) { return {std::log(a.v), a.d / a.v}; }
inline Dual dexp(Dual a) {
  const double e = std::exp(a.v);
  return {e, a.d * e};
}
inline Dual drelu(Dual a) { return a.v > 0.0 ? a : Dual{0.0, 0.0}; }

// Identifies one BN affine scalar: block index, gamma (false = beta), offset.
struct AffineScalar {
  std::size_t block = 0;
  bool is_beta = false;
  std::size_t offset = 0;
};

// AdaptableView order: per block all gammas, then all betas.
inline AffineScalar affine_scalar_at(const std::vector<std::size_t>& hidden_dims,
                                     std::size_t flat_index) {
  for (std::size_t k = 0; k < hidden_dims.size(); ++k) {
    const std::size_t h = hidden_dims[k];
    if (flat_index < h) return {k, false, flat_index};
    flat_index -= h;
    if (flat_index < h) return {k, true, flat_index};
    flat_index -= h;
  }
  throw std::out_of_range("affine_scalar_at");
}

// Plain re-implementation of the network forward pass on dual numbers. If
// `seed` is given, that BN affine scalar carries derivative 1. Written with
// per-sample loops on purpose; it shares no code with the library.
inline std::vector<std::vector<Dual>> dual_forward(const tta::ParamSet& params,
                                                   const tta::Matrix& batch, tta::BnMode mode,
                                                   const AffineScalar* seed = nullptr) {
  const tta::ArchSpec& arch = params.arch();
  const std::size_t n = batch.rows();
  std::vector<std::vector<Dual>> act(n);
  for (std::size_t r = 0; r < n; ++r)
    act[r].assign(batch.row(r).begin(), batch.row(r).end());

  for (std::size_t k = 0; k < arch.hidden_dims.size(); ++k) {
    const std::size_t h = arch.hidden_dims[k];
    const auto& w = params.linear_weight(k).values;
    const auto& b = params.linear_bias(k).values;
    const std::size_t in = params.linear_weight(k).dims[1];

    std::vector<std::vector<Dual>> z(n, std::vector<Dual>(h));
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < h; ++j) {
        const std::size_t off = k == 0 ? params.group_offset(j) : 0;
        Dual acc(b[j]);
        for (std::size_t c = 0; c < in; ++c) acc = acc + act[r][off + c] * Dual(w[j * in + c]);
        z[r][j] = acc;
      }

    std::vector<Dual> mean(h), var(h);
    if (mode == tta::BnMode::kBatchStats) {
      for (std::size_t j = 0; j < h; ++j) {
        Dual m(0.0);
        for (std::size_t r = 0; r < n; ++r) m = m + z[r][j];
        m = m / Dual(static_cast<double>(n));
        Dual v(0.0);
        for (std::size_t r = 0; r < n; ++r) {
          Dual d = z[r][j] - m;
          v = v + d * d;
        }
        mean[j] = m;
        var[j] = v / Dual(static_cast<double>(n));
      }
    } else {
      for (std::size_t j = 0; j < h; ++j) {
        mean[j] = Dual(params.bn_running_mean(k).values[j]);
        var[j] = Dual(params.bn_running_var(k).values[j]);
      }
    }

    for (std::size_t r = 0; r < n; ++r) {
      std::vector<Dual> out(h);
      for (std::size_t j = 0; j < h; ++j) {
        Dual gamma(params.bn_gamma(k).values[j]);
        Dual beta(params.bn_beta(k).values[j]);
        if (seed && seed->block == k && seed->offset == j) {
          if (seed->is_beta)
            beta.d = 1.0;
          else
            gamma.d = 1.0;
        }
        Dual xh = (z[r][j] - mean[j]) / dsqrt(var[j] + Dual(arch.bn_epsilon));
        out[j] = drelu(gamma * xh + beta);
      }
      act[r] = std::move(out);
    }
  }

  const auto& hw = params.head_weight().values;
  const auto& hb = params.head_bias().values;
  const std::size_t in = params.head_weight().dims[1];
  std::vector<std::vector<Dual>> logits(n, std::vector<Dual>(arch.class_count));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < arch.class_count; ++j) {
      Dual acc(hb[j]);
      for (std::size_t c = 0; c < in; ++c) acc = acc + act[r][c] * Dual(hw[j * in + c]);
      logits[r][j] = acc;
    }
  return logits;
}

// Cross-entropy of one row against a hard label, via shifted log-sum-exp.
inline Dual dual_cross_entropy(const std::vector<Dual>& logits, std::uint32_t label) {
  double mx = logits[0].v;
  for (const Dual& l : logits) mx = std::max(mx, l.v);
  Dual sum(0.0);
  for (const Dual& l : logits) sum = sum + dexp(l - Dual(mx));
  return Dual(mx) + dlog(sum) - logits[label];
}

// Per-sample CE derivatives w.r.t. one BN affine scalar, all samples at once.
inline std::vector<double> dual_ce_grads(const tta::ParamSet& params, const tta::Matrix& batch,
                                         const std::vector<std::uint32_t>& labels, tta::BnMode mode,
                                         std::size_t flat_affine_index) {
  const AffineScalar seed = affine_scalar_at(params.arch().hidden_dims, flat_affine_index);
  const auto logits = dual_forward(params, batch, mode, &seed);
  std::vector<double> out(batch.rows());
  for (std::size_t r = 0; r < batch.rows(); ++r)
    out[r] = dual_cross_entropy(logits[r], labels[r]).d;
  return out;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

// Central difference of `loss` w.r.t. one scalar inside a mutable ParamSet.
inline double fd_param(tta::ParamSet& params, std::size_t tensor_index, std::size_t offset,
                       const std::function<double()>& loss, double h) {
  double& slot = params.tensors()[tensor_index].values[offset];
  const double saved = slot;
  slot = saved + h;
  const double up = loss();
  slot = saved - h;
  const double down = loss();
  slot = saved;
  return (up - down) / (2.0 * h);
}

// Relative error with a floor: gradients that are analytically zero (e.g.
// linear biases under batch statistics, whose effect the mean subtraction
// cancels exactly) compare against pure finite-difference roundoff, so tiny
// disagreements below the floor count as matches. At O(1) loss scales the
// roundoff of a central difference with h = 1e-5 is around 1e-10, far under
// the floor.
inline double relative_error(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-5});
  return std::abs(got - want) / denom;
}

// Smallest |pre-ReLU activation| across the batch. Finite differences are
// only trustworthy when no ReLU sits within the perturbation's reach of its
// kink, so gradient-check fixtures require a margin.
inline double relu_margin(const tta::ParamSet& params, const tta::Matrix& batch,
                          tta::BnMode mode) {
  tta::ForwardCache cache;
  tta::forward(params, batch, mode, &cache);
  double margin = 1e300;
  for (std::size_t k = 0; k < params.block_count(); ++k) {
    const auto& gamma = params.bn_gamma(k).values;
    const auto& beta = params.bn_beta(k).values;
    const tta::Matrix& xh = cache.x_hat[k];
    for (std::size_t r = 0; r < xh.rows(); ++r)
      for (std::size_t j = 0; j < xh.cols(); ++j)
        margin = std::min(margin, std::abs(gamma[j] * xh(r, j) + beta[j]));
  }
  return margin;
}

// ---------------------------------------------------------------------------
// Extended precision references
// ---------------------------------------------------------------------------

inline std::vector<double> softmax_longdouble(const std::vector<double>& logits) {
  long double mx = logits[0];
  for (double v : logits) mx = std::max<long double>(mx, v);
  long double sum = 0.0L;
  std::vector<long double> e(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    e[i] = std::exp(static_cast<long double>(logits[i]) - mx);
    sum += e[i];
  }
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(e[i] / sum);
  return out;
}

inline double entropy_longdouble(const std::vector<double>& probs) {
  long double h = 0.0L;
  for (double p : probs)
    if (p > 0.0) h -= static_cast<long double>(p) * std::log(static_cast<long double>(p));
  return static_cast<double>(h);
}

}  // namespace oracle
