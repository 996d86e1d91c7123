#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tta/checkpoint.hpp"
#include "tta/errors.hpp"
#include "tta/matrix.hpp"
#include "tta/network.hpp"
#include "tta/numerics.hpp"

namespace tta {

// Anti-forgetting regularizer: diagonal importance of the BN affine scalars,
// estimated once from pseudo-labeled in-distribution samples and kept fixed
// afterwards.

struct FisherDiag {
  Vector omega;               // aligned with AdaptableView, entries >= 0
  std::size_t sample_count = 0;
};

struct PseudoLabeledSet {
  Matrix features;                    // Q x d
  std::vector<std::uint32_t> labels;  // argmax predictions of the original model
};

// Samples are processed in fixed-size chunks; a trailing single row is folded
// into the previous chunk so batch statistics stay well defined.
inline constexpr std::size_t kFisherChunk = 64;

namespace detail {

inline std::size_t chunk_end(std::size_t begin, std::size_t n, std::size_t chunk, BnMode mode) {
  std::size_t end = std::min(begin + chunk, n);
  if (mode == BnMode::kBatchStats && n - end == 1) end = n;
  return end;
}

inline Matrix take_rows(const Matrix& m, std::size_t begin, std::size_t end) {
  Matrix out(end - begin, m.cols());
  for (std::size_t r = begin; r < end; ++r)
    std::copy(m.row(r).begin(), m.row(r).end(), out.row(r - begin).begin());
  return out;
}

}  // namespace detail

// Hard pseudo-labels from the original model: argmax of its outputs, ties
// broken toward the lowest class index.
inline PseudoLabeledSet pseudo_label(const ParamSet& origin, const Matrix& id_samples,
                                     BnMode mode = BnMode::kBatchStats) {
  if (id_samples.rows() < 2) throw ContractError("pseudo_label: need >= 2 samples");
  PseudoLabeledSet out;
  out.features = id_samples;
  out.labels.resize(id_samples.rows());
  std::size_t begin = 0;
  while (begin < id_samples.rows()) {
    const std::size_t end = detail::chunk_end(begin, id_samples.rows(), kFisherChunk, mode);
    Matrix chunk = detail::take_rows(id_samples, begin, end);
    Matrix logits = forward(origin, chunk, mode);
    for (std::size_t r = 0; r < logits.rows(); ++r)
      out.labels[begin + r] = static_cast<std::uint32_t>(argmax(logits.row(r)));
    begin = end;
  }
  return out;
}

// Diagonal importance: the mean over samples of the squared per-sample
// cross-entropy gradient w.r.t. each BN affine scalar. The square is applied
// per sample, never to a batch-averaged gradient. Deterministic: accumulation
// runs in index order.
inline FisherDiag estimate_fisher(const ParamSet& origin, const PseudoLabeledSet& dset,
                                  BnMode mode = BnMode::kBatchStats) {
  const std::size_t q = dset.features.rows();
  if (q == 0) throw ContractError("estimate_fisher: empty pseudo-labeled set");
  if (q != dset.labels.size()) throw ContractError("estimate_fisher: feature/label mismatch");

  std::size_t affine_count = 0;
  for (std::size_t h : origin.arch().hidden_dims) affine_count += 2 * h;

  FisherDiag fisher;
  fisher.omega.assign(affine_count, 0.0);
  fisher.sample_count = q;

  std::size_t begin = 0;
  while (begin < q) {
    const std::size_t end = detail::chunk_end(begin, q, kFisherChunk, mode);
    Matrix chunk = detail::take_rows(dset.features, begin, end);
    ForwardCache cache;
    Matrix logits = forward(origin, chunk, mode, &cache);
    Matrix probs = softmax_rows(logits);
    for (std::size_t r = 0; r < chunk.rows(); ++r) {
      Matrix dlogits(chunk.rows(), logits.cols());
      for (std::size_t c = 0; c < logits.cols(); ++c) dlogits(r, c) = probs(r, c);
      dlogits(r, dset.labels[begin + r]) -= 1.0;
      ForwardCache per_sample = cache;
      Vector grad = backward_adaptable(per_sample, dlogits);
      for (std::size_t i = 0; i < affine_count; ++i) fisher.omega[i] += grad[i] * grad[i];
    }
    begin = end;
  }
  const double inv_q = 1.0 / static_cast<double>(q);
  for (double& w : fisher.omega) w *= inv_q;
  return fisher;
}

// R(theta, theta_o) = sum_i omega_i * (theta_i - theta_o_i)^2
inline double reg_penalty(std::span<const double> theta, std::span<const double> theta_o,
                          const FisherDiag& fisher) {
  if (theta.size() != theta_o.size() || theta.size() != fisher.omega.size())
    throw ContractError("reg_penalty: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - theta_o[i];
    acc += fisher.omega[i] * d * d;
  }
  return acc;
}

inline Vector reg_grad(std::span<const double> theta, std::span<const double> theta_o,
                       const FisherDiag& fisher) {
  if (theta.size() != theta_o.size() || theta.size() != fisher.omega.size())
    throw ContractError("reg_grad: length mismatch");
  Vector g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i)
    g[i] = 2.0 * fisher.omega[i] * (theta[i] - theta_o[i]);
  return g;
}

// Fisher files reuse the checkpoint container with the tensors "fisher.omega"
// and "fisher.sample_count".
inline void save_fisher(const std::string& path, const ArchSpec& arch, const FisherDiag& fisher) {
  std::vector<Tensor> tensors;
  tensors.push_back(Tensor{"fisher.omega", {fisher.omega.size()}, fisher.omega});
  tensors.push_back(
      Tensor{"fisher.sample_count", {1}, {static_cast<double>(fisher.sample_count)}});
  save_container(path, arch, tensors);
}

inline std::pair<ArchSpec, FisherDiag> load_fisher(const std::string& path) {
  Container c = load_container(path);
  const Tensor* omega = c.find("fisher.omega");
  const Tensor* count = c.find("fisher.sample_count");
  if (!omega || !count || count->values.size() != 1)
    throw IoError("fisher: missing tensors in " + path);
  FisherDiag fisher;
  fisher.omega = omega->values;
  fisher.sample_count = static_cast<std::size_t>(count->values[0]);
  return {c.arch, std::move(fisher)};
}

}  // namespace tta
