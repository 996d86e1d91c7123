#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "tta/errors.hpp"
#include "tta/matrix.hpp"

namespace tta {

// Stable softmax: subtracts the row maximum before exponentiating, so the
// result is exactly invariant under a constant shift of the logits.
inline Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw ContractError("softmax: empty input");
  ensure_finite(logits, "softmax");
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    Vector p = softmax(logits.row(r));
    std::copy(p.begin(), p.end(), out.row(r).begin());
  }
  return out;
}

// Shannon entropy in nats with the convention 0*log 0 = 0. Input must be a
// probability vector (entries >= 0, sum 1 within 1e-9).
inline double entropy(std::span<const double> probs) {
  double sum = 0.0;
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0)
      throw NumericError("entropy: negative or non-finite probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw NumericError("entropy: probabilities do not sum to 1");
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("cosine: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine: zero-norm vector");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

// Ties break toward the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw ContractError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

}  // namespace tta
