#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "tta/errors.hpp"
#include "tta/matrix.hpp"
#include "tta/numerics.hpp"

namespace tta {

// Sample selection for adaptation: a per-sample weight that is zero for
// unreliable (high-entropy) samples and for redundant samples whose prediction
// is too close to the moving average of recently adapted outputs. Evaluating
// the weight needs forward outputs only; nothing here touches gradients.

struct SelectionConfig {
  double entropy_threshold = 0.0;  // E0, in nats
  double cos_threshold = 0.9;      // epsilon; a sample is kept while cos < epsilon
  double ema_alpha = 0.1;

  static SelectionConfig defaults_for(std::size_t class_count) {
    SelectionConfig c;
    c.entropy_threshold = 0.4 * std::log(static_cast<double>(class_count));
    return c;
  }

  void validate() const {
    if (entropy_threshold <= 0.0) throw ConfigError("SelectionConfig: entropy_threshold must be > 0");
    if (cos_threshold <= 0.0 || cos_threshold >= 1.0)
      throw ConfigError("SelectionConfig: cos_threshold must be in (0, 1)");
    if (ema_alpha < 0.0 || ema_alpha > 1.0)
      throw ConfigError("SelectionConfig: ema_alpha must be in [0, 1]");
  }
};

// Moving average of the model outputs of samples used for adaptation. Empty
// until the first update (step == 0 <=> m is empty).
struct EmaTracker {
  Vector m;
  std::uint64_t step = 0;

  bool empty() const { return step == 0; }

  void reset() {
    m.clear();
    step = 0;
  }
};

// Reliability weight: 0 when the entropy reaches the threshold (strict
// indicator), otherwise exp(threshold - entropy), which lies in (1, e^E0].
inline double ent_weight(double entropy_value, double entropy_threshold) {
  if (!std::isfinite(entropy_value) || entropy_value < 0.0)
    throw NumericError("ent_weight: entropy must be finite and non-negative");
  if (entropy_value >= entropy_threshold) return 0.0;
  return std::exp(entropy_threshold - entropy_value);
}

// First update copies the mean prediction; later updates blend with factor
// alpha. `mean_probs` must be the mean prediction of the samples contributing
// at this step.
inline void ema_update(EmaTracker& tracker, std::span<const double> mean_probs, double alpha) {
  if (!tracker.empty() && tracker.m.size() != mean_probs.size())
    throw ContractError("ema_update: length mismatch");
  if (tracker.empty()) {
    tracker.m.assign(mean_probs.begin(), mean_probs.end());
  } else {
    for (std::size_t i = 0; i < tracker.m.size(); ++i)
      tracker.m[i] = alpha * mean_probs[i] + (1.0 - alpha) * tracker.m[i];
  }
  ++tracker.step;
}

// Redundancy indicator: 1 while there is no history or the prediction is
// dissimilar from the tracked average, else 0.
inline int div_weight(std::span<const double> pred_probs, const EmaTracker& tracker, double eps) {
  if (tracker.empty()) return 1;
  if (pred_probs.size() != tracker.m.size()) throw ContractError("div_weight: length mismatch");
  return cosine(pred_probs, tracker.m) < eps ? 1 : 0;
}

struct BatchSelection {
  Vector entropy;      // per sample, nats
  Vector ent_weights;  // S_ent
  Vector div_weights;  // S_div in {0, 1}
  Vector weights;      // S = S_ent * S_div
  std::vector<char> active;  // S > 0
  std::size_t active_count = 0;
};

// Scores one batch of logits against the pre-update tracker state, then folds
// the mean prediction of the *active* samples into the tracker (one tracker
// step per batch; batches with no active samples leave it untouched).
inline BatchSelection select_batch(const Matrix& logits, const SelectionConfig& config,
                                   EmaTracker& tracker) {
  const std::size_t batch_rows = logits.rows();
  const std::size_t c_count = logits.cols();
  BatchSelection sel;
  sel.entropy.resize(batch_rows);
  sel.ent_weights.resize(batch_rows);
  sel.div_weights.resize(batch_rows);
  sel.weights.resize(batch_rows);
  sel.active.assign(batch_rows, 0);

  Matrix probs = softmax_rows(logits);
  Vector active_mean(c_count, 0.0);
  for (std::size_t r = 0; r < batch_rows; ++r) {
    const double e = entropy(probs.row(r));
    const double se = ent_weight(e, config.entropy_threshold);
    const int sd = div_weight(probs.row(r), tracker, config.cos_threshold);
    const double s = se * static_cast<double>(sd);
    sel.entropy[r] = e;
    sel.ent_weights[r] = se;
    sel.div_weights[r] = static_cast<double>(sd);
    sel.weights[r] = s;
    if (s > 0.0) {
      sel.active[r] = 1;
      ++sel.active_count;
      for (std::size_t c = 0; c < c_count; ++c) active_mean[c] += probs(r, c);
    }
  }

  if (sel.active_count > 0) {
    for (double& v : active_mean) v /= static_cast<double>(sel.active_count);
    ema_update(tracker, active_mean, config.ema_alpha);
  }
  return sel;
}

}  // namespace tta
