#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tta/errors.hpp"
#include "tta/fisher.hpp"
#include "tta/matrix.hpp"
#include "tta/network.hpp"
#include "tta/numerics.hpp"
#include "tta/selection.hpp"
#include "tta/shiftgen.hpp"

namespace tta {

// Streaming test-time adaptation. One code path serves all methods; they
// differ only in the constants fed to it:
//   source : no update at all (running-stats inference)
//   tent   : every sample active with weight 1, no regularizer
//   eta    : entropy/diversity selection, no regularizer
//   eata   : selection plus the Fisher-weighted penalty (beta > 0)

enum class Method { kSource, kTent, kEta, kEata };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::kSource: return "source";
    case Method::kTent: return "tent";
    case Method::kEta: return "eta";
    case Method::kEata: return "eata";
  }
  throw ContractError("method_name: unknown method");
}

inline Method method_from(std::string_view name) {
  if (name == "source") return Method::kSource;
  if (name == "tent") return Method::kTent;
  if (name == "eta") return Method::kEta;
  if (name == "eata") return Method::kEata;
  throw ConfigError("unknown method: " + std::string(name));
}

enum class ResetPolicy { kPerStream, kLifelong, kEpisodic };

inline std::string_view reset_policy_name(ResetPolicy p) {
  switch (p) {
    case ResetPolicy::kPerStream: return "per-stream";
    case ResetPolicy::kLifelong: return "lifelong";
    case ResetPolicy::kEpisodic: return "episodic";
  }
  throw ContractError("reset_policy_name: unknown policy");
}

inline ResetPolicy reset_policy_from(std::string_view name) {
  if (name == "per-stream") return ResetPolicy::kPerStream;
  if (name == "lifelong") return ResetPolicy::kLifelong;
  if (name == "episodic") return ResetPolicy::kEpisodic;
  throw ConfigError("unknown reset policy: " + std::string(name));
}

struct AdaptConfig {
  Method method = Method::kEta;
  double lr = 0.05;
  double momentum = 0.9;
  // Trade-off for the regularizer. With beta_auto the value is derived once
  // per engine from the first measurable batch so the two loss terms match in
  // magnitude at the anticipated drift horizon, then kept frozen.
  double beta = 0.0;
  bool beta_auto = true;
  std::size_t batch_size = 64;
  ResetPolicy reset_policy = ResetPolicy::kPerStream;
  std::optional<std::size_t> window_len;  // single-sample sliding-window mode
  SelectionConfig selection;
  std::uint64_t seed = 0;

  void validate(bool has_fisher) const {
    if (lr <= 0.0) throw ConfigError("AdaptConfig: lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("AdaptConfig: momentum must be in [0,1)");
    if (batch_size < 2) throw ConfigError("AdaptConfig: batch_size must be >= 2");
    if (method == Method::kEata) {
      if (!has_fisher) throw ConfigError("AdaptConfig: method eata requires a Fisher importance file");
      if (!beta_auto && beta <= 0.0) throw ConfigError("AdaptConfig: eata needs beta > 0 or beta_auto");
    }
    if (window_len && *window_len < 2) throw ConfigError("AdaptConfig: window_len must be >= 2");
    if (method == Method::kEta || method == Method::kEata) selection.validate();
  }
};

struct SgdState {
  Vector velocity;

  void reset(std::size_t n) { velocity.assign(n, 0.0); }
};

// v <- momentum * v + g;  theta <- theta - lr * v
inline void sgd_step(AdaptableView& view, std::span<const double> grads, SgdState& state,
                     double lr, double momentum) {
  if (grads.size() != view.size() || state.velocity.size() != view.size())
    throw ContractError("sgd_step: length mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    state.velocity[i] = momentum * state.velocity[i] + grads[i];
    view.set(i, view.get(i) - lr * state.velocity[i]);
  }
}

struct BatchTrace {
  std::size_t batch_index = 0;
  std::string shift_tag;
  std::size_t batch_rows = 0;
  std::size_t n_active = 0;
  double entropy_mean = 0.0;
  double entropy_min = 0.0;
  double entropy_max = 0.0;
  double weight_mean = 0.0;  // mean selection weight S over active samples
  double loss = 0.0;      // weighted entropy term actually differentiated
  double reg_term = 0.0;  // beta * R at the pre-update parameters
  double accuracy = 0.0;  // against held-out labels, before the update
};

struct RunMetrics {
  std::size_t n_forward_samples = 0;
  std::size_t n_backward_samples = 0;
  std::size_t n_skipped_samples = 0;
  std::vector<double> per_batch_accuracy;
  double stream_accuracy = 0.0;
  std::map<std::string, double> per_shift_accuracy;
  std::vector<BatchTrace> traces;
  double beta_used = 0.0;
};

class Engine {
 public:
  Engine(ParamSet model, AdaptConfig config, std::optional<FisherDiag> fisher = std::nullopt)
      : model_(std::move(model)),
        config_(config),
        fisher_(std::move(fisher)),
        view_(model_),
        origin_(model_.snapshot()) {
    config_.validate(fisher_.has_value());
    if (fisher_ && fisher_->omega.size() != view_.size())
      throw ContractError("Engine: Fisher importance is not aligned with the BN affine view");
    sgd_.reset(view_.size());
    if (config_.method == Method::kEata && !config_.beta_auto) {
      beta_ = config_.beta;
      beta_resolved_ = true;
    }
  }

  const ParamSet& params() const { return model_; }
  ParamSet& params_for_test() { return model_; }
  const AdaptConfig& config() const { return config_; }
  const EmaTracker& tracker() const { return tracker_; }
  double resolved_beta() const { return beta_resolved_ ? beta_ : 0.0; }

  // Predict-then-adapt on one batch. Predictions always come from the forward
  // pass made before any parameter change.
  std::vector<std::uint32_t> adapt_batch(const Matrix& batch) {
    const std::size_t rows = batch.rows();
    last_trace_ = BatchTrace{};
    last_trace_.batch_rows = rows;

    if (config_.method == Method::kSource) {
      Matrix logits = forward(model_, batch, BnMode::kRunningStats);
      metrics_.n_forward_samples += rows;
      metrics_.n_skipped_samples += rows;
      fill_entropy_trace(logits);
      return argmax_rows(logits);
    }

    ForwardCache cache;
    Matrix logits = forward(model_, batch, BnMode::kBatchStats, &cache);
    metrics_.n_forward_samples += rows;
    std::vector<std::uint32_t> preds = argmax_rows(logits);

    BatchSelection sel;
    if (config_.method == Method::kTent) {
      sel = unit_selection(logits);
    } else {
      sel = select_batch(logits, config_.selection, tracker_);
    }
    metrics_.n_backward_samples += sel.active_count;
    metrics_.n_skipped_samples += rows - sel.active_count;
    fill_selection_trace(sel);

    if (sel.active_count == 0) {
      ++batch_counter_;
      return preds;  // nothing reliable and non-redundant: parameters untouched
    }

    Matrix probs = softmax_rows(logits);
    const double inv_active = 1.0 / static_cast<double>(sel.active_count);
    double ent_term = 0.0;
    Matrix dlogits(rows, logits.cols());
    for (std::size_t r = 0; r < rows; ++r) {
      if (!sel.active[r]) continue;
      const double scale = sel.weights[r] * inv_active;  // S is a constant here
      ent_term += sel.weights[r] * sel.entropy[r];
      for (std::size_t c = 0; c < logits.cols(); ++c) {
        const double p = probs(r, c);
        if (p > 0.0) dlogits(r, c) = -scale * p * (std::log(p) + sel.entropy[r]);
      }
    }
    ent_term *= inv_active;

    Vector grad = backward_adaptable(cache, dlogits);
    double reg_value = 0.0;
    if (config_.method == Method::kEata) {
      const Vector theta = view_.values();
      reg_value = reg_penalty(theta, view_.origin(), *fisher_);
      if (beta_resolved_) {
        Vector rg = reg_grad(theta, view_.origin(), *fisher_);
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += beta_ * rg[i];
      }
    }
    for (double g : grad)
      if (!std::isfinite(g))
        throw DivergenceError("adapt_batch: non-finite gradient at batch " +
                              std::to_string(batch_counter_));

    sgd_step(view_, grad, sgd_, effective_lr(), config_.momentum);

    if (config_.method == Method::kEata && !beta_resolved_) resolve_beta(ent_term);

    last_trace_.loss = ent_term;
    last_trace_.reg_term = beta_resolved_ ? beta_ * reg_value : 0.0;
    ++batch_counter_;
    return preds;
  }

  // Single-sample mode: the update batch is the sliding window plus the
  // current sample; an underfilled window is padded by cycling the samples
  // available so far. Only the current sample's prediction is reported, and
  // only the current sample counts toward the backward/skip totals.
  std::uint32_t adapt_single(std::span<const double> sample) {
    if (!config_.window_len) throw ConfigError("adapt_single: window_len not configured");
    const std::size_t want = *config_.window_len + 1;

    std::vector<Vector> seq(window_.begin(), window_.end());
    seq.emplace_back(sample.begin(), sample.end());
    const std::size_t have = seq.size();
    Matrix batch(want, sample.size());
    for (std::size_t r = 0; r < want; ++r)
      std::copy(seq[r % have].begin(), seq[r % have].end(), batch.row(r).begin());
    const std::size_t current_row = have - 1;

    // Window-batch bookkeeping must count only the genuinely new sample.
    const std::size_t fwd = metrics_.n_forward_samples;
    const std::size_t bwd = metrics_.n_backward_samples;
    const std::size_t skp = metrics_.n_skipped_samples;
    std::vector<std::uint32_t> preds = adapt_batch(batch);
    const bool active = current_is_active(current_row);
    metrics_.n_forward_samples = fwd + 1;
    metrics_.n_backward_samples = bwd + (active ? 1 : 0);
    metrics_.n_skipped_samples = skp + (active ? 0 : 1);

    window_.emplace_back(sample.begin(), sample.end());
    while (window_.size() > *config_.window_len) window_.pop_front();
    return preds[current_row];
  }

  // Runs one stream under the configured reset policy and returns its
  // metrics. Accuracy is always scored against labels fetched through the
  // stream's evaluation-only API, using the predictions made before each
  // update. `post_adapt` (if given) sees the adapted parameters before any
  // per-stream restore, which is where forgetting protocols measure clean
  // accuracy.
  RunMetrics run_stream(const ShiftStream& stream,
                        const std::function<void(const ParamSet&)>& post_adapt = nullptr) {
    metrics_ = RunMetrics{};
    batch_counter_ = 0;
    if (config_.reset_policy != ResetPolicy::kLifelong) {
      stream_start_ = model_.snapshot();
      sgd_.reset(view_.size());
      tracker_.reset();
      window_.clear();
    }

    std::size_t hits = 0;
    std::map<std::string, std::pair<std::size_t, std::size_t>> shift_hits;

    if (config_.window_len) {
      for (std::size_t i = 0; i < stream.sample_count(); ++i) {
        const std::uint32_t pred = adapt_single(stream.sample(i));
        const std::uint32_t truth = stream.eval_labels(i, i + 1)[0];
        const bool hit = pred == truth;
        hits += hit;
        auto& sh = shift_hits[stream.tag_name(stream.tag(i))];
        sh.first += hit;
        sh.second += 1;
        metrics_.per_batch_accuracy.push_back(hit ? 1.0 : 0.0);
        last_trace_.batch_index = i;
        last_trace_.shift_tag = stream.tag_name(stream.tag(i));
        last_trace_.accuracy = hit ? 1.0 : 0.0;
        metrics_.traces.push_back(last_trace_);
        if (config_.reset_policy == ResetPolicy::kEpisodic) restore_to(stream_start_);
      }
    } else {
      for (std::size_t b = 0; b < stream.batch_count(); ++b) {
        StreamBatch sb = stream.batch(b);
        const std::vector<std::uint32_t> preds = adapt_batch(sb.features);
        const auto labels = stream.eval_labels(sb.begin, sb.end);
        std::size_t batch_hits = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) {
          const bool hit = preds[i] == labels[i];
          batch_hits += hit;
          auto& sh = shift_hits[stream.tag_name(stream.tag(sb.begin + i))];
          sh.first += hit;
          sh.second += 1;
        }
        hits += batch_hits;
        const double acc = static_cast<double>(batch_hits) / static_cast<double>(preds.size());
        metrics_.per_batch_accuracy.push_back(acc);
        last_trace_.batch_index = b;
        last_trace_.shift_tag = stream.tag_name(stream.tag(sb.begin));
        last_trace_.accuracy = acc;
        metrics_.traces.push_back(last_trace_);
        if (config_.reset_policy == ResetPolicy::kEpisodic) restore_to(stream_start_);
      }
    }

    metrics_.stream_accuracy =
        static_cast<double>(hits) / static_cast<double>(stream.sample_count());
    for (const auto& [tag, counts] : shift_hits)
      metrics_.per_shift_accuracy[tag] =
          static_cast<double>(counts.first) / static_cast<double>(counts.second);
    metrics_.beta_used = beta_resolved_ ? beta_ : 0.0;

    if (post_adapt) post_adapt(model_);
    if (config_.reset_policy == ResetPolicy::kPerStream) restore_to(stream_start_);
    return metrics_;
  }

  void restore_to_origin() { restore_to(origin_); }

 private:
  void restore_to(const ParamSet& snap) {
    model_.restore(snap);
    sgd_.reset(view_.size());  // a restored model behaves as fresh
  }

  // In sliding-window mode every sample takes part in window_len + 1
  // consecutive updates instead of one, so the step size is normalized to
  // keep the total per-sample learning pressure equal to batch mode.
  double effective_lr() const {
    if (config_.window_len) return config_.lr / static_cast<double>(*config_.window_len + 1);
    return config_.lr;
  }

  std::vector<std::uint32_t> argmax_rows(const Matrix& logits) const {
    std::vector<std::uint32_t> out(logits.rows());
    for (std::size_t r = 0; r < logits.rows(); ++r)
      out[r] = static_cast<std::uint32_t>(argmax(logits.row(r)));
    return out;
  }

  BatchSelection unit_selection(const Matrix& logits) {
    BatchSelection sel;
    const std::size_t rows = logits.rows();
    sel.entropy.resize(rows);
    sel.ent_weights.assign(rows, 1.0);
    sel.div_weights.assign(rows, 1.0);
    sel.weights.assign(rows, 1.0);
    sel.active.assign(rows, 1);
    sel.active_count = rows;
    Matrix probs = softmax_rows(logits);
    for (std::size_t r = 0; r < rows; ++r) sel.entropy[r] = entropy(probs.row(r));
    return sel;
  }

  void fill_entropy_trace(const Matrix& logits) {
    Matrix probs = softmax_rows(logits);
    double mn = 1e300, mx = -1e300, sum = 0.0;
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      const double e = entropy(probs.row(r));
      mn = std::min(mn, e);
      mx = std::max(mx, e);
      sum += e;
    }
    last_trace_.entropy_mean = sum / static_cast<double>(probs.rows());
    last_trace_.entropy_min = mn;
    last_trace_.entropy_max = mx;
    last_selection_active_.clear();
  }

  void fill_selection_trace(const BatchSelection& sel) {
    double mn = 1e300, mx = -1e300, sum = 0.0;
    for (double e : sel.entropy) {
      mn = std::min(mn, e);
      mx = std::max(mx, e);
      sum += e;
    }
    last_trace_.entropy_mean = sum / static_cast<double>(sel.entropy.size());
    last_trace_.entropy_min = mn;
    last_trace_.entropy_max = mx;
    last_trace_.n_active = sel.active_count;
    if (sel.active_count > 0) {
      double w = 0.0;
      for (std::size_t r = 0; r < sel.weights.size(); ++r)
        if (sel.active[r]) w += sel.weights[r];
      last_trace_.weight_mean = w / static_cast<double>(sel.active_count);
    }
    last_selection_active_ = sel.active;
  }

  bool current_is_active(std::size_t row) const {
    return row < last_selection_active_.size() && last_selection_active_[row];
  }

  // beta so that beta * R matches the entropy term once drift has accumulated
  // for kBetaDriftHorizon optimizer steps (R grows quadratically in the
  // drift). Measured right after the first update that moved the parameters.
  void resolve_beta(double ent_term) {
    const Vector theta = view_.values();
    const double r1 = reg_penalty(theta, view_.origin(), *fisher_);
    if (r1 <= 0.0 || ent_term <= 0.0) return;  // try again on a later batch
    beta_ = ent_term / (kBetaDriftHorizon * kBetaDriftHorizon * r1);
    beta_resolved_ = true;
  }

  static constexpr double kBetaDriftHorizon = 64.0;

  ParamSet model_;
  AdaptConfig config_;
  std::optional<FisherDiag> fisher_;
  AdaptableView view_;
  ParamSet origin_;
  ParamSet stream_start_;
  SgdState sgd_;
  EmaTracker tracker_;
  RunMetrics metrics_;
  BatchTrace last_trace_;
  std::vector<char> last_selection_active_;
  std::deque<Vector> window_;
  std::size_t batch_counter_ = 0;
  double beta_ = 0.0;
  bool beta_resolved_ = false;
};

}  // namespace tta
