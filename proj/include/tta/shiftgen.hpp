#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tta/dataset.hpp"
#include "tta/errors.hpp"
#include "tta/matrix.hpp"
#include "tta/rng.hpp"

namespace tta {

// Synthetic in-distribution data (Gaussian blobs) and parametric feature-space
// corruptions with five severity levels, the desk-scale stand-in for
// corruption-type x severity benchmarks.

struct SourceSpec {
  std::size_t class_count = 4;
  std::size_t input_dim = 32;
  std::size_t samples_per_class = 1000;  // per split (train and test each)
  // Features live in a pixel-like [0, 1] range. Each coordinate j carries a
  // seeded detail level u_j ~ uniform(0, 1) that couples two scales:
  //   center spread_j = center_scale  * 10^(-u_j)     (class separation)
  //   within-class s_j = within_stddev * 10^(-3 u_j)  (sample noise)
  // High-detail coordinates separate classes crisply (high SNR, the features
  // a trained model leans on) but their absolute separation is tiny, so
  // additive corruption wipes them out first; low-detail coordinates are
  // coarse yet survive corruption. This mirrors how image models prefer
  // high-frequency detail that corruption destroys.
  double center_scale = 0.8;
  double within_stddev = 0.15;
  std::uint64_t seed = 0;

  void validate() const {
    if (class_count < 2) throw ConfigError("SourceSpec: class_count must be >= 2");
    if (input_dim < 2) throw ConfigError("SourceSpec: input_dim must be >= 2");
    if (samples_per_class < 1) throw ConfigError("SourceSpec: samples_per_class must be >= 1");
    if (within_stddev <= 0.0) throw ConfigError("SourceSpec: within_stddev must be > 0");
  }

  bool operator==(const SourceSpec&) const = default;
};

// Train and test splits are disjoint by construction: each class draws
// 2*samples_per_class points from its blob; the first half goes to train, the
// second to test. Class priors are uniform.
inline constexpr std::size_t kDetailBands = 8;
inline constexpr double kClosePairMahalanobis = 5.5;
inline constexpr double kClosePairDetail = 0.25;

inline std::pair<LabeledSet, LabeledSet> make_source(const SourceSpec& spec) {
  spec.validate();
  Rng root(spec.seed);

  // Per-coordinate detail levels drive both the center spread and the
  // within-class stddev (see SourceSpec). Detail varies in contiguous bands
  // so that locality in coordinate index is meaningful, the way neighboring
  // image frequencies share character.
  Vector spread(spec.input_dim), coord_std(spec.input_dim);
  {
    Rng vrng = root.fork("detail");
    const std::size_t bands = std::min<std::size_t>(kDetailBands, spec.input_dim);
    Vector band_u(bands);
    for (double& u : band_u) u = vrng.next_double();
    for (std::size_t j = 0; j < spec.input_dim; ++j) {
      const double u = band_u[j * bands / spec.input_dim];
      spread[j] = spec.center_scale * std::pow(10.0, -1.0 * u);
      coord_std[j] = spec.within_stddev * std::pow(10.0, -3.0 * u);
    }
  }

  // Centers: per-coordinate uniform around mid-range, so features occupy the
  // sensor range asymmetrically the way pixel intensities do.
  std::vector<Vector> centers(spec.class_count, Vector(spec.input_dim));
  for (std::size_t c = 0; c < spec.class_count; ++c) {
    Rng crng = root.fork("center", c);
    for (std::size_t j = 0; j < spec.input_dim; ++j)
      centers[c][j] = 0.5 + spread[j] * (crng.next_double() - 0.5);
  }

  // Classes 0 and 1 form a deliberately close pair: they coincide except
  // inside the highest-detail band, where they sit a fixed Mahalanobis
  // distance apart. The pair is cleanly separable through fine detail (a few
  // percent of clean mass near the boundary) and collapses once corruption
  // wipes that detail out.
  if (spec.class_count >= 2) {
    // Pick the band whose detail level is nearest a fixed target: fine enough
    // that corruption destroys the pair's distinction, coarse enough that the
    // distinction is learnable at the trained scales.
    const std::size_t bands = std::min<std::size_t>(kDetailBands, spec.input_dim);
    const double target = spec.within_stddev * std::pow(10.0, -3.0 * kClosePairDetail);
    std::size_t pick = 0;
    for (std::size_t j = 1; j < spec.input_dim; ++j)
      if (std::abs(std::log(coord_std[j] / target)) <
          std::abs(std::log(coord_std[pick] / target)))
        pick = j;
    const std::size_t band = pick * bands / spec.input_dim;
    const std::size_t lo = band * spec.input_dim / bands;
    const std::size_t hi = (band + 1) * spec.input_dim / bands;

    Rng prng = root.fork("close-pair");
    Vector dir(spec.input_dim, 0.0);
    double norm = 0.0;
    for (std::size_t j = lo; j < hi; ++j) {
      dir[j] = prng.next_normal();
      norm += dir[j] * dir[j];
    }
    const double scale = kClosePairMahalanobis / std::sqrt(norm);
    for (std::size_t j = 0; j < spec.input_dim; ++j)
      centers[1][j] = centers[0][j] + scale * coord_std[j] * dir[j];
  }

  const std::size_t n = spec.samples_per_class;
  LabeledSet train{Matrix(spec.class_count * n, spec.input_dim), {}};
  LabeledSet test{Matrix(spec.class_count * n, spec.input_dim), {}};
  train.labels.resize(spec.class_count * n);
  test.labels.resize(spec.class_count * n);
  for (std::size_t c = 0; c < spec.class_count; ++c) {
    Rng srng = root.fork("samples", c);
    for (std::size_t i = 0; i < 2 * n; ++i) {
      LabeledSet& dst = i < n ? train : test;
      const std::size_t row = c * n + (i < n ? i : i - n);
      auto out = dst.features.row(row);
      for (std::size_t j = 0; j < spec.input_dim; ++j)
        out[j] = centers[c][j] + coord_std[j] * srng.next_normal();
      dst.labels[row] = static_cast<std::uint32_t>(c);
    }
  }
  return {std::move(train), std::move(test)};
}

enum class ShiftKind { kGaussianNoise, kFeatureScale, kRotation, kMaskDropout, kMeanShift };

inline std::string_view shift_kind_name(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::kGaussianNoise: return "gaussian-noise";
    case ShiftKind::kFeatureScale: return "feature-scale";
    case ShiftKind::kRotation: return "rotation";
    case ShiftKind::kMaskDropout: return "mask-dropout";
    case ShiftKind::kMeanShift: return "mean-shift";
  }
  throw ContractError("shift_kind_name: unknown kind");
}

inline ShiftKind shift_kind_from(std::string_view name) {
  if (name == "gaussian-noise") return ShiftKind::kGaussianNoise;
  if (name == "feature-scale") return ShiftKind::kFeatureScale;
  if (name == "rotation") return ShiftKind::kRotation;
  if (name == "mask-dropout") return ShiftKind::kMaskDropout;
  if (name == "mean-shift") return ShiftKind::kMeanShift;
  throw ConfigError("unknown shift kind: " + std::string(name));
}

inline constexpr std::size_t kShiftKindCount = 5;
inline constexpr std::array<ShiftKind, kShiftKindCount> kAllShiftKinds = {
    ShiftKind::kGaussianNoise, ShiftKind::kFeatureScale, ShiftKind::kRotation,
    ShiftKind::kMaskDropout, ShiftKind::kMeanShift};

// Severity tables, versioned with the stream file format. Index 0 is reserved
// for the identity; severities 1..5 grow monotonically in corruption strength.
// Scales assume the pixel-like [0, 1] feature range of make_source.
inline constexpr std::array<double, 6> kNoiseSigma = {0.0, 0.08, 0.14, 0.22, 0.28, 0.35};
// Saturation bounds for the gaussian-noise kind: corrupted acquisition clips
// to the sensor range.
inline constexpr double kSensorLo = 0.0;
inline constexpr double kSensorHi = 1.0;
inline constexpr std::array<double, 6> kScaleFactor = {1.0, 1.25, 1.5, 2.0, 2.75, 3.5};
inline constexpr std::array<double, 6> kRotationDeg = {0.0, 15.0, 30.0, 45.0, 60.0, 75.0};
inline constexpr std::array<double, 6> kDropoutProb = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
inline constexpr std::array<double, 6> kMeanShiftMag = {0.0, 0.3, 0.6, 0.9, 1.2, 1.5};

struct ShiftSpec {
  ShiftKind kind = ShiftKind::kGaussianNoise;
  int severity = 5;  // 0 = identity, 1..5 increasing strength
  std::uint64_t seed = 0;

  void validate() const {
    if (severity < 0 || severity > 5) throw ConfigError("ShiftSpec: severity must be in 0..5");
  }

  std::string tag() const {
    return std::string(shift_kind_name(kind)) + ":s" + std::to_string(severity);
  }

  bool operator==(const ShiftSpec&) const = default;
};

// Applies one corruption. Deterministic given (x, spec, sample_index); the
// per-sample randomness is a counter-derived substream of the spec seed, so
// generation order and parallelism cannot change the output.
inline Vector corrupt(std::span<const double> x, const ShiftSpec& spec,
                      std::uint64_t sample_index) {
  spec.validate();
  Vector out(x.begin(), x.end());
  if (spec.severity == 0) return out;
  const std::size_t d = out.size();
  switch (spec.kind) {
    case ShiftKind::kGaussianNoise: {
      // Additive noise followed by a sensor-range clamp, the way physical
      // acquisition clips out-of-range readings. The clamp is part of the
      // corruption: saturation shifts feature statistics, which is the damage
      // a normalization-based adapter can actually repair.
      const double sigma = kNoiseSigma[spec.severity];
      Rng rng(Rng::derive_seed(spec.seed, "gaussian-noise", sample_index));
      for (double& v : out)
        v = std::clamp(v + sigma * rng.next_normal(), kSensorLo, kSensorHi);
      break;
    }
    case ShiftKind::kFeatureScale: {
      const double f = kScaleFactor[spec.severity];
      for (double& v : out) v *= f;
      break;
    }
    case ShiftKind::kRotation: {
      // Rotate seeded coordinate pairs by a fixed angle about the mid-range
      // point. The pairing is a permutation derived from the spec seed,
      // shared by every sample.
      const double a = kRotationDeg[spec.severity] * 3.14159265358979323846 / 180.0;
      const double ca = std::cos(a), sa = std::sin(a);
      Rng prng(Rng::derive_seed(spec.seed, "rotation-planes"));
      const std::vector<std::size_t> perm = prng.permutation(d);
      for (std::size_t i = 0; i + 1 < d; i += 2) {
        const std::size_t p = perm[i], q = perm[i + 1];
        const double xp = out[p] - 0.5, xq = out[q] - 0.5;
        out[p] = 0.5 + ca * xp - sa * xq;
        out[q] = 0.5 + sa * xp + ca * xq;
      }
      break;
    }
    case ShiftKind::kMaskDropout: {
      const double p = kDropoutProb[spec.severity];
      Rng rng(Rng::derive_seed(spec.seed, "mask-dropout", sample_index));
      for (double& v : out)
        if (rng.next_double() < p) v = 0.0;
      break;
    }
    case ShiftKind::kMeanShift: {
      // Fixed seeded unit direction scaled by the severity magnitude.
      const double mag = kMeanShiftMag[spec.severity];
      Rng drng(Rng::derive_seed(spec.seed, "mean-shift-direction"));
      Vector dir(d);
      double norm = 0.0;
      for (double& v : dir) {
        v = drng.next_normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < d; ++j) out[j] += mag * dir[j] / norm;
      break;
    }
  }
  ensure_finite(out, "corrupt");
  return out;
}

enum class StreamOrder { kSequential, kMixed };

inline std::string_view stream_order_name(StreamOrder o) {
  return o == StreamOrder::kSequential ? "sequential" : "mixed";
}

inline StreamOrder stream_order_from(std::string_view name) {
  if (name == "sequential") return StreamOrder::kSequential;
  if (name == "mixed") return StreamOrder::kMixed;
  throw ConfigError("unknown stream order: " + std::string(name));
}

// Everything needed to rebuild a stream bit-for-bit.
struct StreamManifest {
  int version = 1;
  SourceSpec source;
  std::vector<ShiftSpec> shifts;  // empty = clean stream
  StreamOrder order = StreamOrder::kSequential;
  std::size_t length = 0;  // N
  std::size_t batch = 64;  // B
  bool allow_repeats = true;
  std::uint64_t seed = 0;

  bool operator==(const StreamManifest&) const = default;
};

inline constexpr std::uint16_t kCleanTag = 0xFFFF;

struct StreamBatch {
  Matrix features;  // no labels here, by construction
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Ordered corrupted batches with hidden evaluation labels. The adaptation
// path sees batches of features only; labels leave this class exclusively
// through eval_labels().
class ShiftStream {
 public:
  ShiftStream() = default;
  ShiftStream(StreamManifest manifest, Matrix features, std::vector<std::uint32_t> labels,
              std::vector<std::uint16_t> tags)
      : manifest_(std::move(manifest)),
        features_(std::move(features)),
        labels_(std::move(labels)),
        tags_(std::move(tags)) {
    const std::size_t n = features_.rows();
    if (labels_.size() != n || tags_.size() != n)
      throw ContractError("ShiftStream: misaligned labels/tags");
    // A trailing 1-row batch cannot form batch statistics; it is dropped.
    const std::size_t b = manifest_.batch;
    usable_ = n;
    if (n % b == 1 && n > 1) usable_ = n - 1;
  }

  const StreamManifest& manifest() const { return manifest_; }
  std::size_t sample_count() const { return usable_; }
  std::size_t raw_sample_count() const { return features_.rows(); }
  bool dropped_remainder() const { return usable_ != features_.rows(); }
  std::size_t input_dim() const { return features_.cols(); }
  std::size_t batch_size() const { return manifest_.batch; }

  std::size_t batch_count() const { return (usable_ + manifest_.batch - 1) / manifest_.batch; }

  StreamBatch batch(std::size_t i) const {
    const std::size_t begin = i * manifest_.batch;
    const std::size_t end = std::min(begin + manifest_.batch, usable_);
    if (begin >= end) throw ContractError("ShiftStream::batch: index out of range");
    StreamBatch b;
    b.begin = begin;
    b.end = end;
    b.features = Matrix(end - begin, features_.cols());
    for (std::size_t r = begin; r < end; ++r)
      std::copy(features_.row(r).begin(), features_.row(r).end(),
                b.features.row(r - begin).begin());
    return b;
  }

  std::span<const double> sample(std::size_t i) const { return features_.row(i); }
  std::uint16_t tag(std::size_t i) const { return tags_[i]; }

  std::string tag_name(std::uint16_t t) const {
    if (t == kCleanTag) return "clean";
    return manifest_.shifts.at(t).tag();
  }

  // Evaluation-only access to the held-out labels.
  std::span<const std::uint32_t> eval_labels(std::size_t begin, std::size_t end) const {
    if (end > labels_.size() || begin > end) throw ContractError("eval_labels: bad range");
    return {labels_.data() + begin, end - begin};
  }

  const Matrix& all_features() const { return features_; }

 private:
  StreamManifest manifest_;
  Matrix features_;
  std::vector<std::uint32_t> labels_;
  std::vector<std::uint16_t> tags_;
  std::size_t usable_ = 0;
};

// Builds the stream described by the manifest, regenerating the source test
// split from its spec. Sequential order assigns contiguous equal segments to
// the shifts in their listed order; mixed order draws each sample's shift
// uniformly under the manifest seed.
inline ShiftStream make_stream(const StreamManifest& manifest) {
  manifest.source.validate();
  for (const auto& s : manifest.shifts) s.validate();
  if (manifest.length < 2) throw ConfigError("make_stream: length must be >= 2");
  if (manifest.batch < 2) throw ConfigError("make_stream: batch must be >= 2");

  auto [train, test] = make_source(manifest.source);
  (void)train;
  const std::size_t pool = test.features.rows();
  if (!manifest.allow_repeats && manifest.length > pool)
    throw ConfigError("make_stream: length exceeds test pool and repeats are disallowed");

  Rng root(manifest.seed);
  Rng pick = root.fork("indices");
  std::vector<std::size_t> rows(manifest.length);
  if (manifest.allow_repeats) {
    for (auto& r : rows) r = pick.next_index(pool);
  } else {
    std::vector<std::size_t> perm = pick.permutation(pool);
    for (std::size_t i = 0; i < manifest.length; ++i) rows[i] = perm[i];
  }

  const std::size_t kinds = manifest.shifts.size();
  std::vector<std::uint16_t> tags(manifest.length, kCleanTag);
  if (kinds > 0) {
    if (manifest.order == StreamOrder::kSequential) {
      for (std::size_t i = 0; i < manifest.length; ++i)
        tags[i] = static_cast<std::uint16_t>(std::min(i * kinds / manifest.length, kinds - 1));
    } else {
      Rng mix = root.fork("shift-pick");
      for (auto& t : tags) t = static_cast<std::uint16_t>(mix.next_index(kinds));
    }
  }

  Matrix features(manifest.length, manifest.source.input_dim);
  std::vector<std::uint32_t> labels(manifest.length);
  for (std::size_t i = 0; i < manifest.length; ++i) {
    labels[i] = test.labels[rows[i]];
    Vector x(test.features.row(rows[i]).begin(), test.features.row(rows[i]).end());
    if (tags[i] != kCleanTag) x = corrupt(x, manifest.shifts[tags[i]], i);
    std::copy(x.begin(), x.end(), features.row(i).begin());
  }
  return ShiftStream(manifest, std::move(features), std::move(labels), std::move(tags));
}

}  // namespace tta
