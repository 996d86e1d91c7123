#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "tta/network.hpp"
#include "tta/rng.hpp"
#include "tta/shiftgen.hpp"
#include "tta/stream_io.hpp"

using tta::Matrix;
using tta::ShiftKind;
using tta::ShiftSpec;
using tta::SourceSpec;
using tta::StreamManifest;
using tta::Vector;

namespace {

SourceSpec small_source(std::uint64_t seed) {
  SourceSpec s;
  s.class_count = 4;
  s.input_dim = 8;
  s.samples_per_class = 100;
  s.seed = seed;
  return s;
}

StreamManifest small_manifest(std::uint64_t seed) {
  StreamManifest m;
  m.source = small_source(seed);
  m.shifts = {{ShiftKind::kGaussianNoise, 5, tta::Rng::derive_seed(seed, "shift", 0)}};
  m.length = 256;
  m.batch = 32;
  m.seed = tta::Rng::derive_seed(seed, "stream");
  return m;
}

}  // namespace

TEST(MakeSource, DeterministicAndDisjoint) {
  SourceSpec spec = small_source(3);
  auto [train1, test1] = tta::make_source(spec);
  auto [train2, test2] = tta::make_source(spec);
  EXPECT_EQ(train1.features.data(), train2.features.data());  // identical bytes
  EXPECT_EQ(test1.features.data(), test2.features.data());
  EXPECT_EQ(train1.labels, train2.labels);

  EXPECT_EQ(train1.features.rows(), 400u);
  EXPECT_EQ(test1.features.rows(), 400u);

  // Distinct draws: no train row equals any test row.
  for (std::size_t i = 0; i < 50; ++i) {
    for (std::size_t j = 0; j < test1.features.rows(); ++j) {
      bool same = true;
      for (std::size_t c = 0; c < 8 && same; ++c)
        same = train1.features(i, c) == test1.features(j, c);
      EXPECT_FALSE(same);
    }
  }

  std::map<std::uint32_t, std::size_t> counts;
  for (auto l : train1.labels) counts[l]++;
  for (const auto& [label, count] : counts) EXPECT_EQ(count, 100u);
}

TEST(MakeSource, Validation) {
  SourceSpec bad = small_source(1);
  bad.class_count = 1;
  EXPECT_THROW(tta::make_source(bad), tta::ConfigError);
}

TEST(Corrupt, IdentityAtSeverityZero) {
  tta::Rng rng(5);
  Vector x(8);
  for (double& v : x) v = rng.next_normal();
  for (ShiftKind kind : tta::kAllShiftKinds) {
    ShiftSpec spec{kind, 0, 99};
    EXPECT_EQ(tta::corrupt(x, spec, 0), x) << tta::shift_kind_name(kind);
  }
}

TEST(Corrupt, DeterministicPerSampleIndex) {
  Vector x(8, 1.0);
  ShiftSpec spec{ShiftKind::kGaussianNoise, 3, 42};
  EXPECT_EQ(tta::corrupt(x, spec, 7), tta::corrupt(x, spec, 7));
  EXPECT_NE(tta::corrupt(x, spec, 7), tta::corrupt(x, spec, 8));
}

TEST(Corrupt, NoiseMagnitudeGrowsWithSeverity) {
  tta::Rng rng(6);
  Vector x(16);
  for (double& v : x) v = rng.next_normal();
  double prev = 0.0;
  for (int severity = 1; severity <= 5; ++severity) {
    ShiftSpec spec{ShiftKind::kGaussianNoise, severity, 11};
    double err = 0.0;
    for (std::uint64_t i = 0; i < 200; ++i) {
      Vector y = tta::corrupt(x, spec, i);
      for (std::size_t j = 0; j < x.size(); ++j) err += (y[j] - x[j]) * (y[j] - x[j]);
    }
    EXPECT_GT(err, prev);
    prev = err;
  }
}

TEST(Corrupt, FeatureScaleInvertsExactly) {
  tta::Rng rng(7);
  Vector x(8);
  for (double& v : x) v = rng.next_normal();
  ShiftSpec spec{ShiftKind::kFeatureScale, 4, 0};
  Vector y = tta::corrupt(x, spec, 0);
  const double factor = tta::kScaleFactor[4];
  for (std::size_t j = 0; j < x.size(); ++j) EXPECT_NEAR(y[j] / factor, x[j], 1e-12);
}

TEST(Corrupt, RotationIsAnIsometryAboutMidRange) {
  tta::Rng rng(8);
  Vector x(10);
  for (double& v : x) v = rng.next_normal();
  ShiftSpec spec{ShiftKind::kRotation, 5, 31};
  Vector y = tta::corrupt(x, spec, 0);
  double nx = 0, ny = 0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    nx += (x[j] - 0.5) * (x[j] - 0.5);
    ny += (y[j] - 0.5) * (y[j] - 0.5);
  }
  EXPECT_NEAR(std::sqrt(ny), std::sqrt(nx), 1e-9);
  EXPECT_NE(x, y);
}

TEST(Corrupt, MeanShiftHasExactMagnitude) {
  Vector x(12, 0.5);
  ShiftSpec spec{ShiftKind::kMeanShift, 2, 77};
  Vector y = tta::corrupt(x, spec, 3);
  double d2 = 0;
  for (std::size_t j = 0; j < x.size(); ++j) d2 += (y[j] - x[j]) * (y[j] - x[j]);
  EXPECT_NEAR(std::sqrt(d2), tta::kMeanShiftMag[2], 1e-9);
  // Same direction for every sample index.
  Vector z = tta::corrupt(x, spec, 999);
  for (std::size_t j = 0; j < x.size(); ++j) EXPECT_DOUBLE_EQ(y[j], z[j]);
}

TEST(Corrupt, DropoutZerosCoordinates) {
  Vector x(32, 1.0);
  ShiftSpec spec{ShiftKind::kMaskDropout, 5, 13};
  Vector y = tta::corrupt(x, spec, 0);
  std::size_t zeros = 0;
  for (double v : y) {
    EXPECT_TRUE(v == 0.0 || v == 1.0);
    zeros += v == 0.0;
  }
  EXPECT_GT(zeros, 0u);
  EXPECT_LT(zeros, 32u);
}

TEST(MakeStream, SequentialSegmentsAreTaggedInOrder) {
  StreamManifest m = small_manifest(10);
  m.shifts = {{ShiftKind::kGaussianNoise, 5, 1}, {ShiftKind::kFeatureScale, 5, 2}};
  m.length = 200;
  tta::ShiftStream stream = tta::make_stream(m);
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(stream.tag(i), 0);
  for (std::size_t i = 100; i < 200; ++i) EXPECT_EQ(stream.tag(i), 1);
  EXPECT_EQ(stream.tag_name(0), "gaussian-noise:s5");
  EXPECT_EQ(stream.tag_name(1), "feature-scale:s5");
}

TEST(MakeStream, MixedOrderIsRoughlyBalanced) {
  StreamManifest m = small_manifest(11);
  m.order = tta::StreamOrder::kMixed;
  m.length = 5000;
  m.shifts.clear();
  for (std::size_t i = 0; i < 5; ++i)
    m.shifts.push_back({tta::kAllShiftKinds[i], 3, tta::Rng::derive_seed(11, "shift", i)});
  tta::ShiftStream stream = tta::make_stream(m);
  std::map<std::uint16_t, std::size_t> counts;
  for (std::size_t i = 0; i < 5000; ++i) counts[stream.tag(i)]++;
  ASSERT_EQ(counts.size(), 5u);
  const double sigma = std::sqrt(5000.0 * 0.2 * 0.8);
  for (const auto& [tag, count] : counts)
    EXPECT_NEAR(static_cast<double>(count), 1000.0, 3.0 * sigma);
}

TEST(MakeStream, BatchArithmetic) {
  StreamManifest m = small_manifest(12);
  m.length = 1000;
  m.batch = 64;
  tta::ShiftStream stream = tta::make_stream(m);
  EXPECT_EQ(stream.batch_count(), 16u);  // 15 full batches + final batch of 40
  EXPECT_EQ(stream.batch(14).features.rows(), 64u);
  EXPECT_EQ(stream.batch(15).features.rows(), 40u);
  EXPECT_FALSE(stream.dropped_remainder());
}

TEST(MakeStream, SingleRowRemainderIsDropped) {
  StreamManifest m = small_manifest(13);
  m.length = 65;
  m.batch = 64;
  tta::ShiftStream stream = tta::make_stream(m);
  EXPECT_TRUE(stream.dropped_remainder());
  EXPECT_EQ(stream.sample_count(), 64u);
  EXPECT_EQ(stream.raw_sample_count(), 65u);
  EXPECT_EQ(stream.batch_count(), 1u);
}

TEST(MakeStream, NoRepeatsRequiresEnoughSamples) {
  StreamManifest m = small_manifest(14);
  m.allow_repeats = false;
  m.length = 1000;  // pool is only 400
  EXPECT_THROW(tta::make_stream(m), tta::ConfigError);
  m.length = 400;
  EXPECT_NO_THROW(tta::make_stream(m));
}

TEST(MakeStream, BitReproducibleFromManifest) {
  StreamManifest m = small_manifest(15);
  tta::ShiftStream a = tta::make_stream(m);
  tta::ShiftStream b = tta::make_stream(m);
  EXPECT_EQ(a.all_features().data(), b.all_features().data());
  for (std::size_t i = 0; i < a.sample_count(); ++i) {
    EXPECT_EQ(a.eval_labels(i, i + 1)[0], b.eval_labels(i, i + 1)[0]);
    EXPECT_EQ(a.tag(i), b.tag(i));
  }
}

TEST(StreamFile, RoundTripPreservesEverything) {
  StreamManifest m = small_manifest(16);
  tta::ShiftStream stream = tta::make_stream(m);
  namespace fs = std::filesystem;
  const std::string path = fs::temp_directory_path() / "tta_test_stream.bin";
  tta::save_stream(path, stream);
  tta::ShiftStream loaded = tta::load_stream(path);
  EXPECT_EQ(loaded.manifest(), stream.manifest());
  EXPECT_EQ(loaded.all_features().data(), stream.all_features().data());
  for (std::size_t i = 0; i < stream.raw_sample_count(); ++i) {
    EXPECT_EQ(loaded.eval_labels(i, i + 1)[0], stream.eval_labels(i, i + 1)[0]);
    EXPECT_EQ(loaded.tag(i), stream.tag(i));
  }

  // Rebuilding from the embedded manifest gives the identical stream.
  tta::ShiftStream rebuilt = tta::make_stream(loaded.manifest());
  EXPECT_EQ(rebuilt.all_features().data(), stream.all_features().data());

  // A second save has identical bytes.
  const std::string path2 = fs::temp_directory_path() / "tta_test_stream2.bin";
  tta::save_stream(path2, loaded);
  std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(b1, b2);
  std::remove(path.c_str());
  std::remove(path2.c_str());
}

TEST(StreamFile, CsvExportIsWellFormed) {
  StreamManifest m = small_manifest(17);
  m.length = 40;
  m.batch = 8;
  tta::ShiftStream stream = tta::make_stream(m);
  const std::string path = std::filesystem::temp_directory_path() / "tta_test_stream.csv";
  tta::export_stream_csv(path, stream);
  std::ifstream is(path);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header.rfind("index,label,tag,f0", 0), 0u);
  std::size_t lines = 0;
  for (std::string line; std::getline(is, line);) ++lines;
  EXPECT_EQ(lines, 40u);
  std::remove(path.c_str());
}

// Severity ladder against a frozen base model: mean accuracy over five data
// seeds must be non-increasing in severity (one inversion tolerated).
TEST(Severity, GaussianNoiseMonotonicallyDegradesFrozenModel) {
  SourceSpec spec = small_source(20);
  spec.samples_per_class = 250;
  spec.center_scale = 1.3;  // wider separation: d=8 needs more room than d=32
  auto [train, test] = tta::make_source(spec);
  tta::ArchSpec arch{8, {16, 8}, 4, 1e-5};
  tta::TrainHyper hyper;
  hyper.epochs = 30;
  hyper.seed = 21;
  tta::ParamSet params = tta::train_base(arch, train, hyper);
  ASSERT_GE(tta::accuracy(params, test, tta::BnMode::kRunningStats), 0.9);

  std::vector<double> mean_acc(6, 0.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    for (int severity = 0; severity <= 5; ++severity) {
      StreamManifest m;
      m.source = spec;
      if (severity > 0)
        m.shifts = {{ShiftKind::kGaussianNoise, severity, tta::Rng::derive_seed(seed, "shift")}};
      m.length = 500;
      m.batch = 64;
      m.seed = tta::Rng::derive_seed(seed, "stream");
      tta::ShiftStream stream = tta::make_stream(m);
      std::size_t hits = 0;
      const auto preds =
          tta::predict(params, stream.all_features(), tta::BnMode::kRunningStats, 64);
      const auto labels = stream.eval_labels(0, stream.raw_sample_count());
      for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == labels[i];
      mean_acc[severity] += static_cast<double>(hits) / static_cast<double>(preds.size()) / 5.0;
    }
  }
  int inversions = 0;
  for (int s = 1; s <= 5; ++s)
    if (mean_acc[s] > mean_acc[s - 1] + 1e-9) ++inversions;
  EXPECT_LE(inversions, 1);
  EXPECT_LT(mean_acc[5], mean_acc[0] - 0.05);  // severity 5 hurts for real
}
