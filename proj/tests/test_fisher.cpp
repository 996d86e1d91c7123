#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "oracles.hpp"
#include "tta/fisher.hpp"
#include "tta/network.hpp"
#include "tta/rng.hpp"

using tta::ArchSpec;
using tta::BnMode;
using tta::FisherDiag;
using tta::Matrix;
using tta::ParamSet;
using tta::PseudoLabeledSet;
using tta::Vector;

namespace {

ParamSet seeded_params(const ArchSpec& arch, std::uint64_t seed) {
  tta::Rng rng(seed);
  return ParamSet::init(arch, rng);
}

Matrix random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  tta::Rng rng(seed);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.next_normal();
  return m;
}

const ArchSpec kArch{4, {6, 5}, 3, 1e-5};

}  // namespace

TEST(PseudoLabel, ArgmaxWithDocumentedTieBreak) {
  // A zeroed network scores every class identically through the head bias.
  ParamSet p = seeded_params(kArch, 1);
  std::fill(p.head_weight().values.begin(), p.head_weight().values.end(), 0.0);
  p.head_bias().values = {2.0, 1.0, 0.0};
  auto set = tta::pseudo_label(p, random_batch(5, 4, 2), BnMode::kBatchStats);
  for (auto l : set.labels) EXPECT_EQ(l, 0u);

  p.head_bias().values = {1.0, 1.0, 0.0};  // exact tie -> lowest index
  auto tied = tta::pseudo_label(p, random_batch(5, 4, 3), BnMode::kBatchStats);
  for (auto l : tied.labels) EXPECT_EQ(l, 0u);
}

TEST(PseudoLabel, MatchesIndependentArgmaxOracle) {
  ParamSet p = seeded_params(kArch, 4);
  Matrix samples = random_batch(50, 4, 5);
  for (BnMode mode : {BnMode::kBatchStats, BnMode::kRunningStats}) {
    auto set = tta::pseudo_label(p, samples, mode);
    auto logits = oracle::dual_forward(p, samples, mode);
    for (std::size_t r = 0; r < 50; ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < 3; ++c)
        if (logits[r][c].v > logits[r][best].v) best = c;
      EXPECT_EQ(set.labels[r], best);
    }
    EXPECT_EQ(set.features.rows(), 50u);
  }
}

TEST(PseudoLabel, RejectsTooFewSamples) {
  ParamSet p = seeded_params(kArch, 6);
  EXPECT_THROW(tta::pseudo_label(p, Matrix(1, 4)), tta::ContractError);
  EXPECT_THROW(tta::pseudo_label(p, Matrix(0, 4)), tta::ContractError);
}

TEST(EstimateFisher, SingleSampleIsSquaredGradient) {
  // Running statistics allow a genuine one-sample estimate: omega = g^2.
  ParamSet p = seeded_params(kArch, 7);
  Matrix one = random_batch(2, 4, 8);
  PseudoLabeledSet dset = tta::pseudo_label(p, one, BnMode::kRunningStats);
  dset.features = Matrix(1, 4, Vector(one.row(0).begin(), one.row(0).end()));
  dset.labels.resize(1);

  FisherDiag fisher = tta::estimate_fisher(p, dset, BnMode::kRunningStats);
  tta::AdaptableView view(p);
  for (std::size_t i = 0; i < view.size(); ++i) {
    const auto g = oracle::dual_ce_grads(p, dset.features, dset.labels, BnMode::kRunningStats, i);
    EXPECT_NEAR(fisher.omega[i], g[0] * g[0], 1e-12) << i;
  }
}

TEST(EstimateFisher, ZeroGradientsGiveZeroImportance) {
  ParamSet p = seeded_params(kArch, 9);
  std::fill(p.head_weight().values.begin(), p.head_weight().values.end(), 0.0);
  std::fill(p.head_bias().values.begin(), p.head_bias().values.end(), 0.0);
  Matrix samples = random_batch(10, 4, 10);
  auto dset = tta::pseudo_label(p, samples);
  FisherDiag fisher = tta::estimate_fisher(p, dset);
  for (double w : fisher.omega) EXPECT_DOUBLE_EQ(w, 0.0);
  EXPECT_EQ(fisher.sample_count, 10u);
}

TEST(EstimateFisher, MatchesPerSampleOracle) {
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    ParamSet p = seeded_params(kArch, seed);
    const std::size_t q = 8 + 4 * static_cast<std::size_t>(seed % 3);
    Matrix samples = random_batch(q, 4, 100 + seed);
    auto dset = tta::pseudo_label(p, samples);
    FisherDiag fisher = tta::estimate_fisher(p, dset);

    tta::AdaptableView view(p);
    ASSERT_EQ(fisher.omega.size(), view.size());
    for (std::size_t i = 0; i < view.size(); ++i) {
      const auto grads =
          oracle::dual_ce_grads(p, dset.features, dset.labels, BnMode::kBatchStats, i);
      double want = 0.0;
      for (double g : grads) want += g * g;
      want /= static_cast<double>(q);
      EXPECT_NEAR(fisher.omega[i], want, 1e-10) << "scalar " << i << " seed " << seed;
    }
  }
}

TEST(EstimateFisher, MeanOfSquaresNotSquareOfMean) {
  // Per-sample squares must survive batching: compare against the (wrong)
  // squared batch-mean gradient and require a real gap.
  ParamSet p = seeded_params(kArch, 14);
  Matrix samples = random_batch(16, 4, 15);
  auto dset = tta::pseudo_label(p, samples);
  FisherDiag fisher = tta::estimate_fisher(p, dset);

  tta::AdaptableView view(p);
  double omega_total = 0.0, squared_mean_total = 0.0;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const auto grads = oracle::dual_ce_grads(p, dset.features, dset.labels, BnMode::kBatchStats, i);
    double mean = 0.0;
    for (double g : grads) mean += g;
    mean /= static_cast<double>(grads.size());
    omega_total += fisher.omega[i];
    squared_mean_total += mean * mean;
  }
  EXPECT_GT(omega_total, 2.0 * squared_mean_total);
}

TEST(EstimateFisher, PermutationInvariant) {
  ParamSet p = seeded_params(kArch, 16);
  Matrix samples = random_batch(20, 4, 17);
  auto dset = tta::pseudo_label(p, samples);
  FisherDiag a = tta::estimate_fisher(p, dset);

  tta::Rng rng(18);
  auto perm = rng.permutation(20);
  PseudoLabeledSet shuffled;
  shuffled.features = Matrix(20, 4);
  shuffled.labels.resize(20);
  for (std::size_t r = 0; r < 20; ++r) {
    std::copy(dset.features.row(perm[r]).begin(), dset.features.row(perm[r]).end(),
              shuffled.features.row(r).begin());
    shuffled.labels[r] = dset.labels[perm[r]];
  }
  FisherDiag b = tta::estimate_fisher(p, shuffled);
  for (std::size_t i = 0; i < a.omega.size(); ++i) EXPECT_NEAR(a.omega[i], b.omega[i], 1e-12);
}

TEST(EstimateFisher, ContractErrors) {
  ParamSet p = seeded_params(kArch, 19);
  PseudoLabeledSet empty;
  empty.features = Matrix(0, 4);
  EXPECT_THROW(tta::estimate_fisher(p, empty), tta::ContractError);
}

TEST(RegPenalty, HandEvaluatedExamples) {
  FisherDiag one{Vector{1.0}, 1};
  EXPECT_DOUBLE_EQ(tta::reg_penalty(Vector{0.5}, Vector{0.0}, one), 0.25);
  FisherDiag two{Vector{2.0, 3.0}, 1};
  EXPECT_DOUBLE_EQ(tta::reg_penalty(Vector{0.1, -0.2}, Vector{0.0, 0.0}, two), 0.14);
  EXPECT_DOUBLE_EQ(tta::reg_penalty(Vector{0.7, 0.7}, Vector{0.7, 0.7}, two), 0.0);
  EXPECT_THROW(tta::reg_penalty(Vector{1.0}, Vector{1.0, 2.0}, two), tta::ContractError);
}

TEST(RegGrad, HandExamplesAndFiniteDifferences) {
  FisherDiag one{Vector{1.0}, 1};
  EXPECT_DOUBLE_EQ(tta::reg_grad(Vector{0.5}, Vector{0.0}, one)[0], 1.0);
  EXPECT_DOUBLE_EQ(tta::reg_grad(Vector{0.0}, Vector{0.0}, one)[0], 0.0);

  tta::Rng rng(20);
  const std::size_t n = 12;
  FisherDiag fisher;
  fisher.omega.resize(n);
  fisher.sample_count = 4;
  Vector theta(n), origin(n);
  for (std::size_t i = 0; i < n; ++i) {
    fisher.omega[i] = rng.next_double() * 3.0;
    theta[i] = rng.next_normal();
    origin[i] = rng.next_normal();
  }
  Vector grad = tta::reg_grad(theta, origin, fisher);
  for (std::size_t i = 0; i < n; ++i) {
    const double h = 1e-4;  // central differences are exact for quadratics
    Vector up = theta, down = theta;
    up[i] += h;
    down[i] -= h;
    const double fd =
        (tta::reg_penalty(up, origin, fisher) - tta::reg_penalty(down, origin, fisher)) / (2 * h);
    EXPECT_LE(oracle::relative_error(grad[i], fd), 1e-8);
  }
}

TEST(RegPenalty, ConvexInTheta) {
  tta::Rng rng(21);
  const std::size_t n = 8;
  FisherDiag fisher;
  fisher.omega.resize(n);
  fisher.sample_count = 2;
  Vector origin(n), a(n), b(n);
  for (std::size_t i = 0; i < n; ++i) {
    fisher.omega[i] = rng.next_double() * 2.0;
    origin[i] = rng.next_normal();
    a[i] = rng.next_normal();
    b[i] = rng.next_normal();
  }
  for (double lambda : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    Vector mix(n);
    for (std::size_t i = 0; i < n; ++i) mix[i] = lambda * a[i] + (1 - lambda) * b[i];
    EXPECT_LE(tta::reg_penalty(mix, origin, fisher),
              lambda * tta::reg_penalty(a, origin, fisher) +
                  (1 - lambda) * tta::reg_penalty(b, origin, fisher) + 1e-12);
  }
}

TEST(FisherFile, RoundTripsBitExactly) {
  ParamSet p = seeded_params(kArch, 22);
  Matrix samples = random_batch(12, 4, 23);
  auto dset = tta::pseudo_label(p, samples);
  FisherDiag fisher = tta::estimate_fisher(p, dset);

  const std::string path = std::filesystem::temp_directory_path() / "tta_test_fisher.bin";
  tta::save_fisher(path, p.arch(), fisher);
  auto [arch, loaded] = tta::load_fisher(path);
  EXPECT_EQ(arch, p.arch());
  EXPECT_EQ(loaded.sample_count, fisher.sample_count);
  EXPECT_EQ(loaded.omega, fisher.omega);  // bit-exact
  std::remove(path.c_str());
}
