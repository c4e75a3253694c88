#include "hyperfscil/encoder.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/oracles.hpp"

using hyperfscil::AdapterParams;
using hyperfscil::Mat;
using hyperfscil::Phase;
using hyperfscil::Vec;
namespace ht = hyperfscil::testing;

namespace {

// Independent recomputation of the prompted-feature closed form.
Vec oracle_encode(const Vec& f, const Mat& A, const Mat& B) {
  Vec t(A.rows());
  for (int i = 0; i < A.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < A.cols(); ++j) s += A(i, j) * f[j];
    t[i] = std::tanh(s);
  }
  Vec u = f;
  for (int j = 0; j < B.rows(); ++j) {
    double s = 0.0;
    for (int i = 0; i < B.cols(); ++i) s += B(j, i) * t[i];
    u[j] += s;
  }
  return u / u.norm();
}

}  // namespace

TEST(InitParams, DeterministicAndZeroUpBlocks) {
  const AdapterParams a = hyperfscil::init_params(16, 12, 4, 99);
  const AdapterParams b = hyperfscil::init_params(16, 12, 4, 99);
  EXPECT_EQ(a.vision.A, b.vision.A);
  EXPECT_EQ(a.text.A, b.text.A);
  EXPECT_TRUE(a.vision.B.isZero(0.0));
  EXPECT_TRUE(a.text.B.isZero(0.0));
  EXPECT_TRUE(a.vision.trainable);
  EXPECT_TRUE(a.text.trainable);

  const AdapterParams c = hyperfscil::init_params(16, 12, 4, 100);
  EXPECT_NE(a.vision.A, c.vision.A);
}

TEST(InitParams, ScalarCounts) {
  const AdapterParams p = hyperfscil::init_params(512, 512, 4, 1);
  EXPECT_EQ(p.vision.scalar_count(), 2 * 4 * 512);
  EXPECT_EQ(p.text.scalar_count(), 2 * 4 * 512);
  EXPECT_THROW(hyperfscil::init_params(0, 4, 1, 1), std::invalid_argument);
  EXPECT_THROW(hyperfscil::init_params(4, 4, 0, 1), std::invalid_argument);
}

TEST(EncodeImage, FreshParamsEqualNormalizedInput) {
  std::mt19937_64 rng(3);
  const AdapterParams p = hyperfscil::init_params(10, 10, 2, 5);
  for (int it = 0; it < 50; ++it) {
    Vec f(10);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 10; ++i) f[i] = n(rng);
    const Vec enc = hyperfscil::encode_image(f, p);
    EXPECT_LT((enc - f / f.norm()).norm(), 1e-15);
  }
}

TEST(EncodeImage, UnitNormAndOracleMatch) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n(0.0, 1.0);
  AdapterParams p = hyperfscil::init_params(8, 8, 3, 7);
  // Perturb B so the adapter path is actually exercised.
  for (int i = 0; i < p.vision.B.rows(); ++i)
    for (int j = 0; j < p.vision.B.cols(); ++j) p.vision.B(i, j) = 0.1 * n(rng);
  for (int it = 0; it < 100; ++it) {
    Vec f(8);
    for (int i = 0; i < 8; ++i) f[i] = n(rng);
    const Vec enc = hyperfscil::encode_image(f, p);
    EXPECT_NEAR(enc.norm(), 1.0, 1e-12);
    EXPECT_LT((enc - oracle_encode(f, p.vision.A, p.vision.B)).norm(), 1e-12);
  }
}

TEST(EncodeImage, DimensionMismatchThrows) {
  const AdapterParams p = hyperfscil::init_params(8, 8, 2, 1);
  EXPECT_THROW(hyperfscil::encode_image(Vec::Zero(9), p), std::invalid_argument);
}

TEST(EncodeText, MeanThenNormalize) {
  const AdapterParams p = hyperfscil::init_params(2, 2, 1, 1);
  Vec g1(2), g2(2);
  g1 << 1.0, 0.0;
  g2 << 0.0, 1.0;
  const Vec enc = hyperfscil::encode_text({g1, g2}, p);
  const double r = std::sqrt(2.0) / 2.0;
  EXPECT_NEAR(enc[0], r, 1e-15);
  EXPECT_NEAR(enc[1], r, 1e-15);
}

TEST(EncodeText, SingleTemplateFreshParams) {
  const AdapterParams p = hyperfscil::init_params(3, 3, 1, 1);
  Vec g(3);
  g << 3.0, 0.0, 4.0;
  const Vec enc = hyperfscil::encode_text({g}, p);
  EXPECT_NEAR(enc[0], 0.6, 1e-15);
  EXPECT_NEAR(enc[2], 0.8, 1e-15);
}

TEST(EncodeText, OracleMatchWithActiveAdapter) {
  std::mt19937_64 rng(29);
  std::normal_distribution<double> n(0.0, 1.0);
  AdapterParams p = hyperfscil::init_params(6, 6, 2, 13);
  for (int i = 0; i < p.text.B.rows(); ++i)
    for (int j = 0; j < p.text.B.cols(); ++j) p.text.B(i, j) = 0.2 * n(rng);
  for (int it = 0; it < 50; ++it) {
    std::vector<Vec> templates;
    Vec mean = Vec::Zero(6);
    for (int m = 0; m < 4; ++m) {
      Vec g(6);
      for (int i = 0; i < 6; ++i) g[i] = n(rng);
      templates.push_back(g);
      mean += g;
    }
    mean /= 4.0;
    const Vec enc = hyperfscil::encode_text(templates, p);
    EXPECT_LT((enc - oracle_encode(mean, p.text.A, p.text.B)).norm(), 1e-12);
  }
}

TEST(EncodeText, EmptyTemplatesThrow) {
  const AdapterParams p = hyperfscil::init_params(4, 4, 1, 1);
  EXPECT_THROW(hyperfscil::encode_text({}, p), std::invalid_argument);
}

TEST(SetPhase, FreezingRules) {
  AdapterParams p = hyperfscil::init_params(8, 8, 2, 1);
  hyperfscil::set_phase(p, Phase::kIncremental);
  EXPECT_FALSE(p.vision.trainable);
  EXPECT_TRUE(p.text.trainable);
  hyperfscil::set_phase(p, Phase::kIncremental);  // idempotent
  EXPECT_FALSE(p.vision.trainable);
  hyperfscil::set_phase(p, Phase::kBase);
  EXPECT_TRUE(p.vision.trainable);
  EXPECT_TRUE(p.text.trainable);
}

TEST(TrainableCount, PhaseDependentCounts) {
  AdapterParams p = hyperfscil::init_params(512, 512, 4, 1);
  hyperfscil::set_phase(p, Phase::kBase);
  EXPECT_EQ(hyperfscil::trainable_count(p), 8192);
  hyperfscil::set_phase(p, Phase::kIncremental);
  EXPECT_EQ(hyperfscil::trainable_count(p), 4096);

  AdapterParams q = hyperfscil::init_params(37, 123, 3, 1);
  hyperfscil::set_phase(q, Phase::kBase);
  const auto base = hyperfscil::trainable_count(q);
  hyperfscil::set_phase(q, Phase::kIncremental);
  EXPECT_LT(hyperfscil::trainable_count(q), base);
}
