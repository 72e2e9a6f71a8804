#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dct/io.hpp"
#include "dct/metrics.hpp"
#include "dct/trainer.hpp"
#include "test_support.hpp"

namespace dct {
namespace {

using test::random_matrix;

/// Two tight blobs far apart, labelled by blob.
Matrix two_blobs(std::size_t per_blob, std::mt19937_64& rng, std::vector<int>& labels) {
  Matrix x = random_matrix(2 * per_blob, 3, rng, 0.1);
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    labels.push_back(i < per_blob ? 0 : 1);
    if (i >= per_blob) x(i, 0) += 100.0;
  }
  return x;
}

std::vector<int> random_labels(std::size_t n, int count, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, count - 1);
  std::vector<int> out(n);
  for (int& l : out) l = pick(rng);
  return out;
}

// kNN purity -------------------------------------------------------------------

TEST(KnnPurity, SeparatedBlobsArePure) {
  std::mt19937_64 rng(61);
  std::vector<int> labels;
  const Matrix x = two_blobs(20, rng, labels);
  EXPECT_EQ(knn_purity(x, labels, 5), 1.0);
  EXPECT_EQ(knn_purity(x, labels, 19), 1.0);
  // one more neighbour must cross into the other blob
  EXPECT_NEAR(knn_purity(x, labels, 20), 19.0 / 20.0, 1e-15);
}

TEST(KnnPurity, RandomLabelsScoreNearChance) {
  std::mt19937_64 rng(62);
  const Matrix x = random_matrix(1000, 4, rng);
  for (int count : {2, 4}) {
    EXPECT_NEAR(knn_purity(x, random_labels(1000, count, rng), 10), 1.0 / count, 0.05);
  }
}

TEST(KnnPurity, HandComputedLine) {
  // points on a line: 0 1 2 | 10 11 | 12 with labels a a b | b b a
  Matrix x(6, 1, std::vector<double>{0, 1, 2, 10, 11, 12});
  const std::vector<int> labels{0, 0, 1, 1, 1, 0};
  // k = 2 neighbours: 0->{1,2}: 1/2; 1->{0,2}: 1/2; 2->{1,0}: 0;
  // 3->{4,5}: 1/2; 4->{3,5} (tie -> lower index 3 first, 5 second): 1/2; 5->{4,3}: 0
  EXPECT_NEAR(knn_purity(x, labels, 2), (0.5 + 0.5 + 0.0 + 0.5 + 0.5 + 0.0) / 6.0, 1e-15);
}

TEST(KnnPurity, TiesGoToLowerIndex) {
  // every point equidistant from the origin point 0
  Matrix x(3, 2, std::vector<double>{0, 0, 1, 0, -1, 0});
  const std::vector<int> labels{0, 0, 1};
  // point 0: neighbours 1 and 2 at equal distance, k = 1 picks index 1
  // point 1: nearest is 0 (d=1); point 2: nearest is 0 (d=1)
  EXPECT_NEAR(knn_purity(x, labels, 1), (1.0 + 1.0 + 0.0) / 3.0, 1e-15);
}

TEST(KnnPurity, RejectsBadNeighbourCounts) {
  const Matrix x(4, 2);
  const std::vector<int> labels{0, 1, 0, 1};
  EXPECT_EQ(test::error_kind([&] { knn_purity(x, labels, 4); }), "invalid_argument");
  EXPECT_EQ(test::error_kind([&] { knn_purity(x, labels, 0); }), "invalid_argument");
  EXPECT_EQ(test::error_kind([&] { knn_purity(x, std::vector<int>{0, 1}, 1); }), "shape_mismatch");
}

// Silhouette -------------------------------------------------------------------

TEST(Silhouette, FarBlobsApproachOne) {
  std::mt19937_64 rng(63);
  std::vector<int> labels;
  const Matrix x = two_blobs(15, rng, labels);
  EXPECT_GT(silhouette(x, labels), 0.99);
  EXPECT_LE(silhouette(x, labels), 1.0);
}

TEST(Silhouette, RandomLabelsScoreNearZero) {
  std::mt19937_64 rng(64);
  const Matrix x = random_matrix(600, 4, rng);
  EXPECT_NEAR(silhouette(x, random_labels(600, 3, rng)), 0.0, 0.1);
}

TEST(Silhouette, HandComputedFourPoints) {
  // 0, 1 (label a) and 4, 6 (label b) on a line
  Matrix x(4, 1, std::vector<double>{0, 1, 4, 6});
  const std::vector<int> labels{0, 0, 1, 1};
  const double s0 = (5.0 - 1.0) / 5.0;  // a = 1, b = (4+6)/2
  const double s1 = (4.0 - 1.0) / 4.0;  // a = 1, b = (3+5)/2
  const double s2 = (3.5 - 2.0) / 3.5;  // a = 2, b = (4+3)/2
  const double s3 = (5.5 - 2.0) / 5.5;  // a = 2, b = (6+5)/2
  EXPECT_NEAR(silhouette(x, labels), (s0 + s1 + s2 + s3) / 4.0, 1e-15);
}

TEST(Silhouette, SingletonClustersScoreZero) {
  Matrix x(3, 1, std::vector<double>{0, 1, 10});
  const std::vector<int> labels{0, 0, 1};
  // point 2 is alone and contributes 0; points 0 and 1 as usual
  const double s0 = (10.0 - 1.0) / 10.0, s1 = (9.0 - 1.0) / 9.0;
  EXPECT_NEAR(silhouette(x, labels), (s0 + s1) / 3.0, 1e-15);
}

TEST(Silhouette, NeedsTwoLabels) {
  const Matrix x(3, 2);
  EXPECT_EQ(test::error_kind([&] { silhouette(x, std::vector<int>{4, 4, 4}); }), "too_few_labels");
}

// Accuracy ---------------------------------------------------------------------

TEST(Accuracy, PerfectInvertedAndTies) {
  Matrix logits(4, 2, std::vector<double>{2, 1, 0, 3, 5, -1, 0, 0});
  EXPECT_EQ(accuracy(logits, std::vector<int>{0, 1, 0, 0}), 1.0);
  EXPECT_EQ(accuracy(logits, std::vector<int>{1, 0, 1, 1}), 0.0);
  // last row is a tie: argmax is class 0
  EXPECT_EQ(accuracy(logits, std::vector<int>{0, 1, 0, 1}), 0.75);
  EXPECT_EQ(test::error_kind([&] { accuracy(Matrix(0, 2), std::vector<int>{}); }), "invalid_argument");
}

TEST(Accuracy, RandomLogitsScoreNearChance) {
  std::mt19937_64 rng(65);
  const Matrix logits = random_matrix(4000, 4, rng);
  EXPECT_NEAR(accuracy(logits, random_labels(4000, 4, rng)), 0.25, 0.03);
}

// Invariances ------------------------------------------------------------------

TEST(DispersionReport, InvariantUnderIsometriesAndScaling) {
  std::mt19937_64 rng(66);
  const Matrix x = random_matrix(80, 2, rng);
  const auto cls = random_labels(80, 3, rng);
  const auto dom = random_labels(80, 2, rng);
  const auto base = dispersion_report(x, cls, dom, 7);

  const double angle = 0.7, c = std::cos(angle), s = std::sin(angle);
  Matrix moved(80, 2);
  for (std::size_t i = 0; i < 80; ++i) {
    moved(i, 0) = c * x(i, 0) - s * x(i, 1) + 3.0;
    moved(i, 1) = s * x(i, 0) + c * x(i, 1) - 1.0;
  }
  const auto r = dispersion_report(moved, cls, dom, 7);
  EXPECT_NEAR(r.class_silhouette, base.class_silhouette, 1e-9);
  EXPECT_NEAR(r.domain_silhouette, base.domain_silhouette, 1e-9);
  EXPECT_NEAR(r.class_knn_purity, base.class_knn_purity, 1e-9);
  EXPECT_NEAR(r.domain_knn_purity, base.domain_knn_purity, 1e-9);

  Matrix scaled = x;
  scaled *= 8.0;  // power of two: distances scale exactly
  EXPECT_EQ(dispersion_report(scaled, cls, dom, 7), base);
}

TEST(DispersionReport, ClampsNeighbourCountOnSmallSets) {
  Matrix x(4, 1, std::vector<double>{0, 1, 4, 6});
  const std::vector<int> labels{0, 0, 1, 1};
  EXPECT_EQ(dispersion_report(x, labels, labels, 10).k, 3u);
}

TEST(DispersionReport, JsonCarriesTheFiveKeys) {
  DispersionReport r{0.1, -0.2, 0.3, 0.4, 10};
  const auto j = to_json(r);
  ASSERT_EQ(j.size(), 5u);
  for (const char* key : {"class_silhouette", "domain_silhouette", "class_knn_purity", "domain_knn_purity", "k"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(dispersion_from_json(j), r);
}

TEST(DispersionReport, UntrainedEncoderWithoutDomainSignalHasChanceDomainPurity) {
  TrainConfig cfg;
  cfg.mixture.domain_scale = 0.0;
  cfg.seed = 67;
  const RunData rd = make_run_data(cfg);
  const Matrix emb = embed(init_model_for(cfg), rd.all.features, cfg.loss);
  const auto r = dispersion_report(emb, rd.all.class_ids, rd.all.domain_ids, cfg.knn_k);
  EXPECT_NEAR(r.domain_knn_purity, 1.0 / static_cast<double>(cfg.mixture.num_domains), 0.1);
}

}  // namespace
}  // namespace dct
