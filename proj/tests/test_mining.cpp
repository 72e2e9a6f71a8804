#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dct/mining.hpp"
#include "dct/model.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace dct {
namespace {

std::size_t row_count(const std::vector<std::uint8_t>& mask, std::size_t n, std::size_t a) {
  return static_cast<std::size_t>(std::count(mask.begin() + static_cast<long>(a * n),
                                             mask.begin() + static_cast<long>((a + 1) * n), 1));
}

TEST(CandidateMasks, CrossedTwoByTwoHasOnePositiveAndOneNegativePerAnchor) {
  const std::vector<int> cls{0, 0, 1, 1};
  const std::vector<int> dom{0, 1, 0, 1};
  const auto m = candidate_masks(cls, dom, MiningPolicy::domain_class);
  for (std::size_t a = 0; a < 4; ++a) {
    EXPECT_EQ(row_count(m.pos, 4, a), 1u);
    EXPECT_EQ(row_count(m.neg, 4, a), 1u);
  }
  EXPECT_TRUE(m.positive(0, 1));  // same class, other domain
  EXPECT_TRUE(m.negative(0, 2));  // same domain, other class
  EXPECT_FALSE(m.positive(0, 0));
}

TEST(CandidateMasks, SingleDomainHasNoDomainClassPositives) {
  const std::vector<int> cls{0, 0, 1, 1, 2};
  const std::vector<int> dom(5, 2);
  const auto m = candidate_masks(cls, dom, MiningPolicy::domain_class);
  EXPECT_EQ(std::count(m.pos.begin(), m.pos.end(), 1), 0);
}

TEST(CandidateMasks, StandardPolicyIgnoresDomains) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    auto b = oracle::random_batch(rng);
    const auto before = candidate_masks(b.cls, b.dom, MiningPolicy::standard);
    std::shuffle(b.dom.begin(), b.dom.end(), rng);
    const auto after = candidate_masks(b.cls, b.dom, MiningPolicy::standard);
    EXPECT_EQ(before.pos, after.pos);
    EXPECT_EQ(before.neg, after.neg);
  }
}

TEST(CandidateMasks, DomainClassRefinesStandard) {
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 300; ++trial) {
    const auto b = oracle::random_batch(rng);
    const auto s = candidate_masks(b.cls, b.dom, MiningPolicy::standard);
    const auto dc = candidate_masks(b.cls, b.dom, MiningPolicy::domain_class);
    for (std::size_t k = 0; k < s.pos.size(); ++k) {
      EXPECT_LE(dc.pos[k], s.pos[k]);
      EXPECT_LE(dc.neg[k], s.neg[k]);
    }
  }
}

TEST(CandidateMasks, InvariantUnderDomainRelabelingAndPermutation) {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 100; ++trial) {
    const auto b = oracle::random_batch(rng);
    const std::size_t n = b.cls.size();
    // relabel domains by a permutation of {0,1,2}
    std::vector<int> relabel{0, 1, 2};
    std::shuffle(relabel.begin(), relabel.end(), rng);
    std::vector<int> dom2(n);
    for (std::size_t i = 0; i < n; ++i) dom2[i] = relabel[static_cast<std::size_t>(b.dom[i])];
    const auto base = candidate_masks(b.cls, b.dom, MiningPolicy::domain_class);
    EXPECT_EQ(candidate_masks(b.cls, dom2, MiningPolicy::domain_class).pos, base.pos);
    // permute samples
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> pc(n), pd(n);
    for (std::size_t i = 0; i < n; ++i) {
      pc[i] = b.cls[perm[i]];
      pd[i] = b.dom[perm[i]];
    }
    const auto permuted = candidate_masks(pc, pd, MiningPolicy::domain_class);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        EXPECT_EQ(permuted.positive(i, j), base.positive(perm[i], perm[j]));
        EXPECT_EQ(permuted.negative(i, j), base.negative(perm[i], perm[j]));
      }
    }
  }
}

TEST(CandidateMasks, RejectsLengthMismatch) {
  const std::vector<int> cls{0, 1};
  const std::vector<int> dom{0};
  EXPECT_EQ(test::error_kind([&] { candidate_masks(cls, dom, MiningPolicy::standard); }), "shape_mismatch");
}

TEST(BatchHardSelect, PicksFarthestPositive) {
  // anchor 0; positives 1 (distance 1) and 2 (distance 5); negative 3
  const std::vector<int> cls{0, 0, 0, 1};
  const std::vector<int> dom{0, 0, 0, 0};
  Matrix d(4, 4);
  auto set = [&d](std::size_t i, std::size_t j, double v) { d(i, j) = d(j, i) = v; };
  set(0, 1, 1.0);
  set(0, 2, 5.0);
  set(0, 3, 2.0);
  set(1, 2, 4.0);
  set(1, 3, 3.0);
  set(2, 3, 3.0);
  const auto t = batch_hard_select(d, candidate_masks(cls, dom, MiningPolicy::standard)).triplets[0];
  EXPECT_TRUE(t.valid);
  EXPECT_EQ(t.positive, 2u);
  EXPECT_EQ(t.negative, 3u);
}

TEST(BatchHardSelect, AnchorWithoutNegativeIsInvalid) {
  const std::vector<int> cls{0, 0, 1};
  const std::vector<int> dom{0, 1, 1};
  const auto set = batch_hard_select(Matrix(3, 3, 1.0), candidate_masks(cls, dom, MiningPolicy::domain_class));
  EXPECT_FALSE(set.triplets[0].valid);  // no class-1 sample in domain 0
  EXPECT_EQ(set.triplets[0].negative, kNoIndex);
  EXPECT_TRUE(set.triplets[1].valid);
  EXPECT_EQ(set.valid_count(), 1u);
}

TEST(BatchHardSelect, TiesGoToLowestIndex) {
  const std::vector<int> cls{0, 0, 0, 1, 1};
  const std::vector<int> dom(5, 0);
  const Matrix d(5, 5, 2.0);
  const auto t = batch_hard_select(d, candidate_masks(cls, dom, MiningPolicy::standard)).triplets[0];
  EXPECT_EQ(t.positive, 1u);
  EXPECT_EQ(t.negative, 3u);
}

TEST(BatchHardSelect, MatchesBruteForceOnRandomBatches) {
  std::mt19937_64 rng(34);
  for (int trial = 0; trial < 500; ++trial) {
    const auto b = oracle::random_batch(rng, 16);
    for (auto policy : {MiningPolicy::standard, MiningPolicy::domain_class}) {
      const auto got = batch_hard_select(b.dist, candidate_masks(b.cls, b.dom, policy));
      EXPECT_EQ(oracle::as_tuples(got), oracle::batch_hard(b.dist, b.cls, b.dom, policy));
      EXPECT_EQ(got.policy, policy);
      EXPECT_EQ(got.selection, Selection::batch_hard);
    }
  }
}

TEST(BatchHardSelect, InvariantUnderPositiveScaling) {
  std::mt19937_64 rng(35);
  std::uniform_real_distribution<double> lambda(1e-3, 1e3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto b = oracle::random_batch(rng);
    Matrix scaled = b.dist;
    scaled *= lambda(rng);
    const auto masks = candidate_masks(b.cls, b.dom, MiningPolicy::domain_class);
    EXPECT_EQ(oracle::as_tuples(batch_hard_select(scaled, masks)),
              oracle::as_tuples(batch_hard_select(b.dist, masks)));
  }
}

TEST(BatchHardSelect, RejectsWrongDistanceShape) {
  const std::vector<int> cls{0, 1};
  const auto masks = candidate_masks(cls, cls, MiningPolicy::standard);
  EXPECT_EQ(test::error_kind([&] { batch_hard_select(Matrix(3, 3), masks); }), "shape_mismatch");
}

TEST(BatchAllExpand, CrossedTwoByTwoGivesFourTriplets) {
  const std::vector<int> cls{0, 0, 1, 1};
  const std::vector<int> dom{0, 1, 0, 1};
  EXPECT_EQ(batch_all_expand(candidate_masks(cls, dom, MiningPolicy::domain_class)).triplets.size(), 4u);
}

TEST(BatchAllExpand, EmptyMasksGiveEmptySet) {
  const std::vector<int> cls{0, 0, 0};
  const std::vector<int> dom{0, 1, 2};
  EXPECT_TRUE(batch_all_expand(candidate_masks(cls, dom, MiningPolicy::standard)).triplets.empty());
  EXPECT_TRUE(batch_all_expand(candidate_masks({}, {}, MiningPolicy::standard)).triplets.empty());
}

TEST(BatchAllExpand, CountingOracleTwoClassesFourSamplesOneDomain) {
  // P=2, K=4 in one domain: 8 anchors x 3 positives x 4 negatives
  const std::vector<int> cls{0, 0, 0, 0, 1, 1, 1, 1};
  const std::vector<int> dom(8, 0);
  EXPECT_EQ(batch_all_expand(candidate_masks(cls, dom, MiningPolicy::standard)).triplets.size(), 96u);
}

TEST(BatchAllExpand, CountEqualsSumOfPositiveTimesNegative) {
  std::mt19937_64 rng(36);
  for (int trial = 0; trial < 300; ++trial) {
    const auto b = oracle::random_batch(rng);
    for (auto policy : {MiningPolicy::standard, MiningPolicy::domain_class}) {
      const auto masks = candidate_masks(b.cls, b.dom, policy);
      std::size_t expected = 0;
      for (std::size_t a = 0; a < masks.n; ++a) expected += row_count(masks.pos, masks.n, a) * row_count(masks.neg, masks.n, a);
      const auto set = batch_all_expand(masks);
      EXPECT_EQ(set.triplets.size(), expected);
      EXPECT_EQ(oracle::as_tuples(set), oracle::batch_all(b.cls, b.dom, policy));
    }
  }
}

TEST(TripletSet, SatisfiesPolicyConstraints) {
  std::mt19937_64 rng(37);
  for (int trial = 0; trial < 300; ++trial) {
    const auto b = oracle::random_batch(rng);
    const auto masks = candidate_masks(b.cls, b.dom, MiningPolicy::domain_class);
    for (const auto& set : {batch_hard_select(b.dist, masks), batch_all_expand(masks)}) {
      for (const auto& t : set.triplets) {
        if (!t.valid) continue;
        EXPECT_NE(t.anchor, t.positive);
        EXPECT_EQ(b.cls[t.anchor], b.cls[t.positive]);
        EXPECT_NE(b.dom[t.anchor], b.dom[t.positive]);
        EXPECT_NE(b.cls[t.anchor], b.cls[t.negative]);
        EXPECT_EQ(b.dom[t.anchor], b.dom[t.negative]);
      }
    }
  }
}

TEST(FeasibilityReport, CrossedBatchIsFullyFeasible) {
  std::vector<int> cls, dom;
  for (int c = 0; c < 4; ++c) {
    for (int d = 0; d < 3; ++d) {
      cls.push_back(c);
      dom.push_back(d);
    }
  }
  const auto r = batch_feasibility_report(cls, dom);
  EXPECT_EQ(r.anchors, 12u);
  EXPECT_EQ(r.infeasible, 0u);
}

TEST(FeasibilityReport, OneDomainBatchLacksAllPositives) {
  const std::vector<int> cls{0, 0, 1, 1, 2, 2};
  const std::vector<int> dom(6, 1);
  const auto r = batch_feasibility_report(cls, dom);
  EXPECT_EQ(r.without_positive, 6u);
  EXPECT_EQ(r.without_negative, 0u);
  EXPECT_EQ(r.infeasible, 6u);
}

}  // namespace
}  // namespace dct
