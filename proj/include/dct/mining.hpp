#pragma once

// Triplet construction under class-only ("standard") and domain-class pair
// mining. Under domain_class a positive shares the anchor's class but comes
// from another domain, and a negative shares the anchor's domain but has a
// different class.

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dct/matrix.hpp"

namespace dct {

enum class MiningPolicy { standard, domain_class };
enum class Selection { batch_hard, batch_all };

inline std::string to_string(MiningPolicy p) {
  return p == MiningPolicy::standard ? "standard" : "domain_class";
}
inline std::string to_string(Selection s) {
  return s == Selection::batch_hard ? "batch_hard" : "batch_all";
}

struct CandidateMasks {
  std::size_t n = 0;
  MiningPolicy policy = MiningPolicy::standard;
  std::vector<std::uint8_t> pos;  // n x n, row = anchor
  std::vector<std::uint8_t> neg;

  bool positive(std::size_t a, std::size_t j) const noexcept { return pos[a * n + j] != 0; }
  bool negative(std::size_t a, std::size_t j) const noexcept { return neg[a * n + j] != 0; }
};

inline constexpr std::size_t kNoIndex = std::numeric_limits<std::size_t>::max();

struct Triplet {
  std::size_t anchor = kNoIndex;
  std::size_t positive = kNoIndex;
  std::size_t negative = kNoIndex;
  bool valid = false;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct TripletSet {
  std::vector<Triplet> triplets;
  MiningPolicy policy = MiningPolicy::standard;
  Selection selection = Selection::batch_hard;

  std::size_t valid_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : triplets) n += t.valid ? 1 : 0;
    return n;
  }
};

inline CandidateMasks candidate_masks(std::span<const int> class_labels,
                                      std::span<const int> domain_labels, MiningPolicy policy) {
  const std::size_t n = class_labels.size();
  if (domain_labels.size() != n) {
    throw Error("shape_mismatch", "class and domain label counts differ");
  }
  CandidateMasks m{n, policy, std::vector<std::uint8_t>(n * n, 0),
                   std::vector<std::uint8_t>(n * n, 0)};
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a) continue;
      const bool same_class = class_labels[a] == class_labels[j];
      const bool same_domain = domain_labels[a] == domain_labels[j];
      bool pos = same_class;
      bool neg = !same_class;
      if (policy == MiningPolicy::domain_class) {
        pos = pos && !same_domain;
        neg = neg && same_domain;
      }
      m.pos[a * n + j] = pos ? 1 : 0;
      m.neg[a * n + j] = neg ? 1 : 0;
    }
  }
  return m;
}

/// Per anchor: farthest valid positive, nearest valid negative, lowest index
/// on ties. Anchors lacking either candidate are kept but marked invalid.
inline TripletSet batch_hard_select(const Matrix& dist, const CandidateMasks& masks) {
  const std::size_t n = masks.n;
  if (dist.rows() != n || dist.cols() != n) {
    throw Error("shape_mismatch", "distance matrix is " + dist.shape_string() + ", masks are " +
                                      std::to_string(n) + "x" + std::to_string(n));
  }
  TripletSet set{{}, masks.policy, Selection::batch_hard};
  set.triplets.reserve(n);
  for (std::size_t a = 0; a < n; ++a) {
    Triplet t{a, kNoIndex, kNoIndex, false};
    for (std::size_t j = 0; j < n; ++j) {
      if (masks.positive(a, j) && (t.positive == kNoIndex || dist(a, j) > dist(a, t.positive))) {
        t.positive = j;
      }
      if (masks.negative(a, j) && (t.negative == kNoIndex || dist(a, j) < dist(a, t.negative))) {
        t.negative = j;
      }
    }
    t.valid = t.positive != kNoIndex && t.negative != kNoIndex;
    set.triplets.push_back(t);
  }
  return set;
}

/// Every (a, p, n) admitted by the masks, ordered by anchor, then p, then n.
inline TripletSet batch_all_expand(const CandidateMasks& masks) {
  const std::size_t n = masks.n;
  TripletSet set{{}, masks.policy, Selection::batch_all};
  std::vector<std::size_t> negs;
  for (std::size_t a = 0; a < n; ++a) {
    negs.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (masks.negative(a, j)) negs.push_back(j);
    }
    if (negs.empty()) continue;
    for (std::size_t p = 0; p < n; ++p) {
      if (!masks.positive(a, p)) continue;
      for (std::size_t q : negs) set.triplets.push_back({a, p, q, true});
    }
  }
  return set;
}

struct FeasibilityReport {
  std::size_t anchors = 0;
  std::size_t without_positive = 0;
  std::size_t without_negative = 0;
  std::size_t infeasible = 0;  // lacking a positive or a negative
};

/// Counts anchors that cannot form a domain-class triplet.
inline FeasibilityReport batch_feasibility_report(std::span<const int> class_labels,
                                                  std::span<const int> domain_labels) {
  const auto masks = candidate_masks(class_labels, domain_labels, MiningPolicy::domain_class);
  FeasibilityReport r;
  r.anchors = masks.n;
  for (std::size_t a = 0; a < masks.n; ++a) {
    bool has_pos = false;
    bool has_neg = false;
    for (std::size_t j = 0; j < masks.n; ++j) {
      has_pos = has_pos || masks.positive(a, j);
      has_neg = has_neg || masks.negative(a, j);
    }
    r.without_positive += has_pos ? 0 : 1;
    r.without_negative += has_neg ? 0 : 1;
    r.infeasible += (has_pos && has_neg) ? 0 : 1;
  }
  return r;
}

}  // namespace dct
