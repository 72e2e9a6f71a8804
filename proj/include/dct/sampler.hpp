#pragma once

// P x K batch sampler. Under domain_class mining every batch shares one set of
// at least two domains across all of its classes, and each class places at
// least one sample in every one of those domains. That makes every anchor
// DC-feasible: a same-class sample exists in another domain and a
// different-class sample exists in its own domain.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dct/domain_model.hpp"
#include "dct/mining.hpp"

namespace dct {

class PkDomainSampler {
public:
  PkDomainSampler(const Dataset& ds, std::size_t classes_per_batch, std::size_t samples_per_class,
                  MiningPolicy policy, std::uint64_t seed)
      : P_(classes_per_batch), K_(samples_per_class), policy_(policy), rng_(seed) {
    ds.validate();
    if (P_ < 2 || K_ < 2) throw Error("invalid_config", "sampler needs P >= 2 and K >= 2");
    for (std::size_t i = 0; i < ds.size(); ++i) {
      cells_[{ds.class_ids[i], ds.domain_ids[i]}].indices.push_back(i);
      class_pools_[ds.class_ids[i]].indices.push_back(i);
    }
    for (const auto& [key, cell] : cells_) domains_of_class_[key.first].insert(key.second);

    for (const auto& [cls, pool] : class_pools_) {
      const bool enough = pool.indices.size() >= 2;
      const bool multi_domain = domains_of_class_[cls].size() >= 2;
      if (enough && (policy_ == MiningPolicy::standard || multi_domain)) eligible_.push_back(cls);
    }
    if (eligible_.size() < P_) {
      throw Error("infeasible_sampling",
                  "only " + std::to_string(eligible_.size()) + " classes usable under " +
                      to_string(policy_) + " sampling, need P = " + std::to_string(P_));
    }
    if (policy_ == MiningPolicy::domain_class && !has_feasible_domain_pair()) {
      throw Error("infeasible_sampling",
                  "no pair of domains is shared by P classes; domain_class batches impossible");
    }
    batches_per_epoch_ = std::max<std::size_t>(1, ds.size() / (P_ * K_));
    begin_epoch();
  }

  std::size_t batches_per_epoch() const noexcept { return batches_per_epoch_; }

  /// Reshuffles every pool; draws within an epoch are without replacement
  /// until a pool runs dry, at which point that pool is reshuffled.
  void begin_epoch() {
    for (auto& [_, cell] : cells_) reshuffle(cell);
    for (auto& [_, pool] : class_pools_) reshuffle(pool);
  }

  std::vector<std::size_t> next_batch() {
    std::vector<int> classes = eligible_;
    std::shuffle(classes.begin(), classes.end(), rng_);
    classes.resize(P_);
    std::vector<std::size_t> batch;
    batch.reserve(P_ * K_);
    if (policy_ == MiningPolicy::standard) {
      for (int c : classes) {
        for (std::size_t s = 0; s < K_; ++s) batch.push_back(draw(class_pools_.at(c)));
      }
      return batch;
    }

    std::vector<int> domains = common_domains(classes);
    for (int attempt = 0; domains.size() < 2 && attempt < 64; ++attempt) {
      classes = eligible_;
      std::shuffle(classes.begin(), classes.end(), rng_);
      classes.resize(P_);
      domains = common_domains(classes);
    }
    if (domains.size() < 2) {
      throw Error("infeasible_sampling", "could not find P classes sharing two domains");
    }
    std::shuffle(domains.begin(), domains.end(), rng_);
    if (domains.size() > K_) domains.resize(K_);
    for (int c : classes) {
      for (std::size_t s = 0; s < K_; ++s) {
        batch.push_back(draw(cells_.at({c, domains[s % domains.size()]})));
      }
    }
    return batch;
  }

private:
  struct Pool {
    std::vector<std::size_t> indices;
    std::size_t cursor = 0;
  };

  void reshuffle(Pool& pool) {
    std::shuffle(pool.indices.begin(), pool.indices.end(), rng_);
    pool.cursor = 0;
  }

  std::size_t draw(Pool& pool) {
    if (pool.cursor >= pool.indices.size()) reshuffle(pool);
    return pool.indices[pool.cursor++];
  }

  std::vector<int> common_domains(const std::vector<int>& classes) const {
    std::vector<int> out;
    for (int d : domains_of_class_.at(classes.front())) {
      bool shared = true;
      for (int c : classes) shared = shared && domains_of_class_.at(c).contains(d);
      if (shared) out.push_back(d);
    }
    return out;
  }

  bool has_feasible_domain_pair() const {
    std::set<int> domains;
    for (const auto& [key, _] : cells_) domains.insert(key.second);
    for (auto a = domains.begin(); a != domains.end(); ++a) {
      for (auto b = std::next(a); b != domains.end(); ++b) {
        std::size_t count = 0;
        for (int c : eligible_) {
          const auto& ds = domains_of_class_.at(c);
          count += (ds.contains(*a) && ds.contains(*b)) ? 1 : 0;
        }
        if (count >= P_) return true;
      }
    }
    return false;
  }

  std::size_t P_;
  std::size_t K_;
  MiningPolicy policy_;
  std::mt19937_64 rng_;
  std::map<std::pair<int, int>, Pool> cells_;
  std::map<int, Pool> class_pools_;
  std::map<int, std::set<int>> domains_of_class_;
  std::vector<int> eligible_;
  std::size_t batches_per_epoch_ = 1;
};

}  // namespace dct
