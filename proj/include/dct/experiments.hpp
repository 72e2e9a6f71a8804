#pragma once

// Leave-one-domain-out protocol, ablation grid and margin sweep.

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dct/config.hpp"
#include "dct/metrics.hpp"
#include "dct/trainer.hpp"

namespace dct {

struct LodoRun {
  int held_out_domain = 0;
  std::size_t trial = 0;
  std::uint64_t seed = 0;
  double held_out_accuracy = 0.0;
  double source_accuracy = 0.0;
  DispersionReport dispersion;
};

struct LodoSummary {
  LossConfig loss;
  std::vector<LodoRun> runs;
  std::vector<double> per_domain_accuracy;  // averaged over trials
  double mean_accuracy = 0.0;
  double mean_source_accuracy = 0.0;
  DispersionReport mean_dispersion;
};

/// Trial t uses seed cfg.seed + t; within a trial every domain is held out
/// once, all sharing the trial's dataset.
inline LodoSummary leave_one_domain_out(const TrainConfig& cfg) {
  const std::size_t D = cfg.mixture.num_domains;
  LodoSummary s;
  s.loss = cfg.loss;
  s.per_domain_accuracy.assign(D, 0.0);
  s.mean_dispersion.k = cfg.knn_k;
  const double inv_trials = 1.0 / static_cast<double>(cfg.trial_seeds);
  for (std::size_t t = 0; t < cfg.trial_seeds; ++t) {
    for (std::size_t d = 0; d < D; ++d) {
      TrainConfig run_cfg = cfg;
      run_cfg.seed = cfg.seed + t;
      run_cfg.held_out_domain = static_cast<int>(d);
      const RunReport rep = train(run_cfg);
      LodoRun run{static_cast<int>(d), t, run_cfg.seed, *rep.final_eval.held_out_accuracy,
                  rep.final_eval.source_accuracy, rep.final_eval.dispersion};
      s.per_domain_accuracy[d] += run.held_out_accuracy * inv_trials;
      s.runs.push_back(run);
    }
  }
  const double inv_runs = 1.0 / static_cast<double>(s.runs.size());
  for (const auto& r : s.runs) {
    s.mean_accuracy += r.held_out_accuracy * inv_runs;
    s.mean_source_accuracy += r.source_accuracy * inv_runs;
    s.mean_dispersion.class_silhouette += r.dispersion.class_silhouette * inv_runs;
    s.mean_dispersion.domain_silhouette += r.dispersion.domain_silhouette * inv_runs;
    s.mean_dispersion.class_knn_purity += r.dispersion.class_knn_purity * inv_runs;
    s.mean_dispersion.domain_knn_purity += r.dispersion.domain_knn_purity * inv_runs;
    s.mean_dispersion.k = r.dispersion.k;
  }
  return s;
}

struct NamedConfig {
  std::string group;  // "components" or "normalization"
  std::string name;
  TrainConfig config;
};

/// Component rows (CE, CE+BN, CE+BN+Triplet, CE+BN+DCT) and normalization rows
/// (after, before, FN, after+FN, before+FN) derived from `base`. CE-only rows
/// sample plain P x K batches since no triplet is mined.
inline std::vector<NamedConfig> ablation_configs(const TrainConfig& base) {
  auto with = [&base](auto&& edit) {
    TrainConfig c = base;
    edit(c.loss);
    return c;
  };
  std::vector<NamedConfig> rows;
  rows.push_back({"components", "CE", with([](LossConfig& l) {
                    l.use_bn = false;
                    l.use_fn = false;
                    l.dct_weight = 0.0;
                    l.policy = MiningPolicy::standard;
                  })});
  rows.push_back({"components", "CE+BN", with([](LossConfig& l) {
                    l.use_bn = true;
                    l.use_fn = false;
                    l.classifier_input = ClassifierInput::after_bn;
                    l.dct_weight = 0.0;
                    l.policy = MiningPolicy::standard;
                  })});
  rows.push_back({"components", "CE+BN+Triplet", with([](LossConfig& l) {
                    l.use_bn = true;
                    l.use_fn = false;
                    l.classifier_input = ClassifierInput::after_bn;
                    l.policy = MiningPolicy::standard;
                  })});
  rows.push_back({"components", "CE+BN+DCT", with([](LossConfig& l) {
                    l.use_bn = true;
                    l.use_fn = false;
                    l.classifier_input = ClassifierInput::after_bn;
                    l.policy = MiningPolicy::domain_class;
                  })});
  const std::vector<std::tuple<std::string, bool, bool, ClassifierInput>> norm_rows{
      {"after", true, false, ClassifierInput::after_bn},
      {"before", true, false, ClassifierInput::before_bn},
      {"FN", false, true, ClassifierInput::before_bn},
      {"after+FN", true, true, ClassifierInput::after_bn},
      {"before+FN", true, true, ClassifierInput::before_bn}};
  for (const auto& [name, bn, fn, input] : norm_rows) {
    rows.push_back({"normalization", name, with([&](LossConfig& l) {
                      l.use_bn = bn;
                      l.use_fn = fn;
                      l.classifier_input = input;
                      l.policy = MiningPolicy::domain_class;
                    })});
  }
  return rows;
}

struct AblationRow {
  std::string group;
  std::string name;
  LodoSummary summary;
};

inline std::vector<AblationRow> ablation_grid(const TrainConfig& base) {
  std::vector<AblationRow> table;
  for (auto& row : ablation_configs(base)) {
    table.push_back({row.group, row.name, leave_one_domain_out(row.config)});
  }
  return table;
}

struct SweepRow {
  double margin = 0.0;
  LodoSummary summary;
};

inline std::vector<SweepRow> margin_sweep(const TrainConfig& base, const std::vector<double>& margins) {
  std::vector<SweepRow> table;
  for (double m : margins) {
    TrainConfig c = base;
    c.loss.margin = m;
    table.push_back({m, leave_one_domain_out(c)});
  }
  return table;
}

struct MotivationReport {
  DominanceReport dominance;  // on the configured spec, first trial seed
  std::vector<std::pair<double, DominanceReport>> domain_scale_sweep;
  std::vector<DispersionReport> untrained;  // one per trial seed
  DispersionReport untrained_mean;
};

/// Domain-dominance diagnostics plus the dispersion of an untrained encoder's
/// embeddings of the full dataset, per trial seed.
inline MotivationReport motivate(const TrainConfig& cfg,
                                 const std::vector<double>& domain_scales = {1.0, 2.0, 4.0, 8.0}) {
  cfg.validate();
  MotivationReport m;
  m.dominance = dominance_report(make_run_data(cfg).all);
  for (double s : domain_scales) {
    TrainConfig c = cfg;
    c.mixture.domain_scale = s;
    m.domain_scale_sweep.emplace_back(s, dominance_report(make_run_data(c).all));
  }
  m.untrained_mean.k = cfg.knn_k;
  const double inv = 1.0 / static_cast<double>(cfg.trial_seeds);
  for (std::size_t t = 0; t < cfg.trial_seeds; ++t) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + t;
    c.held_out_domain.reset();
    const RunData rd = make_run_data(c);
    const ModelParams params = init_model_for(c);
    const Matrix emb = embed(params, rd.all.features, c.loss);
    const auto r = dispersion_report(emb, rd.all.class_ids, rd.all.domain_ids, c.knn_k);
    m.untrained.push_back(r);
    m.untrained_mean.class_silhouette += r.class_silhouette * inv;
    m.untrained_mean.domain_silhouette += r.domain_silhouette * inv;
    m.untrained_mean.class_knn_purity += r.class_knn_purity * inv;
    m.untrained_mean.domain_knn_purity += r.domain_knn_purity * inv;
    m.untrained_mean.k = r.k;
  }
  return m;
}

}  // namespace dct
