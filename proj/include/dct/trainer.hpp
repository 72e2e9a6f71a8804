#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dct/config.hpp"
#include "dct/domain_model.hpp"
#include "dct/losses.hpp"
#include "dct/metrics.hpp"
#include "dct/mining.hpp"
#include "dct/model.hpp"
#include "dct/sampler.hpp"

namespace dct {

/// Datasets of one run. `train` excludes the held-out domain; `target` holds
/// only it (empty without a held-out domain). `probe` is an independent draw
/// restricted to the source domains.
struct RunData {
  MixtureSpec spec;
  Dataset all;
  Dataset train;
  Dataset target;
  Dataset probe;
};

namespace streams {
inline constexpr std::uint64_t geometry = 1;
inline constexpr std::uint64_t samples = 2;
inline constexpr std::uint64_t probe = 3;
inline constexpr std::uint64_t init = 10;
inline constexpr std::uint64_t sampler = 20;
}  // namespace streams

/// Per-run stream offset so that each held-out domain gets its own init and
/// sampler streams while the data stays shared across a trial seed.
inline std::uint64_t run_stream(const TrainConfig& cfg) {
  return cfg.held_out_domain ? static_cast<std::uint64_t>(*cfg.held_out_domain) + 1 : 0;
}

inline RunData make_run_data(const TrainConfig& cfg) {
  RunData rd;
  rd.spec = make_mixture_spec(cfg.mixture, derive_seed(cfg.seed, streams::geometry));
  rd.all = sample_dataset(rd.spec, cfg.n_per_cell, derive_seed(cfg.seed, streams::samples));
  Dataset probe = sample_dataset(rd.spec, cfg.probe_per_cell, derive_seed(cfg.seed, streams::probe));
  if (cfg.held_out_domain) {
    rd.train = rd.all.filter_domain(*cfg.held_out_domain, false);
    rd.target = rd.all.filter_domain(*cfg.held_out_domain, true);
    rd.probe = probe.filter_domain(*cfg.held_out_domain, false);
  } else {
    rd.train = rd.all;
    rd.probe = std::move(probe);
  }
  return rd;
}

inline ModelParams init_model_for(const TrainConfig& cfg) {
  std::mt19937_64 rng(derive_seed(cfg.seed, streams::init + 100 * run_stream(cfg)));
  const auto sizes = cfg.layer_sizes();
  return init_model(sizes, cfg.mixture.num_classes, rng);
}

/// Eval-mode triplet-path features (after BN / FN as configured).
inline Matrix embed(const ModelParams& params, const Matrix& x, const LossConfig& cfg) {
  ModelParams copy = params;
  return network_forward(copy, x, cfg, false).triplet_features;
}

inline Matrix predict_logits(const ModelParams& params, const Matrix& x, const LossConfig& cfg) {
  ModelParams copy = params;
  return network_forward(copy, x, cfg, false).logits;
}

struct EvalSnapshot {
  DispersionReport dispersion;
  double source_accuracy = 0.0;
  std::optional<double> held_out_accuracy;
  // Full-batch objective on the probe set using batch statistics; running
  // statistics are left untouched.
  double probe_total = 0.0;
  double probe_ce = 0.0;
  double probe_dct = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double total_loss = 0.0;
  double ce_loss = 0.0;
  double dct_loss = 0.0;
  double active_fraction = 0.0;
  std::optional<EvalSnapshot> eval;
};

struct RunReport {
  TrainConfig config;
  std::vector<EpochRecord> epochs;
  EvalSnapshot final_eval;
};

inline EvalSnapshot evaluate(const ModelParams& params, const RunData& rd, const TrainConfig& cfg) {
  EvalSnapshot snap;
  const Matrix probe_features = embed(params, rd.probe.features, cfg.loss);
  snap.dispersion =
      dispersion_report(probe_features, rd.probe.class_ids, rd.probe.domain_ids, cfg.knn_k);
  snap.source_accuracy =
      accuracy(predict_logits(params, rd.train.features, cfg.loss), rd.train.class_ids);
  if (rd.target.size() > 0) {
    snap.held_out_accuracy =
        accuracy(predict_logits(params, rd.target.features, cfg.loss), rd.target.class_ids);
  }
  ModelParams scratch = params;
  const auto probe_loss = total_loss(scratch, rd.probe.features, rd.probe.class_ids,
                                     rd.probe.domain_ids, cfg.loss, true);
  snap.probe_total = probe_loss.total;
  snap.probe_ce = probe_loss.ce;
  snap.probe_dct = probe_loss.dct;
  return snap;
}

struct TrainedModel {
  ModelParams params;
  RunReport report;
  RunData data;
};

/// SGD over P x K batches; BN in train mode for steps, eval mode for
/// evaluation. A non-finite loss aborts the run.
inline TrainedModel train_model(const TrainConfig& cfg) {
  cfg.validate();
  TrainedModel out;
  out.data = make_run_data(cfg);
  out.params = init_model_for(cfg);
  out.report.config = cfg;
  const RunData& rd = out.data;

  PkDomainSampler sampler(rd.train, cfg.classes_per_batch, cfg.samples_per_class, cfg.loss.policy,
                          derive_seed(cfg.seed, streams::sampler + 100 * run_stream(cfg)));
  SgdState opt;
  std::size_t batch_id = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    sampler.begin_epoch();
    EpochRecord rec;
    rec.epoch = epoch;
    const std::size_t nb = sampler.batches_per_epoch();
    for (std::size_t b = 0; b < nb; ++b, ++batch_id) {
      const auto idx = sampler.next_batch();
      const Dataset batch = rd.train.subset(idx);
      if (cfg.loss.policy == MiningPolicy::domain_class &&
          batch_feasibility_report(batch.class_ids, batch.domain_ids).infeasible != 0) {
        throw Error("internal_error", "sampler produced a DC-infeasible batch " + std::to_string(batch_id));
      }
      auto step = total_loss(out.params, batch.features, batch.class_ids, batch.domain_ids, cfg.loss, true);
      if (!std::isfinite(step.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << batch_id
            << ", lr " << cfg.optimizer.lr;
        throw Error("non_finite_loss", msg.str());
      }
      sgd_step(out.params, step.grads, opt, cfg.optimizer);
      rec.total_loss += step.total / static_cast<double>(nb);
      rec.ce_loss += step.ce / static_cast<double>(nb);
      rec.dct_loss += step.dct / static_cast<double>(nb);
      rec.active_fraction += step.stats.active_fraction / static_cast<double>(nb);
    }
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) rec.eval = evaluate(out.params, rd, cfg);
    out.report.epochs.push_back(std::move(rec));
  }
  out.report.final_eval = out.report.epochs.empty() ? evaluate(out.params, rd, cfg)
                                                    : *out.report.epochs.back().eval;
  return out;
}

inline RunReport train(const TrainConfig& cfg) { return train_model(cfg).report; }

}  // namespace dct
