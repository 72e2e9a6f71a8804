#include <cmath>
#include <set>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "dct/config.hpp"
#include "dct/experiments.hpp"
#include "dct/io.hpp"
#include "dct/sampler.hpp"
#include "dct/trainer.hpp"
#include "test_support.hpp"

namespace dct {
namespace {

/// A configuration small enough to train many times in a unit test.
TrainConfig small_config() {
  TrainConfig cfg;
  cfg.mixture.num_domains = 3;
  cfg.n_per_cell = 12;
  cfg.probe_per_cell = 5;
  cfg.epochs = 6;
  cfg.eval_every = 3;
  cfg.trial_seeds = 2;
  cfg.seed = 5;
  return cfg;
}

// Configuration ----------------------------------------------------------------

TEST(TrainConfig, JsonRoundTrip) {
  TrainConfig cfg = small_config();
  cfg.loss.policy = MiningPolicy::standard;
  cfg.loss.selection = Selection::batch_all;
  cfg.loss.classifier_input = ClassifierInput::before_bn;
  cfg.loss.use_fn = true;
  cfg.held_out_domain = 2;
  cfg.hidden_dims = {32, 16};
  cfg.sweep_margins = {0.0, 0.25};
  const auto j = to_json(cfg);
  EXPECT_EQ(to_json(train_config_from_json(j)).dump(), j.dump());
  EXPECT_EQ(to_json(train_config_from_json(json::object())).dump(), to_json(TrainConfig{}).dump());
}

TEST(TrainConfig, RejectsUnknownKeysAndBadValues) {
  auto kind = [](const char* text) {
    return test::error_kind([&] { train_config_from_json(json::parse(text)); });
  };
  EXPECT_EQ(kind(R"({"epoch": 3})"), "invalid_config");
  EXPECT_EQ(kind(R"({"loss": {"margn": 1}})"), "invalid_config");
  EXPECT_EQ(kind(R"({"mixture": {"dims": 3}})"), "invalid_config");
  EXPECT_EQ(kind(R"({"epochs": "many"})"), "invalid_config");
  EXPECT_EQ(kind(R"({"loss": {"policy": "random"}})"), "invalid_config");
  EXPECT_EQ(kind(R"({"loss": {"margin": -0.1}})"), "invalid_config");
  EXPECT_EQ(kind(R"({"classes_per_batch": 5})"), "invalid_config");
  EXPECT_EQ(kind(R"({"held_out_domain": 4})"), "invalid_config");
  EXPECT_EQ(kind(R"({"optimizer": {"momentum": 1.0}})"), "invalid_config");
  EXPECT_EQ(kind(R"({"mixture": {"num_domains": 2}, "held_out_domain": 0})"), "infeasible_sampling");
  EXPECT_EQ(kind(R"({"held_out_domain": null})"), "");
  EXPECT_EQ(test::error_kind([] { load_train_config("/nonexistent/config.json"); }), "io_error");
}

TEST(DeriveSeed, StreamsAreDistinctAndStable) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    for (std::uint64_t stream : {1u, 2u, 3u, 10u, 20u, 110u, 120u}) {
      EXPECT_EQ(derive_seed(seed, stream), derive_seed(seed, stream));
      seen.insert(derive_seed(seed, stream));
    }
  }
  EXPECT_EQ(seen.size(), 21u);
}

// Sampler ----------------------------------------------------------------------

Dataset grid_dataset(std::size_t classes, std::size_t domains, std::size_t per_cell) {
  MixtureShape shape;
  shape.num_classes = classes;
  shape.num_domains = domains;
  return sample_dataset(make_mixture_spec(shape, 1), per_cell, 2);
}

TEST(PkDomainSampler, DomainClassBatchesAreAlwaysFeasible) {
  const Dataset ds = grid_dataset(4, 3, 50);
  PkDomainSampler sampler(ds, 4, 6, MiningPolicy::domain_class, 3);
  std::size_t infeasible = 0;
  for (int b = 0; b < 10000; ++b) {
    if (b % sampler.batches_per_epoch() == 0) sampler.begin_epoch();
    const auto idx = sampler.next_batch();
    ASSERT_EQ(idx.size(), 24u);
    const Dataset batch = ds.subset(idx);
    infeasible += batch_feasibility_report(batch.class_ids, batch.domain_ids).infeasible;
    EXPECT_EQ(std::set<int>(batch.class_ids.begin(), batch.class_ids.end()).size(), 4u);
  }
  EXPECT_EQ(infeasible, 0u);
}

TEST(PkDomainSampler, StandardPolicyIsPlainPxK) {
  const Dataset ds = grid_dataset(4, 3, 20);
  PkDomainSampler sampler(ds, 3, 5, MiningPolicy::standard, 4);
  for (int b = 0; b < 200; ++b) {
    const Dataset batch = ds.subset(sampler.next_batch());
    std::map<int, int> per_class;
    for (int c : batch.class_ids) ++per_class[c];
    EXPECT_EQ(per_class.size(), 3u);
    for (const auto& [c, count] : per_class) EXPECT_EQ(count, 5);
  }
}

TEST(PkDomainSampler, SameSeedSameBatches) {
  const Dataset ds = grid_dataset(4, 3, 20);
  PkDomainSampler a(ds, 4, 6, MiningPolicy::domain_class, 9);
  PkDomainSampler b(ds, 4, 6, MiningPolicy::domain_class, 9);
  PkDomainSampler c(ds, 4, 6, MiningPolicy::domain_class, 10);
  bool differs = false;
  for (int i = 0; i < 50; ++i) {
    const auto x = a.next_batch();
    EXPECT_EQ(x, b.next_batch());
    differs = differs || x != c.next_batch();
  }
  EXPECT_TRUE(differs);
}

TEST(PkDomainSampler, InfeasibleInputsAreReported) {
  const Dataset one_domain = grid_dataset(4, 1, 10);
  EXPECT_EQ(test::error_kind([&] { PkDomainSampler(one_domain, 2, 2, MiningPolicy::domain_class, 1); }),
            "infeasible_sampling");
  EXPECT_EQ(test::error_kind([&] { PkDomainSampler(one_domain, 2, 2, MiningPolicy::standard, 1); }), "");
  EXPECT_EQ(test::error_kind([&] { PkDomainSampler(one_domain, 5, 2, MiningPolicy::standard, 1); }),
            "infeasible_sampling");
  EXPECT_EQ(test::error_kind([&] { PkDomainSampler(one_domain, 1, 2, MiningPolicy::standard, 1); }),
            "invalid_config");
}

// Training ---------------------------------------------------------------------

TEST(Trainer, CrossEntropyAloneFitsTheSourceDomains) {
  // At sigma = 0.3 classifying by the true cell means scores ~0.97, so the
  // bar measures fitting rather than memorisation of noisy samples.
  TrainConfig base;
  base.mixture.noise_sigma = 0.3;
  TrainConfig cfg = ablation_configs(base)[0].config;  // CE row
  cfg.epochs = 50;
  cfg.eval_every = 50;
  EXPECT_GT(train(cfg).final_eval.source_accuracy, 0.95);
}

TEST(Trainer, ZeroLearningRateLeavesWeightsUntouched) {
  TrainConfig cfg = small_config();
  cfg.optimizer.lr = 0.0;
  cfg.eval_every = 1;
  const auto trained = train_model(cfg);
  ModelParams initial = init_model_for(cfg);
  ModelParams after = trained.params;
  after.bn.running_mean = initial.bn.running_mean;
  after.bn.running_var = initial.bn.running_var;
  EXPECT_EQ(after, initial);
  for (const auto& rec : trained.report.epochs) {
    ASSERT_TRUE(rec.eval.has_value());
    EXPECT_EQ(rec.eval->probe_total, trained.report.epochs.front().eval->probe_total);
  }
}

TEST(Trainer, RunsAreBitIdentical) {
  TrainConfig cfg = small_config();
  cfg.held_out_domain = 1;
  const auto a = train_model(cfg);
  const auto b = train_model(cfg);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(to_json(a.report).dump(), to_json(b.report).dump());
  cfg.seed += 1;
  EXPECT_NE(train_model(cfg).params, a.params);
}

TEST(Trainer, EvaluatesOnSchedule) {
  TrainConfig cfg = small_config();
  cfg.epochs = 7;
  const auto rep = train(cfg);
  ASSERT_EQ(rep.epochs.size(), 7u);
  for (const auto& rec : rep.epochs) {
    EXPECT_EQ(rec.eval.has_value(), rec.epoch % 3 == 0 || rec.epoch == 7) << rec.epoch;
    EXPECT_TRUE(std::isfinite(rec.total_loss));
  }
  EXPECT_FALSE(rep.final_eval.held_out_accuracy.has_value());
}

TEST(Trainer, HeldOutDomainIsExcludedFromTraining) {
  TrainConfig cfg = small_config();
  cfg.held_out_domain = 0;
  const RunData rd = make_run_data(cfg);
  for (int d : rd.train.domain_ids) EXPECT_NE(d, 0);
  for (int d : rd.probe.domain_ids) EXPECT_NE(d, 0);
  for (int d : rd.target.domain_ids) EXPECT_EQ(d, 0);
  EXPECT_EQ(rd.train.size() + rd.target.size(), rd.all.size());
}

// Experiments ------------------------------------------------------------------

TEST(Experiments, LeaveOneDomainOutStructure) {
  const TrainConfig cfg = small_config();
  const auto s = leave_one_domain_out(cfg);
  ASSERT_EQ(s.runs.size(), 6u);
  ASSERT_EQ(s.per_domain_accuracy.size(), 3u);
  double sum = 0.0;
  for (const auto& r : s.runs) {
    EXPECT_EQ(r.seed, cfg.seed + r.trial);
    EXPECT_GE(r.held_out_accuracy, 0.0);
    EXPECT_LE(r.held_out_accuracy, 1.0);
    sum += r.held_out_accuracy;
  }
  EXPECT_NEAR(s.mean_accuracy, sum / 6.0, 1e-12);
  std::set<int> held;
  for (const auto& r : s.runs) held.insert(r.held_out_domain);
  EXPECT_EQ(held, (std::set<int>{0, 1, 2}));
}

TEST(Experiments, AblationGridHasNineFiniteRows) {
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  cfg.trial_seeds = 1;
  const auto table = ablation_grid(cfg);
  ASSERT_EQ(table.size(), 9u);
  for (const auto& row : table) {
    EXPECT_TRUE(std::isfinite(row.summary.mean_accuracy)) << row.name;
    EXPECT_TRUE(std::isfinite(row.summary.mean_dispersion.domain_silhouette)) << row.name;
  }
  // the CE row is exactly a direct CE-only run
  TrainConfig direct = ablation_configs(cfg)[0].config;
  direct.held_out_domain = 0;
  EXPECT_EQ(*train(direct).final_eval.held_out_accuracy, table[0].summary.runs[0].held_out_accuracy);
  EXPECT_EQ(table[0].name, "CE");
}

TEST(Experiments, MarginSweepKeepsEverythingButTheMargin) {
  TrainConfig cfg = small_config();
  cfg.epochs = 2;
  cfg.trial_seeds = 1;
  const auto table = margin_sweep(cfg, {0.0, 1.0});
  ASSERT_EQ(table.size(), 2u);
  EXPECT_EQ(table[0].summary.loss.margin, 0.0);
  EXPECT_EQ(table[1].summary.loss.margin, 1.0);
  EXPECT_EQ(table[1].summary.loss.use_bn, cfg.loss.use_bn);
}

TEST(Experiments, MotivationShowsDomainDominanceBeforeTraining) {
  TrainConfig cfg;
  cfg.trial_seeds = 1;
  const auto m = motivate(cfg);
  EXPECT_GT(m.dominance.ratio, 1.0);
  ASSERT_EQ(m.domain_scale_sweep.size(), 4u);
  EXPECT_GT(m.untrained_mean.domain_knn_purity, m.untrained_mean.class_knn_purity);
}

// CSV / JSON -------------------------------------------------------------------

TEST(Io, LabeledCsvRoundTripIsBitExact) {
  const Dataset ds = grid_dataset(3, 2, 4);
  std::stringstream buf;
  write_labeled_csv(buf, ds, "f");
  const std::string text = buf.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "class_id,domain_id,f0,f1,f2,f3,f4,f5,f6,f7,f8,f9,f10,f11,f12,f13,f14,f15");
  EXPECT_EQ(read_labeled_csv(buf), ds);
}

TEST(Io, MalformedCsvIsRejected) {
  auto kind = [](const char* text) {
    std::stringstream in(text);
    return test::error_kind([&] { read_labeled_csv(in); });
  };
  EXPECT_EQ(kind(""), "invalid_csv");
  EXPECT_EQ(kind("label,domain_id,f0\n"), "invalid_csv");
  EXPECT_EQ(kind("class_id,domain_id,f0\n0,1\n"), "invalid_csv");
  EXPECT_EQ(kind("class_id,domain_id,f0\n0,1,abc\n"), "invalid_csv");
  EXPECT_EQ(kind("class_id,domain_id,f0\n0,1,2.5\n"), "");
}

TEST(Io, ExportedEmbeddingsReproduceTheDispersionReport) {
  TrainConfig cfg = small_config();
  const auto trained = train_model(cfg);
  const Dataset emb = embed_dataset(trained.params, trained.data.probe, cfg.loss);
  std::stringstream buf;
  write_labeled_csv(buf, emb, "e");
  const Dataset back = read_labeled_csv(buf);
  EXPECT_EQ(dispersion_report(back.features, back.class_ids, back.domain_ids, cfg.knn_k),
            trained.report.final_eval.dispersion);
  const auto j = to_json(trained.report.final_eval.dispersion);
  EXPECT_EQ(dispersion_from_json(json::parse(j.dump())), trained.report.final_eval.dispersion);
}

TEST(Io, UntrainedEmbeddingsClusterByDomain) {
  TrainConfig cfg;
  cfg.seed = 3;
  const RunData rd = make_run_data(cfg);
  const Dataset emb = embed_dataset(init_model_for(cfg), rd.all, cfg.loss);
  const auto r = dispersion_report(emb.features, emb.class_ids, emb.domain_ids, cfg.knn_k);
  EXPECT_GT(r.domain_knn_purity, r.class_knn_purity);
}

}  // namespace
}  // namespace dct
