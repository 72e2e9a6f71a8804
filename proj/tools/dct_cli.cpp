// Command-line front end: train, lodo, ablate, sweep, motivate, gradcheck,
// export. Every subcommand writes its results under --out and exits 0; on
// failure a single JSON object {"error": kind, "message": text} goes to stderr
// and the exit code is nonzero.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "dct/config.hpp"
#include "dct/domain_model.hpp"
#include "dct/experiments.hpp"
#include "dct/gradcheck.hpp"
#include "dct/io.hpp"
#include "dct/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using dct::json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

dct::TrainConfig resolve_config(const CommonArgs& args) {
  dct::TrainConfig cfg = args.config_path.empty() ? dct::TrainConfig{}
                                                  : dct::load_train_config(args.config_path);
  if (args.seed) cfg.seed = *args.seed;
  if (!args.out_dir.empty()) cfg.output_dir = args.out_dir;
  cfg.validate();
  std::error_code ec;
  fs::create_directories(cfg.output_dir, ec);
  if (ec) throw dct::Error("io_error", "cannot create output directory '" + cfg.output_dir + "'");
  return cfg;
}

std::string out_path(const dct::TrainConfig& cfg, const std::string& name) {
  return (fs::path(cfg.output_dir) / name).string();
}

void print_error(const std::string& kind, const std::string& message) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
}

int cmd_train(const dct::TrainConfig& cfg) {
  const auto report = dct::train(cfg);
  dct::write_json(out_path(cfg, "run.json"), dct::to_json(report));
  std::cout << "wrote " << out_path(cfg, "run.json") << '\n';
  return 0;
}

int cmd_lodo(const dct::TrainConfig& cfg) {
  const auto summary = dct::leave_one_domain_out(cfg);
  dct::write_json(out_path(cfg, "lodo.json"), dct::to_json(summary));
  dct::write_text_file(out_path(cfg, "lodo.csv"),
                       [&](std::ostream& os) { dct::write_lodo_csv(os, summary); });
  std::cout << "mean held-out accuracy " << summary.mean_accuracy << '\n';
  return 0;
}

int cmd_ablate(const dct::TrainConfig& cfg) {
  const auto table = dct::ablation_grid(cfg);
  dct::write_text_file(out_path(cfg, "ablation.csv"), [&](std::ostream& os) {
    dct::write_ablation_csv(os, table, cfg.mixture.num_domains);
  });
  json rows = json::array();
  for (const auto& row : table) {
    rows.push_back(json{{"group", row.group}, {"name", row.name}, {"summary", dct::to_json(row.summary)}});
  }
  dct::write_json(out_path(cfg, "ablation.json"), rows);
  std::cout << "wrote " << table.size() << " ablation rows\n";
  return 0;
}

int cmd_sweep(const dct::TrainConfig& cfg) {
  const auto table = dct::margin_sweep(cfg, cfg.sweep_margins);
  dct::write_text_file(out_path(cfg, "sweep.csv"), [&](std::ostream& os) {
    dct::write_sweep_csv(os, table, cfg.mixture.num_domains);
  });
  std::cout << "wrote " << table.size() << " sweep rows\n";
  return 0;
}

int cmd_motivate(const dct::TrainConfig& cfg) {
  const auto m = dct::motivate(cfg);
  json sweep = json::array();
  for (const auto& [scale, rep] : m.domain_scale_sweep) {
    json row = dct::to_json(rep);
    row["domain_scale"] = scale;
    sweep.push_back(std::move(row));
  }
  json untrained = json::array();
  for (const auto& r : m.untrained) untrained.push_back(dct::to_json(r));
  dct::write_json(out_path(cfg, "motivate.json"),
                  json{{"dominance", dct::to_json(m.dominance)},
                       {"domain_scale_sweep", std::move(sweep)},
                       {"untrained_dispersion", std::move(untrained)},
                       {"untrained_dispersion_mean", dct::to_json(m.untrained_mean)}});
  std::cout << "d_A/d_B = " << m.dominance.ratio << ", untrained domain-class kNN purity gap = "
            << m.untrained_mean.domain_knn_purity - m.untrained_mean.class_knn_purity << '\n';
  return 0;
}

int cmd_gradcheck(const dct::TrainConfig& cfg) {
  const auto results = dct::gradcheck::run_all(100, cfg.seed);
  json ops = json::array();
  bool ok = true;
  for (const auto& r : results) {
    ops.push_back(json{{"op", r.op},
                       {"cases", r.cases},
                       {"rejected", r.rejected},
                       {"max_rel_error", r.max_rel_error},
                       {"tolerance", r.tolerance},
                       {"passed", r.passed}});
    ok = ok && r.passed;
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.op << " max_rel_error=" << r.max_rel_error << '\n';
  }
  dct::write_json(out_path(cfg, "gradcheck.json"),
                  json{{"step", dct::gradcheck::kStep}, {"ops", std::move(ops)}, {"passed", ok}});
  if (!ok) {
    print_error("gradcheck_failed", "at least one operation exceeded the finite-difference tolerance");
    return 1;
  }
  return 0;
}

int cmd_export(const dct::TrainConfig& cfg) {
  const auto trained = dct::train_model(cfg);
  const dct::Dataset emb = dct::embed_dataset(trained.params, trained.data.all, cfg.loss);
  dct::write_labeled_csv(out_path(cfg, "dataset.csv"), trained.data.all, "f");
  dct::write_labeled_csv(out_path(cfg, "embeddings.csv"), emb, "e");
  const auto report = dct::dispersion_report(emb.features, emb.class_ids, emb.domain_ids, cfg.knn_k);
  dct::write_json(out_path(cfg, "dispersion.json"), dct::to_json(report));
  dct::write_json(out_path(cfg, "run.json"), dct::to_json(trained.report));
  std::cout << "exported " << emb.size() << " embeddings\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Domain-class triplet loss toolkit"};
  app.require_subcommand(1, 1);
  CommonArgs args;
  auto add_common = [&args](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "JSON config file mirroring TrainConfig")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", args.seed, "base seed (overrides the config)");
    sub->add_option("--out", args.out_dir, "output directory (overrides the config)");
  };
  struct Entry {
    const char* name;
    const char* help;
    int (*run)(const dct::TrainConfig&);
  };
  const Entry entries[] = {
      {"train", "train one model and write run.json", cmd_train},
      {"lodo", "leave-one-domain-out over all domains and trial seeds", cmd_lodo},
      {"ablate", "component and normalization ablation grid", cmd_ablate},
      {"sweep", "margin sweep (config sweep_margins)", cmd_sweep},
      {"motivate", "domain dominance diagnostics and untrained-encoder dispersion", cmd_motivate},
      {"gradcheck", "finite-difference gradient suite", cmd_gradcheck},
      {"export", "train (epochs may be 0) and export raw embeddings as CSV", cmd_export},
  };
  for (const auto& e : entries) add_common(app.add_subcommand(e.name, e.help));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  try {
    const dct::TrainConfig cfg = resolve_config(args);
    for (const auto& e : entries) {
      if (app.got_subcommand(e.name)) return e.run(cfg);
    }
  } catch (const dct::Error& e) {
    print_error(e.kind(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal_error", e.what());
    return 1;
  }
  return 1;
}
