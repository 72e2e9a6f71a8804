#pragma once

// CSV for tabular data (datasets, embeddings, result tables) and JSON for
// nested reports. Reals are written with 17 significant digits so that a
// write/read cycle reproduces every double exactly.

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dct/config.hpp"
#include "dct/domain_model.hpp"
#include "dct/experiments.hpp"
#include "dct/metrics.hpp"
#include "dct/trainer.hpp"
#include "json.hpp"

namespace dct {

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// `class_id,domain_id,<prefix>0,...` followed by one row per sample.
inline void write_labeled_csv(std::ostream& out, const Dataset& ds, const std::string& prefix) {
  ds.validate();
  out << "class_id,domain_id";
  for (std::size_t k = 0; k < ds.dim(); ++k) out << ',' << prefix << k;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.class_ids[i] << ',' << ds.domain_ids[i];
    for (double v : ds.features.row(i)) out << ',' << format_real(v);
    out << '\n';
  }
}

inline void write_labeled_csv(const std::string& path, const Dataset& ds, const std::string& prefix) {
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write '" + path + "'");
  write_labeled_csv(out, ds, prefix);
}

inline Dataset read_labeled_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error("invalid_csv", "missing header row");
  std::size_t cols = 0;
  {
    std::stringstream hs(line);
    std::string cell;
    std::vector<std::string> header;
    while (std::getline(hs, cell, ',')) header.push_back(cell);
    if (header.size() < 3 || header[0] != "class_id" || header[1] != "domain_id") {
      throw Error("invalid_csv", "header must start with class_id,domain_id and name >= 1 feature");
    }
    cols = header.size() - 2;
  }
  std::vector<double> values;
  Dataset ds;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != cols + 2) {
      throw Error("invalid_csv", "line " + std::to_string(line_no) + " has " +
                                     std::to_string(cells.size()) + " fields, expected " +
                                     std::to_string(cols + 2));
    }
    auto parse = [&](const std::string& s) {
      errno = 0;
      char* end = nullptr;
      const double v = std::strtod(s.c_str(), &end);
      if (end == s.c_str() || *end != '\0' || errno == ERANGE) {
        throw Error("invalid_csv", "line " + std::to_string(line_no) + ": bad number '" + s + "'");
      }
      return v;
    };
    ds.class_ids.push_back(static_cast<int>(parse(cells[0])));
    ds.domain_ids.push_back(static_cast<int>(parse(cells[1])));
    for (std::size_t k = 0; k < cols; ++k) values.push_back(parse(cells[k + 2]));
  }
  ds.features = Matrix(ds.class_ids.size(), cols, std::move(values));
  return ds;
}

inline Dataset read_labeled_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("io_error", "cannot open '" + path + "'");
  return read_labeled_csv(in);
}

/// Eval-mode triplet-path embeddings of `ds`, labels carried over.
inline Dataset embed_dataset(const ModelParams& params, const Dataset& ds, const LossConfig& cfg) {
  return Dataset{embed(params, ds.features, cfg), ds.class_ids, ds.domain_ids};
}

inline void export_embeddings(const ModelParams& params, const LossConfig& cfg, const Dataset& ds,
                              const std::string& path) {
  write_labeled_csv(path, embed_dataset(params, ds, cfg), "e");
}

// ---------------------------------------------------------------------------
// JSON reports.

inline json to_json(const DispersionReport& r) {
  return json{{"class_silhouette", r.class_silhouette},
              {"domain_silhouette", r.domain_silhouette},
              {"class_knn_purity", r.class_knn_purity},
              {"domain_knn_purity", r.domain_knn_purity},
              {"k", r.k}};
}

inline DispersionReport dispersion_from_json(const json& j) {
  DispersionReport r;
  r.class_silhouette = j.at("class_silhouette").get<double>();
  r.domain_silhouette = j.at("domain_silhouette").get<double>();
  r.class_knn_purity = j.at("class_knn_purity").get<double>();
  r.domain_knn_purity = j.at("domain_knn_purity").get<double>();
  r.k = j.at("k").get<std::size_t>();
  return r;
}

inline json to_json(const EvalSnapshot& s) {
  return json{{"dispersion", to_json(s.dispersion)},
              {"source_accuracy", s.source_accuracy},
              {"held_out_accuracy", s.held_out_accuracy ? json(*s.held_out_accuracy) : json(nullptr)},
              {"probe_total_loss", s.probe_total},
              {"probe_ce_loss", s.probe_ce},
              {"probe_dct_loss", s.probe_dct}};
}

inline json to_json(const RunReport& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    json row{{"epoch", e.epoch},
             {"total_loss", e.total_loss},
             {"ce_loss", e.ce_loss},
             {"dct_loss", e.dct_loss},
             {"active_fraction", e.active_fraction}};
    if (e.eval) row["eval"] = to_json(*e.eval);
    epochs.push_back(std::move(row));
  }
  return json{{"config", to_json(r.config)},
              {"seed", r.config.seed},
              {"epochs", std::move(epochs)},
              {"final", to_json(r.final_eval)}};
}

inline json to_json(const DominanceReport& r) {
  return json{{"d_domain", r.d_domain},
              {"d_class", r.d_class},
              {"ratio", r.ratio},
              {"moment", r.moment},
              {"proxy", "mean pairwise sliced 1-D Wasserstein between conditionals"}};
}

inline json to_json(const LodoSummary& s) {
  json runs = json::array();
  for (const auto& r : s.runs) {
    runs.push_back(json{{"held_out_domain", r.held_out_domain},
                        {"trial", r.trial},
                        {"seed", r.seed},
                        {"held_out_accuracy", r.held_out_accuracy},
                        {"source_accuracy", r.source_accuracy},
                        {"dispersion", to_json(r.dispersion)}});
  }
  return json{{"loss", to_json(s.loss)},
              {"runs", std::move(runs)},
              {"per_domain_accuracy", s.per_domain_accuracy},
              {"mean_accuracy", s.mean_accuracy},
              {"mean_source_accuracy", s.mean_source_accuracy},
              {"mean_dispersion", to_json(s.mean_dispersion)}};
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// CSV result tables.

inline std::string summary_csv_header(std::size_t num_domains) {
  std::string h = "mean_accuracy";
  for (std::size_t d = 0; d < num_domains; ++d) h += ",acc_domain" + std::to_string(d);
  h += ",mean_source_accuracy,class_silhouette,domain_silhouette,class_knn_purity,domain_knn_purity";
  return h;
}

inline std::string summary_csv_fields(const LodoSummary& s) {
  std::string row = format_real(s.mean_accuracy);
  for (double a : s.per_domain_accuracy) row += "," + format_real(a);
  row += "," + format_real(s.mean_source_accuracy);
  row += "," + format_real(s.mean_dispersion.class_silhouette);
  row += "," + format_real(s.mean_dispersion.domain_silhouette);
  row += "," + format_real(s.mean_dispersion.class_knn_purity);
  row += "," + format_real(s.mean_dispersion.domain_knn_purity);
  return row;
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& table,
                               std::size_t num_domains) {
  out << "group,name,policy,use_bn,use_fn,classifier_input,dct_weight,margin,"
      << summary_csv_header(num_domains) << '\n';
  for (const auto& row : table) {
    const auto& l = row.summary.loss;
    out << row.group << ',' << row.name << ',' << to_string(l.policy) << ',' << l.use_bn << ','
        << l.use_fn << ',' << to_string(l.classifier_input) << ',' << format_real(l.dct_weight)
        << ',' << format_real(l.margin) << ',' << summary_csv_fields(row.summary) << '\n';
  }
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& table,
                            std::size_t num_domains) {
  out << "margin,use_bn,use_fn," << summary_csv_header(num_domains) << '\n';
  for (const auto& row : table) {
    out << format_real(row.margin) << ',' << row.summary.loss.use_bn << ','
        << row.summary.loss.use_fn << ',' << summary_csv_fields(row.summary) << '\n';
  }
}

inline void write_lodo_csv(std::ostream& out, const LodoSummary& s) {
  out << "held_out_domain,trial,seed,held_out_accuracy,source_accuracy,class_silhouette,"
         "domain_silhouette,class_knn_purity,domain_knn_purity\n";
  for (const auto& r : s.runs) {
    out << r.held_out_domain << ',' << r.trial << ',' << r.seed << ','
        << format_real(r.held_out_accuracy) << ',' << format_real(r.source_accuracy) << ','
        << format_real(r.dispersion.class_silhouette) << ','
        << format_real(r.dispersion.domain_silhouette) << ','
        << format_real(r.dispersion.class_knn_purity) << ','
        << format_real(r.dispersion.domain_knn_purity) << '\n';
  }
}

template <typename Writer>
void write_text_file(const std::string& path, Writer&& writer) {
  std::ofstream out(path);
  if (!out) throw Error("io_error", "cannot write '" + path + "'");
  writer(out);
}

}  // namespace dct
