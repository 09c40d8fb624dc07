#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoloc/checkpoint.hpp"
#include "geoloc/config.hpp"
#include "geoloc/corpus.hpp"
#include "geoloc/error.hpp"
#include "geoloc/geo.hpp"
#include "geoloc/pipeline.hpp"
#include "geoloc/report.hpp"
#include "geoloc/synthetic.hpp"

// The CLI verbs as plain functions. Each returns the process exit code or
// throws; run_guarded() maps exceptions to exit codes.
namespace geoloc {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

struct CommandIO {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

inline int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitOther;
  }
}

namespace detail {

namespace fs = std::filesystem;

inline void require_file(const std::string& path, const std::string& field) {
  if (path.empty()) throw ConfigError(field + " is required");
  if (!fs::is_regular_file(path)) throw ConfigError(field + ": file not found: " + path);
}

inline fs::path prepare_out_dir(const std::string& dir) {
  if (dir.empty()) throw ConfigError("paths.out (or --out) is required");
  fs::create_directories(dir);
  return fs::path(dir);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

inline void write_corpus_file(const fs::path& path, const Corpus& c) {
  std::ostringstream os;
  write_jsonl(c, os);
  write_text(path, os.str());
}

inline Corpus load_for(const std::string& path, const std::string& format, const std::vector<std::string>& keywords,
                       std::ostream& err) {
  LoadReport rep = load_corpus(path, parse_corpus_format(format), keywords);
  if (rep.dropped_empty) err << path << ": " << rep.dropped_empty << " dropped (empty text)\n";
  if (rep.dropped_keyword) err << path << ": " << rep.dropped_keyword << " dropped (no keyword match)\n";
  return std::move(rep.corpus);
}

inline std::string history_jsonl(const std::vector<HistoryEntry>& history) {
  std::ostringstream os;
  for (const auto& h : history) {
    os << nlohmann::json{{"epoch", h.epoch}, {"split", h.split}, {"metric", h.metric}, {"value", h.value}}.dump() << '\n';
  }
  return os.str();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// gen-data

inline int cmd_gen_data(RunConfig cfg, const std::string& out_dir, CommandIO io = {}) {
  cfg.apply_seed(cfg.require_seed());
  cfg.synthetic.validate();
  const auto dir = detail::prepare_out_dir(out_dir);
  const SyntheticCorpus sc = generate_synthetic_detailed(cfg.synthetic);
  detail::write_corpus_file(dir / "corpus.jsonl", sc.corpus);
  detail::write_text(dir / "regions_zipcode.geojson",
                     regions_to_json(synthetic_regions(cfg.synthetic, LabelKind::zipcode)).dump(1) + "\n");
  detail::write_text(dir / "regions_neighborhood.geojson",
                     regions_to_json(synthetic_regions(cfg.synthetic, LabelKind::neighborhood)).dump(1) + "\n");
  if (cfg.write_embeddings) {
    std::ostringstream os;
    write_synthetic_embeddings(cfg.synthetic, cfg.synthetic_embeddings, os);
    detail::write_text(dir / "embeddings.txt", os.str());
  }
  const nlohmann::json summary = {{"records", sc.corpus.size()},
                                  {"users", cfg.synthetic.num_users},
                                  {"regions", cfg.synthetic.num_regions},
                                  {"home_region_fraction", sc.home_fraction()},
                                  {"seed", *cfg.seed}};
  detail::write_text(dir / "summary.json", summary.dump(1) + "\n");
  io.out << "records " << sc.corpus.size() << ", users " << cfg.synthetic.num_users << ", regions "
         << cfg.synthetic.num_regions << ", home-region fraction " << std::fixed << std::setprecision(4)
         << sc.home_fraction() << '\n';
  io.out.unsetf(std::ios::fixed);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct RunData {
  Corpus train, valid, test;
};

// Loads the corpus (splitting it when explicit split files are absent).
inline RunData load_run_data(const RunConfig& cfg, std::ostream& err) {
  std::vector<std::string> keywords;
  if (!cfg.paths.keywords.empty()) {
    detail::require_file(cfg.paths.keywords, "paths.keywords");
    keywords = load_keyword_list(cfg.paths.keywords);
  }
  RunData d;
  if (!cfg.paths.train.empty()) {
    detail::require_file(cfg.paths.train, "paths.train");
    if (!cfg.paths.valid.empty()) detail::require_file(cfg.paths.valid, "paths.valid");
    if (!cfg.paths.test.empty()) detail::require_file(cfg.paths.test, "paths.test");
    d.train = detail::load_for(cfg.paths.train, cfg.paths.format, keywords, err);
    if (!cfg.paths.valid.empty()) d.valid = detail::load_for(cfg.paths.valid, cfg.paths.format, keywords, err);
    if (!cfg.paths.test.empty()) d.test = detail::load_for(cfg.paths.test, cfg.paths.format, keywords, err);
    return d;
  }
  detail::require_file(cfg.paths.corpus, "paths.corpus");
  const Corpus all = detail::load_for(cfg.paths.corpus, cfg.paths.format, keywords, err);
  Splits s = split(all, cfg.split, cfg.require_seed(), cfg.stratify);
  d.train = std::move(s.train);
  d.valid = std::move(s.valid);
  d.test = std::move(s.test);
  return d;
}

inline void validate_run(const RunConfig& cfg) {
  cfg.require_seed();
  cfg.model.validate();
  parse_corpus_format(cfg.paths.format);
  if (cfg.model.variant == Variant::mh_c) detail::require_file(cfg.paths.embeddings, "paths.embeddings");
  if (!cfg.paths.stopwords.empty()) detail::require_file(cfg.paths.stopwords, "paths.stopwords");
}

inline TrainOptions train_options(const RunConfig& cfg, std::ostream& err) {
  TrainOptions opts;
  if (!cfg.paths.embeddings.empty()) opts.embeddings_path = cfg.paths.embeddings;
  if (!cfg.paths.stopwords.empty()) opts.stopwords = load_stopwords(cfg.paths.stopwords);
  opts.log = [&err](const std::string& msg) { err << msg << '\n'; };
  return opts;
}

inline MetricsReport evaluate_splits(TrainedModel& m, const std::vector<std::pair<std::string, const Corpus*>>& splits) {
  MetricsReport rep;
  rep.config = m.config();
  for (const auto& [name, corpus] : splits) {
    if (!corpus->empty()) rep.splits.push_back(evaluate(m, *corpus, name));
  }
  return rep;
}

inline void write_report(const std::filesystem::path& dir, const MetricsReport& rep) {
  detail::write_text(dir / "report.json", to_json(rep).dump(1) + "\n");
  detail::write_text(dir / "report.txt", report_to_table(rep));
}

inline int cmd_train(RunConfig cfg, CommandIO io = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.apply_seed(cfg.require_seed());
  validate_run(cfg);
  const auto dir = detail::prepare_out_dir(cfg.paths.out);
  RunData data = load_run_data(cfg, io.err);
  TrainData used;
  TrainedModel m = train(data.train, data.valid, cfg.model, train_options(cfg, io.err), &used);

  detail::write_corpus_file(dir / "train.jsonl", used.train);
  detail::write_corpus_file(dir / "valid.jsonl", used.valid);
  detail::write_corpus_file(dir / "test.jsonl", data.test);
  save_checkpoint(m, (dir / "checkpoint.json").string());
  detail::write_text(dir / "history.jsonl", detail::history_jsonl(m.history));

  const MetricsReport rep =
      evaluate_splits(m, {{"train", &used.train}, {"valid", &used.valid}, {"test", &data.test}});
  for (const auto& s : rep.splits)
    for (const auto& w : s.warnings) io.err << "warning (" << s.split << "): " << w << '\n';
  write_report(dir, rep);
  if (cfg.model.task == Task::coords && !used.valid.empty()) {
    export_geojson(predict(m, used.valid), (dir / "predictions_valid.geojson").string());
  }
  io.out << report_to_table(rep);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  detail::write_text(dir / "timing.json", nlohmann::json{{"wall_clock_seconds", secs}}.dump() + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string corpus;
  std::string format = "jsonl";
  std::string regions;  // optional: labels records that lack one
  std::string out;      // optional output directory
};

// Fills missing labels of the task's kind by point-in-polygon lookup.
inline Corpus label_with_regions(const Corpus& c, const RegionSet& regions) {
  std::vector<TweetRecord> records(c.records());
  for (auto& r : records) {
    if (!r.has_point() || r.label(regions.kind)) continue;
    if (auto label = assign_region(r.point(), regions)) r.label(regions.kind) = *label;
  }
  return Corpus(std::move(records));
}

inline int cmd_eval(const EvalArgs& args, CommandIO io = {}) {
  detail::require_file(args.checkpoint, "checkpoint");
  detail::require_file(args.corpus, "corpus");
  if (!args.regions.empty()) detail::require_file(args.regions, "regions");
  TrainedModel m = load_checkpoint(args.checkpoint);
  Corpus corpus = detail::load_for(args.corpus, args.format, {}, io.err);
  if (!args.regions.empty()) corpus = label_with_regions(corpus, load_regions(args.regions));
  MetricsReport rep;
  rep.config = m.config();
  rep.splits.push_back(evaluate(m, corpus, "eval"));
  for (const auto& w : rep.splits.front().warnings) io.err << "warning: " << w << '\n';
  if (!args.out.empty()) {
    const auto dir = detail::prepare_out_dir(args.out);
    write_report(dir, rep);
    if (m.config().task == Task::coords) export_geojson(predict(m, corpus), (dir / "predictions.geojson").string());
  }
  io.out << report_to_table(rep);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// predict

inline nlohmann::json prediction_row(const Prediction& p, const std::vector<std::string>& labels) {
  nlohmann::json row = {{"id", p.id}};
  if (p.predicted_label) {
    row["label"] = *p.predicted_label;
    row["probability"] = p.probability;
    nlohmann::json dist = nlohmann::json::object();
    for (std::size_t i = 0; i < labels.size(); ++i) dist[labels[i]] = p.distribution[i];
    row["distribution"] = dist;
  }
  if (p.predicted_point) {
    row["lon"] = p.predicted_point->lon;
    row["lat"] = p.predicted_point->lat;
  }
  return row;
}

inline int cmd_predict(const std::string& checkpoint, const std::string& input, const std::string& format,
                       const std::string& out_path, CommandIO io = {}) {
  detail::require_file(checkpoint, "checkpoint");
  detail::require_file(input, "input");
  if (out_path.empty()) throw ConfigError("--out is required");
  TrainedModel m = load_checkpoint(checkpoint);
  const Corpus tweets = detail::load_for(input, format, {}, io.err);
  const PredictionSet preds = predict(m, tweets);
  std::ostringstream os;
  for (const auto& p : preds.entries) os << prediction_row(p, preds.labels).dump() << '\n';
  if (auto parent = std::filesystem::path(out_path).parent_path(); !parent.empty()) {
    std::filesystem::create_directories(parent);
  }
  detail::write_text(out_path, os.str());
  io.out << preds.entries.size() << " predictions written to " << out_path << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  double value = 0.0;
  double accuracy = 0.0;
  double loss = 0.0;
};

struct AblationResult {
  std::string study;
  std::vector<AblationRow> rows;  // sorted by value
  std::size_t argmax = 0;         // row with the highest validation accuracy (first on ties)

  std::string csv() const {
    std::ostringstream os;
    os << "value,valid_accuracy,valid_loss\n" << std::setprecision(10);
    for (const auto& r : rows) os << r.value << ',' << r.accuracy << ',' << r.loss << '\n';
    return os.str();
  }
};

inline const std::vector<std::string>& ablation_studies() {
  static const std::vector<std::string> s{"user_dict_frac", "time_window", "num_clusters", "cluster_embedding"};
  return s;
}

// Trains one model per grid value with the same seed and splits.
// cluster_embedding compares MH_C (value 1) with plain MH (value 0).
inline AblationResult run_ablation(RunConfig cfg, const std::string& study, std::vector<double> grid, CommandIO io = {}) {
  if (std::find(ablation_studies().begin(), ablation_studies().end(), study) == ablation_studies().end()) {
    throw ConfigError("unknown ablation study '" + study + "'");
  }
  if (study == "cluster_embedding" && grid.empty()) grid = {0.0, 1.0};
  if (grid.empty()) throw ConfigError("ablation grid is empty");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  cfg.apply_seed(cfg.require_seed());
  if (cfg.model.task == Task::coords) throw ConfigError("ablation studies need a classification task");

  if (study == "user_dict_frac" || study == "time_window") cfg.model.variant = Variant::mh_u;
  if (study == "num_clusters" || study == "cluster_embedding") cfg.model.variant = Variant::mh_c;
  for (double v : grid) {
    if (study == "num_clusters" && (v < 1 || v != std::floor(v))) throw ConfigError("num_clusters grid needs integers >= 1");
    if ((study == "user_dict_frac" || study == "time_window") && !(v >= 0.0 && v <= 1.0)) {
      throw ConfigError(study + " grid values must be in [0, 1]");
    }
    if (study == "cluster_embedding" && v != 0.0 && v != 1.0) throw ConfigError("cluster_embedding grid is {0, 1}");
  }
  validate_run(cfg);
  const RunData data = load_run_data(cfg, io.err);
  if (data.valid.empty()) throw ConfigError("ablation needs a non-empty validation split");

  double span_hours = 0.0;
  if (!data.train.empty()) {
    auto [lo, hi] = std::minmax_element(data.train.begin(), data.train.end(),
                                        [](const TweetRecord& a, const TweetRecord& b) { return a.created_at < b.created_at; });
    span_hours = static_cast<double>(hi->created_at - lo->created_at) / 3600.0;
  }

  AblationResult res;
  res.study = study;
  for (double v : grid) {
    ModelConfig mc = cfg.model;
    if (study == "user_dict_frac") mc.augment.sample_frac = v;
    if (study == "time_window") mc.augment.time_window_hours = v * span_hours;
    if (study == "num_clusters") mc.augment.num_clusters = static_cast<std::size_t>(v);
    if (study == "cluster_embedding" && v == 0.0) mc.variant = Variant::mh;
    TrainOptions opts = train_options(cfg, io.err);
    opts.validate_each_epoch = false;
    TrainData used;
    TrainedModel m = train(data.train, data.valid, mc, opts, &used);
    const SplitMetrics vm = evaluate(m, used.valid, "valid");
    res.rows.push_back({v, vm.accuracy.value_or(0.0), vm.loss});
    io.err << study << '=' << v << " valid_acc=" << vm.accuracy.value_or(0.0) << " valid_loss=" << vm.loss << '\n';
  }
  for (std::size_t i = 1; i < res.rows.size(); ++i) {
    if (res.rows[i].accuracy > res.rows[res.argmax].accuracy) res.argmax = i;
  }
  return res;
}

inline int cmd_ablate(const RunConfig& cfg, const std::string& study, const std::vector<double>& grid, CommandIO io = {}) {
  const AblationResult res = run_ablation(cfg, study, grid, io);
  const auto dir = detail::prepare_out_dir(cfg.paths.out);
  detail::write_text(dir / ("ablation_" + study + ".csv"), res.csv());
  std::ostringstream summary;
  summary << study << ": best value " << res.rows[res.argmax].value << " (valid accuracy "
          << res.rows[res.argmax].accuracy << ")\n";
  detail::write_text(dir / ("ablation_" + study + ".txt"), res.csv() + summary.str());
  io.out << res.csv() << summary.str();
  return kExitOk;
}

}  // namespace geoloc
