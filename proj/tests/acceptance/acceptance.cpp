// Acceptance run: one PASS/FAIL line per criterion. `--only N` runs a single one.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "../support/geo_oracles.hpp"
#include "../support/fixtures.hpp"
#include "../support/op_cases.hpp"
#include "../support/overfit.hpp"
#include "geoloc/geoloc.hpp"

using namespace geoloc;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;  // 0 means no limit
  std::function<Outcome()> run;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string fmt_sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("geoloc_accept_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

RunConfig acceptance_config(const std::string& name) {
  return load_run_config(std::string(GEOLOC_CONFIG_DIR) + "/acceptance/" + name);
}

// Generates the configured synthetic corpus and points the run at it.
RunConfig with_generated_data(RunConfig cfg, const std::string& tag) {
  const fs::path dir = scratch(tag);
  std::ostringstream sink;
  cmd_gen_data(cfg, dir.string(), {sink, sink});
  cfg.paths.corpus = (dir / "corpus.jsonl").string();
  cfg.paths.embeddings = (dir / "embeddings.txt").string();
  return cfg;
}

double valid_accuracy(const RunConfig& cfg, const ModelConfig& model) {
  std::ostringstream sink;
  RunData d = load_run_data(cfg, sink);
  TrainedModel m = train(d.train, d.valid, model, train_options(cfg, sink));
  return *evaluate(m, d.valid, "valid").accuracy;
}

// ---------------------------------------------------------------------------

Outcome gradient_checks() {
  auto cases = testing::make_op_cases();
  std::size_t checked = 0, skipped = 0;
  std::vector<std::string> failed;
  for (auto& c : cases) {
    const GradCheckReport r = testing::check_case(c);
    checked += r.checked;
    skipped += r.skipped;
    if (!r.passed || r.checked == 0) failed.push_back(c.name);
  }
  std::string detail = std::to_string(cases.size()) + " operators, " + std::to_string(checked) + " coordinates, " +
                       std::to_string(skipped) + " kinks skipped";
  for (const auto& f : failed) detail += "; failed " + f;
  return {failed.empty(), detail};
}

Outcome overfitting() {
  bool ok = true;
  std::string detail;
  for (Variant v : {Variant::word_cnn_reg, Variant::cch, Variant::cch_a, Variant::mh, Variant::mh_u, Variant::mh_c}) {
    const testing::OverfitResult r = testing::overfit(v);
    ok = ok && r.reached();
    detail += std::string(detail.empty() ? "" : ", ") + to_string(v) + " " +
              (r.reached() ? std::to_string(r.steps) + " steps" : "stalled at " + fmt(r.best / r.initial));
  }
  return {ok, detail};
}

// Multinomial logistic regression on bag-of-words counts, full-batch
// gradient descent. Independent of the library's tokenizer and autodiff.
double logistic_oracle_accuracy(const Corpus& train, const Corpus& valid) {
  std::map<std::string, std::size_t> vocab, labels;
  auto words = [](const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
  };
  for (const auto& r : train) {
    for (const auto& w : words(r.text)) vocab.emplace(w, vocab.size());
    labels.emplace(*r.zipcode, labels.size());
  }
  const std::size_t V = vocab.size() + 1, C = labels.size();
  auto features = [&](const TweetRecord& r) {
    std::vector<double> x(V, 0.0);
    x[V - 1] = 1.0;  // bias
    for (const auto& w : words(r.text)) {
      if (auto it = vocab.find(w); it != vocab.end()) x[it->second] += 1.0;
    }
    return x;
  };
  std::vector<std::vector<double>> X;
  std::vector<std::size_t> y;
  for (const auto& r : train) {
    X.push_back(features(r));
    y.push_back(labels.at(*r.zipcode));
  }
  std::vector<double> W(C * V, 0.0);
  auto scores = [&](const std::vector<double>& x) {
    std::vector<double> s(C, 0.0);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < V; ++j) s[c] += W[c * V + j] * x[j];
    return s;
  };
  const double lr = 0.5;
  for (int it = 0; it < 200; ++it) {
    std::vector<double> grad(C * V, 0.0);
    for (std::size_t i = 0; i < X.size(); ++i) {
      std::vector<double> s = scores(X[i]);
      const double mx = *std::max_element(s.begin(), s.end());
      double z = 0.0;
      for (double& v : s) z += (v = std::exp(v - mx));
      for (std::size_t c = 0; c < C; ++c) {
        const double g = s[c] / z - (c == y[i] ? 1.0 : 0.0);
        for (std::size_t j = 0; j < V; ++j) grad[c * V + j] += g * X[i][j];
      }
    }
    for (std::size_t k = 0; k < W.size(); ++k) W[k] -= lr * grad[k] / static_cast<double>(X.size());
  }
  std::size_t hits = 0;
  for (const auto& r : valid) {
    const std::vector<double> s = scores(features(r));
    const std::size_t best = static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
    auto it = labels.find(*r.zipcode);
    hits += it != labels.end() && it->second == best;
  }
  return static_cast<double>(hits) / static_cast<double>(valid.size());
}

Outcome separable_signal() {
  const RunConfig cfg = with_generated_data(acceptance_config("separable.toml"), "separable");
  std::ostringstream sink;
  RunData d = load_run_data(cfg, sink);
  const double oracle = logistic_oracle_accuracy(d.train, d.valid);
  std::string detail = std::to_string(d.train.size() + d.valid.size() + d.test.size()) + " tweets, oracle " + fmt(oracle);
  if (oracle < 0.95) return {false, detail + " (corpus not separable)"};
  if (cfg.model.epochs > 30) return {false, detail + "; more than 30 epochs configured"};
  TrainedModel m = train(d.train, d.valid, cfg.model, train_options(cfg, sink));
  const double acc = *evaluate(m, d.valid, "valid").accuracy;
  return {acc >= 0.95, detail + ", MH " + fmt(acc) + " after " + std::to_string(cfg.model.epochs) + " epochs"};
}

Outcome history_gain() {
  const RunConfig cfg = with_generated_data(acceptance_config("history_gain.toml"), "history");
  ModelConfig plain = cfg.model;
  plain.variant = Variant::mh;
  ModelConfig hist = cfg.model;
  hist.variant = Variant::mh_u;
  const double a = valid_accuracy(cfg, plain), b = valid_accuracy(cfg, hist);
  return {b - a >= 0.05, "MH " + fmt(a) + ", MH_U " + fmt(b) + ", gain " + fmt(100.0 * (b - a), 2) + " points"};
}

std::string rows_text(const AblationResult& r) {
  std::string s;
  for (const auto& row : r.rows) s += (s.empty() ? "" : " ") + fmt(row.value, 1) + ":" + fmt(row.accuracy, 3);
  return s;
}

Outcome cluster_sweep() {
  const RunConfig cfg = with_generated_data(acceptance_config("ablation.toml"), "clusters");
  std::vector<double> grid;
  for (int k = 1; k <= 15; k += 2) grid.push_back(k);
  std::ostringstream sink;
  const AblationResult r = run_ablation(cfg, "num_clusters", grid, {sink, sink});
  double best = 0.0;
  for (const auto& row : r.rows) best = std::max(best, row.accuracy);
  const bool ok = r.rows.front().accuracy < best && r.rows.back().accuracy < best;
  return {ok, rows_text(r)};
}

Outcome user_fraction() {
  const RunConfig cfg = with_generated_data(acceptance_config("ablation.toml"), "fraction");
  std::ostringstream sink;
  const AblationResult r = run_ablation(cfg, "user_dict_frac", {0.0, 0.5, 1.0}, {sink, sink});
  const bool ok = r.rows[0].accuracy < r.rows[1].accuracy && r.rows[0].accuracy < r.rows[2].accuracy;
  return {ok, rows_text(r)};
}

Outcome sampling_laws() {
  Rng rng(2024);
  std::size_t violations = 0;
  auto counts_of = [](const Corpus& c) {
    std::map<std::string, std::size_t> m;
    for (const auto& r : c) ++m[*r.zipcode];
    return m;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const auto counts = testing::random_counts(rng);
    const Corpus c = testing::labelled_corpus(counts);
    std::size_t n_max = 0, n_min = SIZE_MAX;
    for (const auto& [l, n] : counts) {
      n_max = std::max(n_max, n);
      n_min = std::min(n_min, n);
    }
    if (oversample(c, LabelKind::zipcode, 0.0, trial).records() != c.records()) ++violations;
    for (const auto& [l, n] : counts_of(oversample(c, LabelKind::zipcode, 1.0, trial))) violations += n != n_max;
    const auto balanced = counts_of(stratified_validation(c, LabelKind::zipcode, trial).corpus);
    violations += balanced.size() != counts.size();
    for (const auto& [l, n] : balanced) violations += n != n_min;
  }
  return {violations == 0, "1000 trials, " + std::to_string(violations) + " violations"};
}

Outcome geo_oracles() {
  Rng rng(99);
  std::size_t pip_points = 0, pip_mismatch = 0;
  for (int poly_i = 0; poly_i < 20; ++poly_i) {
    const Polygon poly = testing::random_star_polygon(rng, 0.0, 0.0, 5 + rng.index(20), poly_i % 2 == 1);
    for (int i = 0; i < 1000; ++i) {
      const GeoPoint p{rng.uniform(-1.6, 1.6), rng.uniform(-1.6, 1.6)};
      if (testing::distance_to_boundary(p, poly) < 1e-9) continue;
      ++pip_points;
      pip_mismatch += point_in_polygon(p, poly) != testing::winding_inside(p, poly);
    }
  }

  SyntheticSpec spec;
  spec.num_regions = 9;
  spec.grid_rows = 3;
  spec.grid_cols = 3;
  spec.num_users = 500;
  spec.posts_per_user = 20;
  spec.locality = 0.5;
  spec.seed = 7;
  const SyntheticCorpus gen = generate_synthetic_detailed(spec);
  const RegionSet regions = synthetic_regions(spec, LabelKind::zipcode);
  std::size_t assigned = 0, assign_mismatch = 0;
  for (std::size_t i = 0; i < gen.corpus.size() && assigned < 10000; ++i, ++assigned) {
    const auto label = assign_region(gen.corpus[i].point(), regions);
    assign_mismatch += label != synthetic_zipcode(gen.post_region[i]);
  }

  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const GeoPoint p{rng.uniform(-180.0, 180.0), rng.uniform(-89.0, 89.0)};
    const GeoPoint q{rng.uniform(-180.0, 180.0), rng.uniform(-89.0, 89.0)};
    const double oracle = testing::law_of_cosines_miles(p, q);
    worst = std::max(worst, std::abs(haversine_miles(p, q) - oracle) / oracle);
  }
  const bool ok = pip_mismatch == 0 && assigned == 10000 && assign_mismatch == 0 && worst < 1e-3;
  return {ok, "pip " + std::to_string(pip_mismatch) + "/" + std::to_string(pip_points) + " mismatches, assign " +
                  std::to_string(assign_mismatch) + "/" + std::to_string(assigned) + " mismatches, haversine worst " +
                  fmt_sci(100.0 * worst) + "%"};
}

Outcome kmeans_properties() {
  Rng rng(31);
  std::size_t increases = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor pts(Shape{100, 3});
    for (double& v : pts.data()) v = rng.normal() + (rng.bernoulli(0.3) ? 5.0 : 0.0);
    const KMeansResult r = kmeans(pts, 2 + rng.index(8), trial);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i)
      increases += r.inertia_history[i] > r.inertia_history[i - 1] + 1e-9;
  }

  const double sigma = 1.0;
  Tensor blobs(Shape{200, 2});
  std::vector<std::size_t> truth;
  for (std::size_t i = 0; i < 200; ++i) {
    const std::size_t b = rng.index(2);
    truth.push_back(b);
    blobs.at(i, 0) = (b ? 10.0 * sigma : 0.0) + sigma * rng.normal();
    blobs.at(i, 1) = sigma * rng.normal();
  }
  const KMeansResult two = kmeans(blobs, 2, 5);
  std::size_t misassigned = 0;
  const std::size_t flip = two.assignments[0] == truth[0] ? 0 : 1;
  for (std::size_t i = 0; i < truth.size(); ++i) misassigned += (two.assignments[i] ^ flip) != truth[i];

  Tensor pts(Shape{60, 4});
  for (double& v : pts.data()) v = rng.uniform(-3.0, 3.0);
  const KMeansResult one = kmeans(pts, 1, 3);
  double err = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    double m = 0.0;
    for (std::size_t i = 0; i < 60; ++i) m += pts.at(i, k);
    err = std::max(err, std::abs(one.centroids.at(0, k) - m / 60.0));
  }
  const bool ok = increases == 0 && misassigned == 0 && err < 1e-9;
  return {ok, std::to_string(increases) + " inertia increases, " + std::to_string(misassigned) +
                  " blob points misassigned, k=1 centroid error " + fmt_sci(err)};
}

Outcome determinism() {
  RunConfig cfg = with_generated_data(acceptance_config("ablation.toml"), "determinism");
  cfg.model.epochs = 3;
  std::vector<fs::path> outs;
  for (const char* run : {"determinism_a", "determinism_b"}) {
    cfg.paths.out = scratch(run).string();
    std::ostringstream sink;
    cmd_train(cfg, {sink, sink});
    outs.emplace_back(cfg.paths.out);
  }
  std::string detail;
  bool ok = true;
  for (const char* f : {"checkpoint.json", "report.json", "report.txt", "history.jsonl"}) {
    const std::string a = slurp(outs[0] / f), b = slurp(outs[1] / f);
    const bool same = !a.empty() && a == b;
    ok = ok && same;
    detail += std::string(detail.empty() ? "" : ", ") + f + (same ? " identical" : " differs");
  }
  return {ok, detail};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--only") only = std::stoi(argv[i + 1]);
  }
  const std::vector<Criterion> criteria = {
      {1, "operator gradient checks", 60, gradient_checks},
      {2, "every variant overfits a 32-sample batch", 120, overfitting},
      {3, "separable signal reaches 95% validation accuracy", 300, separable_signal},
      {4, "user history lifts accuracy by 5 points", 0, history_gain},
      {5, "cluster-count sweep peaks inside the grid", 1200, cluster_sweep},
      {6, "no user history is the worst fraction", 0, user_fraction},
      {7, "oversampling and stratified sampling laws", 0, sampling_laws},
      {8, "geospatial oracle equivalence", 0, geo_oracles},
      {9, "kmeans properties", 0, kmeans_properties},
      {10, "training reruns are byte-identical", 0, determinism},
  };
  bool all = true;
  for (const auto& c : criteria) {
    if (only && c.id != only) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit_s > 0 && secs >= c.time_limit_s) {
      o.pass = false;
      o.detail += "; over the " + fmt(c.time_limit_s, 0) + " s budget";
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " ("
              << fmt(secs, 1) << " s)" << std::endl;
  }
  return all ? 0 : 1;
}
