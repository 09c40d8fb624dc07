#pragma once

#include <algorithm>
#include <cmath>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "geoloc/augment.hpp"
#include "geoloc/corpus.hpp"
#include "geoloc/embed.hpp"
#include "geoloc/error.hpp"
#include "geoloc/geo.hpp"
#include "geoloc/models.hpp"
#include "geoloc/optim.hpp"
#include "geoloc/textprep.hpp"

namespace geoloc {

// z-score statistics of the training coordinates.
struct NormStats {
  double lon_mean = 0.0, lon_std = 1.0, lat_mean = 0.0, lat_std = 1.0;

  static NormStats fit(const Corpus& c) {
    NormStats s;
    double n = 0.0, sl = 0.0, sa = 0.0;
    for (const auto& r : c) {
      if (!r.has_point()) continue;
      n += 1.0;
      sl += *r.lon;
      sa += *r.lat;
    }
    if (n == 0.0) throw Error("coordinate task needs geotagged training records");
    s.lon_mean = sl / n;
    s.lat_mean = sa / n;
    double vl = 0.0, va = 0.0;
    for (const auto& r : c) {
      if (!r.has_point()) continue;
      vl += (*r.lon - s.lon_mean) * (*r.lon - s.lon_mean);
      va += (*r.lat - s.lat_mean) * (*r.lat - s.lat_mean);
    }
    s.lon_std = std::sqrt(vl / n);
    s.lat_std = std::sqrt(va / n);
    if (s.lon_std < 1e-12) s.lon_std = 1.0;
    if (s.lat_std < 1e-12) s.lat_std = 1.0;
    return s;
  }

  std::array<double, 2> to_normalized(GeoPoint p) const {
    return {(p.lon - lon_mean) / lon_std, (p.lat - lat_mean) / lat_std};
  }
  GeoPoint from_normalized(double x, double y) const { return {lon_mean + x * lon_std, lat_mean + y * lat_std}; }
};

struct HistoryEntry {
  std::size_t epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
};

using Logger = std::function<void(const std::string&)>;

struct TrainOptions {
  std::optional<std::string> embeddings_path;  // required by MH_C
  std::shared_ptr<const StopwordSet> stopwords;  // default list when null
  Logger log;                                    // progress and warnings
  bool validate_each_epoch = true;
};

// A model together with everything needed to encode new input.
class TrainedModel {
 public:
  TrainedModel(ModelConfig cfg, Vocab vocab, std::vector<std::string> labels, NormStats norm,
               std::shared_ptr<const StopwordSet> stopwords)
      : config_(std::move(cfg)),
        vocab_(std::move(vocab)),
        labels_(std::move(labels)),
        norm_(norm),
        stopwords_(stopwords ? std::move(stopwords) : default_stopwords()),
        model_(config_, vocab_.size(), is_regression(config_.variant) ? 2 : labels_.size()) {
    for (std::size_t i = 0; i < labels_.size(); ++i) label_index_[labels_[i]] = static_cast<int>(i);
  }

  const ModelConfig& config() const noexcept { return config_; }
  const Vocab& vocab() const noexcept { return vocab_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const NormStats& norm() const noexcept { return norm_; }
  const StopwordSet& stopwords() const noexcept { return *stopwords_; }
  GeoModel& model() noexcept { return model_; }
  const GeoModel& model() const noexcept { return model_; }

  std::optional<UserDict> user_dict;
  std::optional<ClusterIndex> cluster_index;
  std::vector<HistoryEntry> history;

  bool classification() const { return !is_regression(config_.variant); }

  // -1 when the label was not seen in training.
  int label_id(const std::string& label) const {
    auto it = label_index_.find(label);
    return it == label_index_.end() ? -1 : it->second;
  }

  NormalizeOptions normalize_options() const {
    NormalizeOptions o;
    o.max_words = config_.max_words;
    o.stem = config_.stem;
    o.stopwords = stopwords_;
    return o;
  }

  std::vector<std::string> tokens(const TweetRecord& r, bool with_history) const {
    auto toks = normalize(r.text, normalize_options()).tokens;
    if (with_history && user_dict) {
      toks = augment_with_history(std::move(toks), {r.id, r.username, r.created_at}, *user_dict, config_.augment,
                                  config_.max_words);
    }
    return toks;
  }

  EncodedTweet encode_tokens(const std::vector<std::string>& toks, const TweetRecord& r) const {
    EncodedTweet e;
    e.words = encode_words(toks, vocab_, config_.max_words);
    if (uses_chars(config_.variant)) {
      e.chars = encode_chars(normalize(r.text, normalize_options()).char_seq, CharVocab::standard(), config_.max_chars);
    }
    return e;
  }

  // Evaluation-time input: MH_U consults the user history, other variants
  // use the tweet alone.
  EncodedTweet encode_for_eval(const TweetRecord& r) const {
    return encode_tokens(tokens(r, config_.variant == Variant::mh_u), r);
  }

  // Raw model output in evaluation mode.
  std::vector<double> infer(const TweetRecord& r) {
    Tape tape(TapeOptions{false, false, 0});
    const EncodedTweet x = encode_for_eval(r);
    return model_.forward(tape, x).value().values();
  }

 private:
  ModelConfig config_;
  Vocab vocab_;
  std::vector<std::string> labels_;
  NormStats norm_;
  std::shared_ptr<const StopwordSet> stopwords_;
  GeoModel model_;
  std::unordered_map<std::string, int> label_index_;
};

// ---------------------------------------------------------------------------
// Metrics

struct ClassMetrics {
  std::string label;
  std::size_t support = 0;    // truth count
  std::size_t predicted = 0;  // prediction count
  std::size_t correct = 0;
  double precision = 0.0;
  double recall = 0.0;
};

struct SplitMetrics {
  std::string split;
  std::size_t n = 0;
  double loss = 0.0;
  std::optional<double> accuracy;
  std::optional<double> acc30;
  std::optional<double> acc161;
  std::optional<double> mean_error_miles;
  std::size_t unseen_labels = 0;
  std::vector<ClassMetrics> per_class;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::vector<double> softmax_values(const std::vector<double>& logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] = std::exp(logits[i] - m));
  for (double& v : p) v /= s;
  return p;
}

inline std::string base_id(const std::string& id) {
  const auto pos = id.rfind("#os");
  return pos == std::string::npos ? id : id.substr(0, pos);
}

}  // namespace detail

// Per tweet: label distribution and argmax for classifiers, denormalised
// coordinates for regressors. Truth fields are filled when present.
inline PredictionSet predict(TrainedModel& m, const Corpus& tweets) {
  PredictionSet out;
  out.labels = m.labels();
  for (const TweetRecord& r : tweets) {
    Prediction p;
    p.id = r.id;
    const std::vector<double> y = m.infer(r);
    if (m.classification()) {
      p.distribution = detail::softmax_values(y);
      const auto best = static_cast<std::size_t>(std::max_element(p.distribution.begin(), p.distribution.end()) -
                                                 p.distribution.begin());
      p.predicted_label = m.labels()[best];
      p.probability = p.distribution[best];
      if (const auto& l = r.label(label_kind(m.config().task))) p.truth_label = *l;
    } else {
      p.predicted_point = m.norm().from_normalized(y[0], y[1]);
    }
    if (r.has_point()) p.truth_point = r.point();
    out.entries.push_back(std::move(p));
  }
  return out;
}

inline SplitMetrics evaluate(TrainedModel& m, const Corpus& corpus, const std::string& split_name = "eval") {
  SplitMetrics s;
  s.split = split_name;
  s.n = corpus.size();
  if (corpus.empty()) throw Error("evaluate: split '" + split_name + "' is empty");
  const Task task = m.config().task;
  if (m.classification()) {
    const LabelKind kind = label_kind(task);
    std::size_t missing = 0;
    for (const auto& r : corpus)
      if (!r.label(kind)) ++missing;
    if (missing) {
      throw Error("evaluate: " + std::to_string(missing) + " records lack a " + to_string(kind) + " label");
    }
    const std::size_t C = m.labels().size();
    std::vector<ClassMetrics> cls(C);
    for (std::size_t c = 0; c < C; ++c) cls[c].label = m.labels()[c];
    std::size_t correct = 0, scored = 0;
    double loss = 0.0;
    std::map<std::string, std::size_t> unseen;
    for (const auto& r : corpus) {
      const std::vector<double> logits = m.infer(r);
      const auto best = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
      ++cls[best].predicted;
      const int truth = m.label_id(*r.label(kind));
      if (truth < 0) {
        ++unseen[*r.label(kind)];
        continue;
      }
      const auto t = static_cast<std::size_t>(truth);
      ++cls[t].support;
      if (best == t) {
        ++correct;
        ++cls[t].correct;
      }
      const double mx = logits[best];
      double se = 0.0;
      for (double v : logits) se += std::exp(v - mx);
      loss += mx + std::log(se) - logits[t];
      ++scored;
    }
    for (auto& c : cls) {
      c.precision = c.predicted ? static_cast<double>(c.correct) / static_cast<double>(c.predicted) : 0.0;
      c.recall = c.support ? static_cast<double>(c.correct) / static_cast<double>(c.support) : 0.0;
    }
    for (const auto& [label, n] : unseen) {
      s.unseen_labels += n;
      s.warnings.push_back("label '" + label + "' unseen in training: " + std::to_string(n) + " rows scored incorrect");
    }
    s.accuracy = static_cast<double>(correct) / static_cast<double>(corpus.size());
    s.loss = scored ? loss / static_cast<double>(scored) : 0.0;
    s.per_class = std::move(cls);
  } else {
    PredictionSet preds;
    double loss = 0.0;
    for (const auto& r : corpus) {
      if (!r.has_point()) throw Error("evaluate: coordinate task needs coordinates for '" + r.id + "'");
      const std::vector<double> y = m.infer(r);
      const auto t = m.norm().to_normalized(r.point());
      loss += std::hypot(y[0] - t[0], y[1] - t[1]);
      Prediction p;
      p.id = r.id;
      p.truth_point = r.point();
      p.predicted_point = m.norm().from_normalized(y[0], y[1]);
      preds.entries.push_back(std::move(p));
    }
    s.loss = loss / static_cast<double>(corpus.size());
    s.acc30 = acc_at(preds, 30.0);
    s.acc161 = acc_at(preds, 161.0);
    s.mean_error_miles = mean_error_miles(preds);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Training

struct TrainData {
  Corpus train;  // as supplied (before oversampling)
  Corpus valid;  // stratified when the config asks for it
};

namespace detail {

inline void log(const TrainOptions& opts, const std::string& msg) {
  if (opts.log) opts.log(msg);
}

}  // namespace detail

// Mini-batch training. Builds the vocabulary, label set, normalisation
// statistics and augmentation structures from the training split only.
inline TrainedModel train(const Corpus& train_in, const Corpus& valid_in, const ModelConfig& cfg,
                          const TrainOptions& opts = {}, TrainData* used = nullptr) {
  cfg.validate();
  if (train_in.empty()) throw Error("training split is empty");
  const bool classify = !is_regression(cfg.variant);
  const LabelKind kind = label_kind(cfg.task);

  NormalizeOptions nopts;
  nopts.max_words = cfg.max_words;
  nopts.stem = cfg.stem;
  if (opts.stopwords) nopts.stopwords = opts.stopwords;

  std::vector<std::vector<std::string>> base_tokens;
  for (const auto& r : train_in) base_tokens.push_back(normalize(r.text, nopts).tokens);
  Vocab vocab = build_vocab(base_tokens, cfg.vocab_min_freq, cfg.vocab_max_size);

  std::vector<std::string> labels;
  NormStats norm;
  if (classify) {
    for (const auto& [label, n] : class_counts(train_in, kind)) labels.push_back(label);
    std::size_t missing = 0;
    for (const auto& r : train_in)
      if (!r.label(kind)) ++missing;
    if (missing) throw Error("training: " + std::to_string(missing) + " records lack a " + to_string(kind) + " label");
  } else {
    for (const auto& r : train_in) {
      if (!r.has_point()) throw Error("training: coordinate task needs coordinates for '" + r.id + "'");
    }
    norm = NormStats::fit(train_in);
  }

  TrainedModel tm(cfg, vocab, labels, norm, nopts.stopwords);

  Corpus valid = valid_in;
  if (classify && cfg.stratify_valid && !valid_in.empty()) {
    auto st = stratified_validation(valid_in, kind, derive_seed(cfg.seed, 0x76616c));
    for (const auto& c : st.dropped_classes) detail::log(opts, "warning: validation class '" + c + "' dropped");
    valid = std::move(st.corpus);
  }

  if (cfg.variant == Variant::mh_u) tm.user_dict = UserDict(train_in, base_tokens);

  std::vector<std::vector<int>> base_encoded;
  for (const auto& t : base_tokens) base_encoded.push_back(encode_words(t, vocab, cfg.max_words));

  if (cfg.variant == Variant::mh_c) {
    if (!opts.embeddings_path) throw ConfigError("paths.embeddings is required for MH_C");
    const EmbeddingTable table = load_embeddings(*opts.embeddings_path, vocab);
    detail::log(opts, "embedding coverage " + std::to_string(table.coverage()));
    tm.cluster_index = build_cluster_index(train_in, base_encoded, table, cfg.augment.num_clusters, cfg.seed);
  }

  Corpus train = train_in;
  if (classify && cfg.sample_factor > 0.0) train = oversample(train_in, kind, cfg.sample_factor, cfg.seed);
  if (used) *used = TrainData{train_in, valid};

  std::unordered_map<std::string, std::size_t> base_row;
  for (std::size_t i = 0; i < train_in.size(); ++i) base_row[train_in[i].id] = i;

  // Encoded training examples, one per (possibly oversampled) record.
  std::vector<EncodedTweet> examples;
  std::vector<std::size_t> example_base;
  for (const auto& r : train) {
    const std::size_t b = base_row.at(detail::base_id(r.id));
    example_base.push_back(b);
    std::vector<std::string> toks = base_tokens[b];
    if (cfg.variant == Variant::mh_u && cfg.augment.history_in_training) {
      toks = augment_with_history(std::move(toks), {train_in[b].id, r.username, r.created_at}, *tm.user_dict,
                                  cfg.augment, cfg.max_words);
    }
    examples.push_back(tm.encode_tokens(toks, r));
  }
  std::vector<EncodedTweet> base_examples;
  std::vector<std::vector<std::size_t>> similar(train_in.size());
  if (tm.cluster_index) {
    for (const auto& e : base_encoded) base_examples.push_back(EncodedTweet{e, {}});
    for (std::size_t i = 0; i < train_in.size(); ++i) {
      similar[i] = sample_similar({train_in[i].id, train_in[i].username, tm.cluster_index->embeddings.row(i)},
                                  *tm.cluster_index, cfg.augment.nc_samples);
    }
  }

  std::vector<int> targets;
  std::vector<double> coords;
  for (const auto& r : train) {
    if (classify) {
      targets.push_back(tm.label_id(*r.label(kind)));
    } else {
      const auto t = norm.to_normalized(r.point());
      coords.insert(coords.end(), t.begin(), t.end());
    }
  }

  Optimizer optim(OptimizerConfig{cfg.optimizer, cfg.lr, 0.9, 0.999, 1e-8, cfg.lr_decay});
  ParameterStore& params = tm.model().params();
  params.zero_grad();
  Rng order_rng(derive_seed(cfg.seed, 0x6f72646572));
  std::vector<std::size_t> order(train.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      try {
        Tape tape(TapeOptions{true, true, derive_seed(cfg.seed, 0x7374657000 + step)});
        std::vector<Var> outs;
        std::vector<int> batch_targets;
        std::vector<double> batch_coords;
        for (std::size_t j = start; j < end; ++j) {
          const std::size_t i = order[j];
          std::vector<const EncodedTweet*> sim;
          for (std::size_t r : similar[example_base[i]]) sim.push_back(&base_examples[r]);
          outs.push_back(tm.model().forward(tape, examples[i], sim));
          if (classify) {
            batch_targets.push_back(targets[i]);
          } else {
            batch_coords.push_back(coords[2 * i]);
            batch_coords.push_back(coords[2 * i + 1]);
          }
        }
        Var stacked = ops::stack_rows(outs);
        Var loss = classify ? ops::cross_entropy_with_softmax(stacked, batch_targets)
                            : pairwise_loss(stacked, tape.constant(Tensor(Shape{end - start, 2}, batch_coords)));
        const double lv = loss.value().item();
        if (!std::isfinite(lv)) throw NumericalError("non-finite loss");
        tape.backward(loss);
        optim.step(params);
        params.zero_grad();
        epoch_loss += lv * static_cast<double>(end - start);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_no) + ": " + e.what());
      }
      ++step;
    }
    optim.end_epoch();
    const double train_loss = epoch_loss / static_cast<double>(train.size());
    tm.history.push_back({epoch, "train", "loss", train_loss});
    std::string line = "epoch " + std::to_string(epoch) + " train_loss=" + std::to_string(train_loss);
    if (opts.validate_each_epoch && !valid.empty()) {
      const SplitMetrics vm = evaluate(tm, valid, "valid");
      tm.history.push_back({epoch, "valid", "loss", vm.loss});
      line += " valid_loss=" + std::to_string(vm.loss);
      if (vm.accuracy) {
        tm.history.push_back({epoch, "valid", "accuracy", *vm.accuracy});
        line += " valid_acc=" + std::to_string(*vm.accuracy);
      }
      if (vm.acc30) {
        tm.history.push_back({epoch, "valid", "acc@30", *vm.acc30});
        tm.history.push_back({epoch, "valid", "acc@161", *vm.acc161});
        tm.history.push_back({epoch, "valid", "mean_error_miles", *vm.mean_error_miles});
        line += " valid_acc@30=" + std::to_string(*vm.acc30);
      }
    }
    detail::log(opts, line);
  }
  return tm;
}

}  // namespace geoloc
