#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "geoloc/augment.hpp"
#include "geoloc/autodiff.hpp"
#include "geoloc/error.hpp"
#include "geoloc/ops.hpp"
#include "geoloc/optim.hpp"
#include "geoloc/rng.hpp"
#include "geoloc/tensor.hpp"
#include "geoloc/textprep.hpp"

namespace geoloc {

enum class Variant { word_cnn_reg, cch, cch_a, mh, mh_u, mh_c };
enum class Task { coords, zipcode, neighborhood };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::word_cnn_reg: return "WORD_CNN_REG";
    case Variant::cch: return "CCH";
    case Variant::cch_a: return "CCH_A";
    case Variant::mh: return "MH";
    case Variant::mh_u: return "MH_U";
    case Variant::mh_c: return "MH_C";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::word_cnn_reg, Variant::cch, Variant::cch_a, Variant::mh, Variant::mh_u, Variant::mh_c}) {
    if (s == to_string(v)) return v;
  }
  throw ConfigError("unknown model variant '" + s + "'");
}

inline const char* to_string(Task t) {
  switch (t) {
    case Task::coords: return "coords";
    case Task::zipcode: return "zipcode";
    case Task::neighborhood: return "neighborhood";
  }
  return "?";
}

inline Task parse_task(const std::string& s) {
  for (Task t : {Task::coords, Task::zipcode, Task::neighborhood}) {
    if (s == to_string(t)) return t;
  }
  throw ConfigError("unknown task '" + s + "'");
}

inline bool is_regression(Variant v) { return v == Variant::word_cnn_reg || v == Variant::cch || v == Variant::cch_a; }
inline bool uses_chars(Variant v) { return v == Variant::cch || v == Variant::cch_a; }
inline bool is_transformer(Variant v) { return v == Variant::mh || v == Variant::mh_u || v == Variant::mh_c; }
inline LabelKind label_kind(Task t) { return t == Task::zipcode ? LabelKind::zipcode : LabelKind::neighborhood; }

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }
inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw ConfigError("unknown optimizer '" + s + "'");
}

struct ModelConfig {
  Variant variant = Variant::mh;
  Task task = Task::zipcode;

  // word CNN
  std::vector<std::size_t> kernels{2, 4, 8, 16, 32, 64};
  std::size_t channels = 128;
  std::size_t fc_layers = 2;  // hidden dense layers before the output layer
  std::size_t fc_width = 128;

  // character CNN (CCH, CCH_A)
  std::size_t char_emb_dim = 16;
  std::size_t char_channels = 64;
  std::size_t char_fc = 128;

  // attention LSTM (CCH_A)
  std::size_t lstm_hidden = 128;

  // transformer encoder (MH*)
  std::size_t encoders = 3;
  std::size_t emb_dim = 1024;
  std::size_t div_factor = 128;
  std::size_t heads = 8;

  // optimisation
  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 0.004;
  double lr_decay = 1.0;
  std::size_t batch_size = 64;
  std::size_t epochs = 50;
  double dropout = 0.3;

  // text
  std::size_t max_words = 64;
  std::size_t max_chars = 280;
  std::size_t vocab_min_freq = 1;
  std::size_t vocab_max_size = 50000;
  bool stem = true;

  // sampling
  double sample_factor = 0.0;
  bool stratify_valid = false;

  AugmentConfig augment;
  std::uint64_t seed = 1;

  std::size_t ffn_dim() const { return std::max<std::size_t>(div_factor ? emb_dim / div_factor : emb_dim, 8); }

  void validate() const {
    if (is_regression(variant) != (task == Task::coords)) {
      throw ConfigError(std::string("model.variant ") + to_string(variant) + " cannot be trained for task " +
                        to_string(task));
    }
    if (max_words < 1) throw ConfigError("model.max_words must be >= 1");
    if (batch_size < 1) throw ConfigError("model.batch_size must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("model.lr must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("model.lr_decay must be in (0, 1]");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
    if (!(sample_factor >= 0.0 && sample_factor <= 1.0)) throw ConfigError("model.sample_factor must be in [0, 1]");
    if (vocab_max_size < 2) throw ConfigError("model.vocab_max_size must be >= 2");
    if (variant == Variant::word_cnn_reg || variant == Variant::cch) {
      if (kernels.empty()) throw ConfigError("model.kernels must be non-empty for CNN variants");
      for (std::size_t k : kernels) {
        if (k < 1 || k > max_words) {
          throw ConfigError("model.kernels: size " + std::to_string(k) + " must be in [1, max_words]");
        }
      }
      if (channels < 1 || fc_width < 1) throw ConfigError("model.channels and model.fc_width must be >= 1");
    }
    if (uses_chars(variant)) {
      if (max_chars < 51) throw ConfigError("model.max_chars must be >= 51 for the character CNN");
      if (char_emb_dim < 1 || char_channels < 1 || char_fc < 1) throw ConfigError("character CNN sizes must be >= 1");
    }
    if (variant == Variant::cch_a && (lstm_hidden < 1 || fc_width < 1)) {
      throw ConfigError("model.lstm_hidden and model.fc_width must be >= 1");
    }
    if (is_transformer(variant)) {
      if (emb_dim < 1 || heads < 1 || encoders < 1) throw ConfigError("model.emb_dim, heads, encoders must be >= 1");
      if (div_factor < 1) throw ConfigError("model.div_factor must be >= 1");
      if (emb_dim % heads != 0) {
        throw ConfigError("model.emb_dim (" + std::to_string(emb_dim) + ") must be divisible by model.heads (" +
                          std::to_string(heads) + ")");
      }
    }
    augment.validate();
  }
};

// Named configurations following the reported experiments.
inline ModelConfig preset(const std::string& name) {
  ModelConfig c;
  if (name == "1D-CNN") {
    c.variant = Variant::word_cnn_reg;
    c.task = Task::coords;
    c.kernels = {2, 4, 8, 16, 32, 64};
    c.fc_layers = 2;
    c.lr = 0.005;
    c.epochs = 70;
    c.batch_size = 256;
  } else if (name == "CCH") {
    c.variant = Variant::cch;
    c.task = Task::coords;
    c.kernels = {4, 8, 16, 32};
    c.fc_layers = 1;
    c.lr = 0.09;
  } else if (name == "CCH-A") {
    c.variant = Variant::cch_a;
    c.task = Task::coords;
    c.fc_layers = 3;
    c.lr = 0.005;
  } else if (name == "MH" || name == "MH-U" || name == "MH-C" || name == "MH-C-S" || name == "MH-N-E" ||
             name == "MH-N") {
    c.variant = Variant::mh;
    c.task = Task::zipcode;
    c.encoders = 3;
    c.emb_dim = 1024;
    c.div_factor = 128;
    c.dropout = 0.3;
    c.lr = 0.004;
    c.batch_size = 64;
    c.epochs = 50;
    c.lr_decay = 0.95;
    if (name == "MH-U") {
      c.variant = Variant::mh_u;
      c.augment.k_tokens = 16;
      c.augment.time_window_hours = 72.0;
    } else if (name == "MH-C") {
      c.variant = Variant::mh_c;
      c.augment.num_clusters = 4;
      c.augment.nc_samples = 20;
    } else if (name == "MH-C-S") {
      c.variant = Variant::mh_c;
      c.encoders = 4;
      c.div_factor = 256;
      c.dropout = 0.33;
      c.augment.num_clusters = 9;
      c.augment.nc_samples = 35;
      c.stratify_valid = true;
    } else if (name == "MH-N-E" || name == "MH-N") {
      c.variant = name == "MH-N-E" ? Variant::mh_c : Variant::mh;
      c.task = Task::neighborhood;
      c.dropout = 0.1;
      c.sample_factor = 0.65;
    }
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return c;
}

inline std::vector<std::string> preset_names() { return {"1D-CNN", "CCH", "CCH-A", "MH", "MH-U", "MH-C", "MH-C-S", "MH-N-E", "MH-N"}; }

// Model input for one tweet: padded word ids and, for character variants,
// padded character ids.
struct EncodedTweet {
  std::vector<int> words;
  std::vector<int> chars;

  // Non-padding prefix, or a single padding id when the tweet is empty.
  std::vector<int> active_words() const {
    std::vector<int> out;
    for (int id : words) {
      if (id == Vocab::kPad) break;
      out.push_back(id);
    }
    if (out.empty()) out.push_back(Vocab::kPad);
    return out;
  }
};

// The parameterised network for one variant. forward() returns the output
// vector: class logits, or two normalised coordinates.
class GeoModel {
 public:
  GeoModel(const ModelConfig& cfg, std::size_t vocab_size, std::size_t num_outputs) : cfg_(cfg), outputs_(num_outputs) {
    cfg_.validate();
    if (vocab_size < 2) throw ConfigError("vocabulary must contain padding and unknown ids");
    if (num_outputs < 1) throw ConfigError("model needs at least one output");
    Rng rng(derive_seed(cfg_.seed, 0x696e6974));
    switch (cfg_.variant) {
      case Variant::word_cnn_reg:
      case Variant::cch: build_word_cnn(vocab_size, rng); break;
      case Variant::cch_a: build_lstm_attention(vocab_size, rng); break;
      default: build_transformer(vocab_size, rng); break;
    }
    if (uses_chars(cfg_.variant)) build_char_cnn(rng);
    const std::size_t head_in = head_input_width();
    params_.add_glorot("out.w", {head_in, outputs_}, head_in, outputs_, rng);
    params_.add_zeros("out.b", {outputs_});
  }

  GeoModel(GeoModel&&) noexcept = default;
  GeoModel& operator=(GeoModel&&) noexcept = default;

  const ModelConfig& config() const noexcept { return cfg_; }
  std::size_t num_outputs() const noexcept { return outputs_; }
  ParameterStore& params() noexcept { return params_; }
  const ParameterStore& params() const noexcept { return params_; }

  // `similar` holds the retrieved neighbours for MH_C; empty means the
  // input encoding fills both halves of the concatenated representation.
  Var forward(Tape& t, const EncodedTweet& x, std::span<const EncodedTweet* const> similar = {}) {
    switch (cfg_.variant) {
      case Variant::word_cnn_reg: {
        return ops::linear(word_cnn_features(t, x), params_.at("out.w"), params_.at("out.b"));
      }
      case Variant::cch: {
        Var o = ops::concat({word_cnn_features(t, x), char_features(t, x)});
        return ops::linear(o, params_.at("out.w"), params_.at("out.b"));
      }
      case Variant::cch_a: {
        Var o = ops::concat({lstm_attention_features(t, x), char_features(t, x)});
        return ops::linear(o, params_.at("out.w"), params_.at("out.b"));
      }
      case Variant::mh:
      case Variant::mh_u: {
        Var o = ops::dropout(encode(t, x), cfg_.dropout);
        return ops::linear(o, params_.at("out.w"), params_.at("out.b"));
      }
      case Variant::mh_c: {
        Var self = encode(t, x);
        Var side = self;
        if (!similar.empty()) {
          std::vector<Var> enc;
          for (const EncodedTweet* s : similar) enc.push_back(encode(t, *s));
          side = ops::mean_rows(ops::stack_rows(enc));
        }
        Var o = ops::dropout(ops::concat({self, side}), cfg_.dropout);
        return ops::linear(o, params_.at("out.w"), params_.at("out.b"));
      }
    }
    throw Error("unreachable variant");
  }

  // Transformer encoder: embedding + positions -> blocks -> mean over positions.
  Var encode(Tape& t, const EncodedTweet& x) {
    const std::vector<int> ids = x.active_words();
    Var h = ops::embedding_lookup(t.param(params_.at("word_emb")), ids);
    h = ops::add(h, t.constant(ops::positional_encoding(ids.size(), cfg_.emb_dim)));
    for (std::size_t e = 0; e < cfg_.encoders; ++e) {
      const std::string p = "enc" + std::to_string(e + 1) + ".";
      h = ops::multi_head_attention(h, attention_weights(p), cfg_.heads);
      h = ops::relu(ops::linear(h, params_.at(p + "ffn1.w"), params_.at(p + "ffn1.b")));
      h = ops::linear(h, params_.at(p + "ffn2.w"), params_.at(p + "ffn2.b"));
    }
    return ops::mean_rows(h);
  }

  // Character CNN output e (CCH, CCH_A).
  Var char_features(Tape& t, const EncodedTweet& x) {
    if (x.chars.size() != cfg_.max_chars) throw Error("character input length must equal max_chars");
    Var h = ops::embedding_lookup(t.param(params_.at("char_emb")), x.chars);
    h = ops::relu(conv(t, h, "char_conv1"));
    h = ops::max_pool1d(h, 3);
    h = ops::relu(conv(t, h, "char_conv2"));
    h = ops::max_pool1d(h, 3);
    h = ops::relu(conv(t, h, "char_conv3"));
    h = ops::max_over_time(h);
    return ops::relu(ops::linear(h, params_.at("char_fc.w"), params_.at("char_fc.b")));
  }

 private:
  std::size_t head_input_width() const {
    switch (cfg_.variant) {
      case Variant::word_cnn_reg: return cnn_penultimate_width();
      case Variant::cch: return cnn_penultimate_width() + cfg_.char_fc;
      case Variant::cch_a: return (cfg_.fc_layers ? cfg_.fc_width : cfg_.lstm_hidden) + cfg_.char_fc;
      case Variant::mh:
      case Variant::mh_u: return cfg_.emb_dim;
      case Variant::mh_c: return 2 * cfg_.emb_dim;
    }
    return 0;
  }

  std::size_t cnn_penultimate_width() const {
    return cfg_.fc_layers ? cfg_.fc_width : cfg_.channels * cfg_.kernels.size();
  }

  void add_fc_stack(std::size_t in, Rng& rng) {
    for (std::size_t i = 0; i < cfg_.fc_layers; ++i) {
      const std::string p = "fc" + std::to_string(i + 1) + ".";
      params_.add_glorot(p + "w", {in, cfg_.fc_width}, in, cfg_.fc_width, rng);
      params_.add_zeros(p + "b", {cfg_.fc_width});
      in = cfg_.fc_width;
    }
  }

  Var fc_stack(Var h) {
    for (std::size_t i = 0; i < cfg_.fc_layers; ++i) {
      const std::string p = "fc" + std::to_string(i + 1) + ".";
      h = ops::relu(ops::linear(h, params_.at(p + "w"), params_.at(p + "b")));
    }
    return h;
  }

  void add_conv(const std::string& name, std::size_t k, std::size_t cin, std::size_t cout, Rng& rng) {
    params_.add_glorot(name + ".w", {k, cin, cout}, k * cin, k * cout, rng);
    params_.add_zeros(name + ".b", {cout});
  }

  Var conv(Tape& t, Var x, const std::string& name) {
    return ops::conv1d(x, t.param(params_.at(name + ".w")), t.param(params_.at(name + ".b")));
  }

  void build_word_cnn(std::size_t vocab_size, Rng& rng) {
    params_.add_glorot("word_emb", {vocab_size, cfg_.emb_dim}, vocab_size, cfg_.emb_dim, rng);
    for (std::size_t k : cfg_.kernels) add_conv("conv" + std::to_string(k), k, cfg_.emb_dim, cfg_.channels, rng);
    add_fc_stack(cfg_.channels * cfg_.kernels.size(), rng);
  }

  Var word_cnn_features(Tape& t, const EncodedTweet& x) {
    if (x.words.size() != cfg_.max_words) throw Error("word input length must equal max_words");
    Var emb = ops::embedding_lookup(t.param(params_.at("word_emb")), x.words);
    std::vector<Var> pooled;
    for (std::size_t k : cfg_.kernels) {
      pooled.push_back(ops::max_over_time(ops::relu(conv(t, emb, "conv" + std::to_string(k)))));
    }
    Var h = pooled.size() == 1 ? pooled.front() : ops::concat(pooled);
    return fc_stack(ops::dropout(h, cfg_.dropout));
  }

  void build_lstm_attention(std::size_t vocab_size, Rng& rng) {
    const std::size_t H = cfg_.lstm_hidden;
    params_.add_glorot("word_emb", {vocab_size, cfg_.emb_dim}, vocab_size, cfg_.emb_dim, rng);
    params_.add_glorot("lstm.w", {cfg_.emb_dim + H, 4 * H}, cfg_.emb_dim + H, 4 * H, rng);
    params_.add_zeros("lstm.b", {4 * H});
    add_fc_stack(H, rng);
  }

  // LSTM over the tokens; weights softmax(h_i . h_T) pool the hidden states.
  Var lstm_attention_features(Tape& t, const EncodedTweet& x) {
    const std::vector<int> ids = x.active_words();
    const std::size_t H = cfg_.lstm_hidden;
    Var emb = ops::embedding_lookup(t.param(params_.at("word_emb")), ids);
    Var w = t.param(params_.at("lstm.w"));
    Var b = t.param(params_.at("lstm.b"));
    ops::LstmState state{t.constant(Tensor(Shape{H})), t.constant(Tensor(Shape{H}))};
    std::vector<Var> hs;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      state = ops::lstm_step(ops::row(emb, i), state, w, b);
      hs.push_back(state.h);
    }
    Var states = ops::stack_rows(hs);
    Var weights = ops::softmax(ops::matvec(states, state.h));
    Var context = ops::matmul(weights, states);
    return fc_stack(ops::dropout(context, cfg_.dropout));
  }

  void build_char_cnn(Rng& rng) {
    const std::size_t V = CharVocab::standard().size();
    const std::size_t C = cfg_.char_channels;
    params_.add_glorot("char_emb", {V, cfg_.char_emb_dim}, V, cfg_.char_emb_dim, rng);
    add_conv("char_conv1", 7, cfg_.char_emb_dim, C, rng);
    add_conv("char_conv2", 7, C, C, rng);
    add_conv("char_conv3", 3, C, C, rng);
    params_.add_glorot("char_fc.w", {C, cfg_.char_fc}, C, cfg_.char_fc, rng);
    params_.add_zeros("char_fc.b", {cfg_.char_fc});
  }

  void build_transformer(std::size_t vocab_size, Rng& rng) {
    const std::size_t d = cfg_.emb_dim, f = cfg_.ffn_dim();
    params_.add_glorot("word_emb", {vocab_size, d}, vocab_size, d, rng);
    for (std::size_t e = 0; e < cfg_.encoders; ++e) {
      const std::string p = "enc" + std::to_string(e + 1) + ".";
      for (const char* m : {"wq", "wk", "wv", "wo"}) params_.add_glorot(p + m, {d, d}, d, d, rng);
      for (const char* m : {"bq", "bk", "bv", "bo"}) params_.add_zeros(p + m, {d});
      params_.add_glorot(p + "ffn1.w", {d, f}, d, f, rng);
      params_.add_zeros(p + "ffn1.b", {f});
      params_.add_glorot(p + "ffn2.w", {f, d}, f, d, rng);
      params_.add_zeros(p + "ffn2.b", {d});
    }
  }

  ops::AttentionWeights attention_weights(const std::string& p) {
    return {&params_.at(p + "wq"), &params_.at(p + "wk"), &params_.at(p + "wv"), &params_.at(p + "wo"),
            &params_.at(p + "bq"), &params_.at(p + "bk"), &params_.at(p + "bv"), &params_.at(p + "bo")};
  }

  ModelConfig cfg_;
  std::size_t outputs_;
  ParameterStore params_;
};

}  // namespace geoloc
