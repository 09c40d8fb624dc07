#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoloc/corpus.hpp"
#include "geoloc/error.hpp"
#include "geoloc/models.hpp"
#include "geoloc/synthetic.hpp"

// Run configuration: a flat TOML-like file of [section] headers and
// `key = value` lines. Values are numbers, true/false, "strings", or
// [arrays] of numbers. '#' starts a comment.
namespace geoloc {

using ConfigValue = std::variant<bool, double, std::string, std::vector<double>>;

struct ConfigEntry {
  ConfigValue value;
  std::size_t line = 0;
};

// Values keyed by "section.key".
using ConfigTable = std::map<std::string, ConfigEntry>;

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::string strip_comment(const std::string& s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"') quoted = !quoted;
    if (s[i] == '#' && !quoted) return s.substr(0, i);
  }
  return s;
}

inline double parse_number(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("line " + std::to_string(line) + ": cannot parse value '" + s + "'");
  }
}

inline ConfigValue parse_value(const std::string& raw, std::size_t line) {
  const std::string s = trim(raw);
  if (s.empty()) throw ConfigError("line " + std::to_string(line) + ": missing value");
  if (s == "true") return true;
  if (s == "false") return false;
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') throw ConfigError("line " + std::to_string(line) + ": unterminated string");
    return s.substr(1, s.size() - 2);
  }
  if (s.front() == '[') {
    if (s.back() != ']') throw ConfigError("line " + std::to_string(line) + ": unterminated array");
    std::vector<double> out;
    std::stringstream ss(s.substr(1, s.size() - 2));
    for (std::string item; std::getline(ss, item, ',');) {
      item = trim(item);
      if (!item.empty()) out.push_back(parse_number(item, line));
    }
    return out;
  }
  return parse_number(s, line);
}

}  // namespace detail

inline ConfigTable parse_config(std::istream& in) {
  ConfigTable table;
  std::string section;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    line = detail::trim(detail::strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    const std::string full = section.empty() ? key : section + "." + key;
    if (table.count(full)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key " + full);
    table[full] = {detail::parse_value(line.substr(eq + 1), line_no), line_no};
  }
  return table;
}

inline ConfigTable load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_config(in);
}

struct RunPaths {
  std::string corpus;  // split by [split] ratios when train/valid/test are not given
  std::string train, valid, test;
  std::string format = "jsonl";
  std::string embeddings;
  std::string regions;
  std::string stopwords;
  std::string keywords;
  std::string out;
};

struct RunConfig {
  std::optional<std::uint64_t> seed;
  RunPaths paths;
  SplitRatios split;
  std::optional<LabelKind> stratify;
  ModelConfig model;
  SyntheticSpec synthetic;
  SyntheticEmbeddingSpec synthetic_embeddings;
  bool write_embeddings = true;

  // Propagates the run seed into every seeded component.
  void apply_seed(std::uint64_t s) {
    seed = s;
    model.seed = s;
    synthetic.seed = s;
    synthetic_embeddings.seed = s;
  }

  std::uint64_t require_seed() const {
    if (!seed) throw ConfigError("run.seed is required (config [run] seed or --seed)");
    return *seed;
  }
};

namespace detail {

struct FieldSpec {
  enum Kind { boolean, integer, number, string, list } kind;
  std::function<void(RunConfig&, const ConfigValue&)> set;
};

inline std::size_t to_count(double v, const std::string& key) {
  if (v < 0 || v != std::floor(v) || v > 1e15) throw ConfigError(key + " must be a non-negative integer");
  return static_cast<std::size_t>(v);
}

inline const std::map<std::string, FieldSpec>& config_schema() {
  using K = FieldSpec;
  static const std::map<std::string, FieldSpec> schema = [] {
    std::map<std::string, FieldSpec> s;
    auto count = [&s](const std::string& key, std::function<std::size_t&(RunConfig&)> field) {
      s[key] = {K::integer, [key, field](RunConfig& c, const ConfigValue& v) {
                  field(c) = to_count(std::get<double>(v), key);
                }};
    };
    auto number = [&s](const std::string& key, std::function<double&(RunConfig&)> field) {
      s[key] = {K::number, [field](RunConfig& c, const ConfigValue& v) { field(c) = std::get<double>(v); }};
    };
    auto boolean = [&s](const std::string& key, std::function<bool&(RunConfig&)> field) {
      s[key] = {K::boolean, [field](RunConfig& c, const ConfigValue& v) { field(c) = std::get<bool>(v); }};
    };
    auto text = [&s](const std::string& key, std::function<std::string&(RunConfig&)> field) {
      s[key] = {K::string, [field](RunConfig& c, const ConfigValue& v) { field(c) = std::get<std::string>(v); }};
    };

    s["run.seed"] = {K::integer, [](RunConfig& c, const ConfigValue& v) {
                       c.apply_seed(static_cast<std::uint64_t>(to_count(std::get<double>(v), "run.seed")));
                     }};

    text("paths.corpus", [](RunConfig& c) -> std::string& { return c.paths.corpus; });
    text("paths.train", [](RunConfig& c) -> std::string& { return c.paths.train; });
    text("paths.valid", [](RunConfig& c) -> std::string& { return c.paths.valid; });
    text("paths.test", [](RunConfig& c) -> std::string& { return c.paths.test; });
    text("paths.format", [](RunConfig& c) -> std::string& { return c.paths.format; });
    text("paths.embeddings", [](RunConfig& c) -> std::string& { return c.paths.embeddings; });
    text("paths.regions", [](RunConfig& c) -> std::string& { return c.paths.regions; });
    text("paths.stopwords", [](RunConfig& c) -> std::string& { return c.paths.stopwords; });
    text("paths.keywords", [](RunConfig& c) -> std::string& { return c.paths.keywords; });
    text("paths.out", [](RunConfig& c) -> std::string& { return c.paths.out; });

    number("split.train", [](RunConfig& c) -> double& { return c.split.train; });
    number("split.valid", [](RunConfig& c) -> double& { return c.split.valid; });
    number("split.test", [](RunConfig& c) -> double& { return c.split.test; });
    s["split.stratify"] = {K::string, [](RunConfig& c, const ConfigValue& v) {
                             const auto& name = std::get<std::string>(v);
                             if (name == "none" || name.empty()) {
                               c.stratify.reset();
                             } else {
                               c.stratify = parse_label_kind(name);
                             }
                           }};

    s["model.variant"] = {K::string,
                          [](RunConfig& c, const ConfigValue& v) { c.model.variant = parse_variant(std::get<std::string>(v)); }};
    s["model.task"] = {K::string,
                       [](RunConfig& c, const ConfigValue& v) { c.model.task = parse_task(std::get<std::string>(v)); }};
    s["model.optimizer"] = {K::string, [](RunConfig& c, const ConfigValue& v) {
                              c.model.optimizer = parse_optimizer(std::get<std::string>(v));
                            }};
    s["model.kernels"] = {K::list, [](RunConfig& c, const ConfigValue& v) {
                            c.model.kernels.clear();
                            for (double k : std::get<std::vector<double>>(v)) c.model.kernels.push_back(to_count(k, "model.kernels"));
                          }};
    count("model.channels", [](RunConfig& c) -> std::size_t& { return c.model.channels; });
    count("model.fc_layers", [](RunConfig& c) -> std::size_t& { return c.model.fc_layers; });
    count("model.fc_width", [](RunConfig& c) -> std::size_t& { return c.model.fc_width; });
    count("model.char_emb_dim", [](RunConfig& c) -> std::size_t& { return c.model.char_emb_dim; });
    count("model.char_channels", [](RunConfig& c) -> std::size_t& { return c.model.char_channels; });
    count("model.char_fc", [](RunConfig& c) -> std::size_t& { return c.model.char_fc; });
    count("model.lstm_hidden", [](RunConfig& c) -> std::size_t& { return c.model.lstm_hidden; });
    count("model.encoders", [](RunConfig& c) -> std::size_t& { return c.model.encoders; });
    count("model.emb_dim", [](RunConfig& c) -> std::size_t& { return c.model.emb_dim; });
    count("model.div_factor", [](RunConfig& c) -> std::size_t& { return c.model.div_factor; });
    count("model.heads", [](RunConfig& c) -> std::size_t& { return c.model.heads; });
    number("model.lr", [](RunConfig& c) -> double& { return c.model.lr; });
    number("model.lr_decay", [](RunConfig& c) -> double& { return c.model.lr_decay; });
    count("model.batch_size", [](RunConfig& c) -> std::size_t& { return c.model.batch_size; });
    count("model.epochs", [](RunConfig& c) -> std::size_t& { return c.model.epochs; });
    number("model.dropout", [](RunConfig& c) -> double& { return c.model.dropout; });
    count("model.max_words", [](RunConfig& c) -> std::size_t& { return c.model.max_words; });
    count("model.max_chars", [](RunConfig& c) -> std::size_t& { return c.model.max_chars; });
    count("model.vocab_min_freq", [](RunConfig& c) -> std::size_t& { return c.model.vocab_min_freq; });
    count("model.vocab_max_size", [](RunConfig& c) -> std::size_t& { return c.model.vocab_max_size; });
    boolean("model.stem", [](RunConfig& c) -> bool& { return c.model.stem; });
    number("model.sample_factor", [](RunConfig& c) -> double& { return c.model.sample_factor; });
    boolean("model.stratify_valid", [](RunConfig& c) -> bool& { return c.model.stratify_valid; });

    number("augment.time_window_hours", [](RunConfig& c) -> double& { return c.model.augment.time_window_hours; });
    count("augment.k_tokens", [](RunConfig& c) -> std::size_t& { return c.model.augment.k_tokens; });
    number("augment.sample_frac", [](RunConfig& c) -> double& { return c.model.augment.sample_frac; });
    count("augment.num_clusters", [](RunConfig& c) -> std::size_t& { return c.model.augment.num_clusters; });
    count("augment.nc_samples", [](RunConfig& c) -> std::size_t& { return c.model.augment.nc_samples; });
    boolean("augment.history_in_training", [](RunConfig& c) -> bool& { return c.model.augment.history_in_training; });

    count("synthetic.num_regions", [](RunConfig& c) -> std::size_t& { return c.synthetic.num_regions; });
    count("synthetic.grid_rows", [](RunConfig& c) -> std::size_t& { return c.synthetic.grid_rows; });
    count("synthetic.grid_cols", [](RunConfig& c) -> std::size_t& { return c.synthetic.grid_cols; });
    count("synthetic.num_users", [](RunConfig& c) -> std::size_t& { return c.synthetic.num_users; });
    number("synthetic.posts_per_user", [](RunConfig& c) -> double& { return c.synthetic.posts_per_user; });
    number("synthetic.locality", [](RunConfig& c) -> double& { return c.synthetic.locality; });
    count("synthetic.signature_words", [](RunConfig& c) -> std::size_t& { return c.synthetic.signature_words; });
    count("synthetic.shared_words", [](RunConfig& c) -> std::size_t& { return c.synthetic.shared_words; });
    count("synthetic.words_per_post", [](RunConfig& c) -> std::size_t& { return c.synthetic.words_per_post; });
    number("synthetic.signature_rate", [](RunConfig& c) -> double& { return c.synthetic.signature_rate; });
    number("synthetic.time_span_days", [](RunConfig& c) -> double& { return c.synthetic.time_span_days; });
    number("synthetic.origin_lon", [](RunConfig& c) -> double& { return c.synthetic.origin_lon; });
    number("synthetic.origin_lat", [](RunConfig& c) -> double& { return c.synthetic.origin_lat; });
    number("synthetic.cell_degrees", [](RunConfig& c) -> double& { return c.synthetic.cell_degrees; });

    count("synthetic_embeddings.dim", [](RunConfig& c) -> std::size_t& { return c.synthetic_embeddings.dim; });
    number("synthetic_embeddings.signature_noise",
           [](RunConfig& c) -> double& { return c.synthetic_embeddings.signature_noise; });
    number("synthetic_embeddings.shared_scale", [](RunConfig& c) -> double& { return c.synthetic_embeddings.shared_scale; });
    boolean("synthetic_embeddings.write", [](RunConfig& c) -> bool& { return c.write_embeddings; });
    return s;
  }();
  return schema;
}

inline bool kind_matches(FieldSpec::Kind k, const ConfigValue& v) {
  switch (k) {
    case FieldSpec::boolean: return std::holds_alternative<bool>(v);
    case FieldSpec::integer:
    case FieldSpec::number: return std::holds_alternative<double>(v);
    case FieldSpec::string: return std::holds_alternative<std::string>(v);
    case FieldSpec::list: return std::holds_alternative<std::vector<double>>(v);
  }
  return false;
}

}  // namespace detail

// Builds a RunConfig from a parsed table. `model.preset` (if present) is
// applied first so explicit keys override it. Unknown keys and type
// mismatches are errors naming the key and line.
inline RunConfig run_config_from_table(const ConfigTable& table) {
  RunConfig cfg;
  if (auto it = table.find("model.preset"); it != table.end()) {
    if (!std::holds_alternative<std::string>(it->second.value)) {
      throw ConfigError("line " + std::to_string(it->second.line) + ": model.preset must be a string");
    }
    cfg.model = preset(std::get<std::string>(it->second.value));
  }
  const auto& schema = detail::config_schema();
  std::vector<std::pair<std::string, const ConfigEntry*>> ordered;
  for (const auto& [key, entry] : table) {
    if (key == "model.preset") continue;
    if (key == "run.seed") {
      ordered.insert(ordered.begin(), {key, &entry});
    } else {
      ordered.emplace_back(key, &entry);
    }
  }
  for (const auto& [key, entry] : ordered) {
    auto it = schema.find(key);
    if (it == schema.end()) throw ConfigError("line " + std::to_string(entry->line) + ": unknown key " + key);
    if (!detail::kind_matches(it->second.kind, entry->value)) {
      throw ConfigError("line " + std::to_string(entry->line) + ": wrong value type for " + key);
    }
    try {
      it->second.set(cfg, entry->value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(entry->line) + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) { return run_config_from_table(load_config_file(path)); }

// ---------------------------------------------------------------------------
// JSON echo of the model configuration (reports and checkpoints)

inline nlohmann::json to_json(const AugmentConfig& a) {
  return {{"time_window_hours", a.time_window_hours}, {"k_tokens", a.k_tokens},       {"sample_frac", a.sample_frac},
          {"num_clusters", a.num_clusters},           {"nc_samples", a.nc_samples},   {"history_in_training", a.history_in_training}};
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"variant", to_string(c.variant)},
          {"task", to_string(c.task)},
          {"kernels", c.kernels},
          {"channels", c.channels},
          {"fc_layers", c.fc_layers},
          {"fc_width", c.fc_width},
          {"char_emb_dim", c.char_emb_dim},
          {"char_channels", c.char_channels},
          {"char_fc", c.char_fc},
          {"lstm_hidden", c.lstm_hidden},
          {"encoders", c.encoders},
          {"emb_dim", c.emb_dim},
          {"div_factor", c.div_factor},
          {"heads", c.heads},
          {"optimizer", to_string(c.optimizer)},
          {"lr", c.lr},
          {"lr_decay", c.lr_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"dropout", c.dropout},
          {"max_words", c.max_words},
          {"max_chars", c.max_chars},
          {"vocab_min_freq", c.vocab_min_freq},
          {"vocab_max_size", c.vocab_max_size},
          {"stem", c.stem},
          {"sample_factor", c.sample_factor},
          {"stratify_valid", c.stratify_valid},
          {"augment", to_json(c.augment)},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.task = parse_task(j.at("task").get<std::string>());
  c.kernels = j.at("kernels").get<std::vector<std::size_t>>();
  c.channels = j.at("channels").get<std::size_t>();
  c.fc_layers = j.at("fc_layers").get<std::size_t>();
  c.fc_width = j.at("fc_width").get<std::size_t>();
  c.char_emb_dim = j.at("char_emb_dim").get<std::size_t>();
  c.char_channels = j.at("char_channels").get<std::size_t>();
  c.char_fc = j.at("char_fc").get<std::size_t>();
  c.lstm_hidden = j.at("lstm_hidden").get<std::size_t>();
  c.encoders = j.at("encoders").get<std::size_t>();
  c.emb_dim = j.at("emb_dim").get<std::size_t>();
  c.div_factor = j.at("div_factor").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
  c.lr = j.at("lr").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.max_words = j.at("max_words").get<std::size_t>();
  c.max_chars = j.at("max_chars").get<std::size_t>();
  c.vocab_min_freq = j.at("vocab_min_freq").get<std::size_t>();
  c.vocab_max_size = j.at("vocab_max_size").get<std::size_t>();
  c.stem = j.at("stem").get<bool>();
  c.sample_factor = j.at("sample_factor").get<double>();
  c.stratify_valid = j.at("stratify_valid").get<bool>();
  const auto& a = j.at("augment");
  c.augment.time_window_hours = a.at("time_window_hours").get<double>();
  c.augment.k_tokens = a.at("k_tokens").get<std::size_t>();
  c.augment.sample_frac = a.at("sample_frac").get<double>();
  c.augment.num_clusters = a.at("num_clusters").get<std::size_t>();
  c.augment.nc_samples = a.at("nc_samples").get<std::size_t>();
  c.augment.history_in_training = a.at("history_in_training").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace geoloc
