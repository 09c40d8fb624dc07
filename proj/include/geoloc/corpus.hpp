#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoloc/error.hpp"
#include "geoloc/geo.hpp"
#include "geoloc/rng.hpp"

namespace geoloc {

struct TweetRecord {
  std::string id;
  std::string text;
  std::string username;
  std::int64_t created_at = 0;  // seconds since epoch, UTC
  std::optional<double> lon;
  std::optional<double> lat;
  std::optional<std::string> zipcode;
  std::optional<std::string> neighborhood;

  bool has_point() const { return lon.has_value() && lat.has_value(); }
  GeoPoint point() const { return {*lon, *lat}; }

  const std::optional<std::string>& label(LabelKind kind) const {
    return kind == LabelKind::zipcode ? zipcode : neighborhood;
  }
  std::optional<std::string>& label(LabelKind kind) { return kind == LabelKind::zipcode ? zipcode : neighborhood; }

  bool operator==(const TweetRecord&) const = default;
};

struct Bounds {
  double min_lon = 0.0, max_lon = 0.0, min_lat = 0.0, max_lat = 0.0;
};

// Immutable collection of records with derived label sets and bounds.
class Corpus {
 public:
  Corpus() = default;

  explicit Corpus(std::vector<TweetRecord> records) : records_(std::move(records)) {
    std::unordered_set<std::string> ids;
    std::set<std::string> zips, hoods;
    for (const TweetRecord& r : records_) {
      if (!ids.insert(r.id).second) throw Error("duplicate tweet id '" + r.id + "'");
      if (r.lon.has_value() != r.lat.has_value()) throw Error("coordinate pair incomplete for '" + r.id + "'");
      if (r.zipcode) zips.insert(*r.zipcode);
      if (r.neighborhood) hoods.insert(*r.neighborhood);
      if (r.has_point()) {
        if (!bounds_) {
          bounds_ = Bounds{*r.lon, *r.lon, *r.lat, *r.lat};
        } else {
          bounds_->min_lon = std::min(bounds_->min_lon, *r.lon);
          bounds_->max_lon = std::max(bounds_->max_lon, *r.lon);
          bounds_->min_lat = std::min(bounds_->min_lat, *r.lat);
          bounds_->max_lat = std::max(bounds_->max_lat, *r.lat);
        }
      }
    }
    zipcodes_.assign(zips.begin(), zips.end());
    neighborhoods_.assign(hoods.begin(), hoods.end());
  }

  const std::vector<TweetRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  bool empty() const noexcept { return records_.empty(); }
  const TweetRecord& operator[](std::size_t i) const { return records_[i]; }
  auto begin() const { return records_.begin(); }
  auto end() const { return records_.end(); }

  const std::vector<std::string>& zipcodes() const noexcept { return zipcodes_; }
  const std::vector<std::string>& neighborhoods() const noexcept { return neighborhoods_; }
  const std::vector<std::string>& labels(LabelKind k) const {
    return k == LabelKind::zipcode ? zipcodes_ : neighborhoods_;
  }
  const std::optional<Bounds>& bounds() const noexcept { return bounds_; }

  // Records selected by index, in the given order.
  Corpus subset(const std::vector<std::size_t>& indices) const {
    std::vector<TweetRecord> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(records_.at(i));
    return Corpus(std::move(out));
  }

 private:
  std::vector<TweetRecord> records_;
  std::vector<std::string> zipcodes_;
  std::vector<std::string> neighborhoods_;
  std::optional<Bounds> bounds_;
};

// ---------------------------------------------------------------------------
// Ingestion

enum class CorpusFormat { jsonl, csv };

inline CorpusFormat parse_corpus_format(const std::string& s) {
  if (s == "jsonl") return CorpusFormat::jsonl;
  if (s == "csv") return CorpusFormat::csv;
  throw ConfigError("unknown corpus format '" + s + "' (expected jsonl or csv)");
}

struct LoadReport {
  Corpus corpus;
  std::size_t dropped_empty = 0;
  std::size_t dropped_keyword = 0;
};

namespace detail {

inline std::string lowercase(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

inline std::optional<double> parse_double_field(const std::string& s, const char* name, std::size_t line) {
  if (is_blank(s)) return std::nullopt;
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (!is_blank(s.substr(pos))) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError(std::string("invalid ") + name + " '" + s + "'", line);
  }
}

// Epoch seconds, or an ISO-8601 UTC stamp "YYYY-MM-DDTHH:MM:SSZ".
inline std::int64_t parse_timestamp(const std::string& s, std::size_t line) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  char tail = 0;
  if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%c", &y, &mo, &d, &h, &mi, &sec, &tail) == 7 && tail == 'Z') {
    using namespace std::chrono;
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) throw ParseError("invalid created_at '" + s + "'", line);
    return duration_cast<seconds>(sys_days{ymd}.time_since_epoch()).count() + h * 3600 + mi * 60 + sec;
  }
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (!is_blank(s.substr(pos))) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("invalid created_at '" + s + "'", line);
  }
}

// Validates one parsed row; returns false when the row is dropped for empty text.
inline bool finish_record(TweetRecord& r, std::size_t line) {
  if (r.lon.has_value() != r.lat.has_value()) throw ParseError("coordinate pair incomplete", line);
  if (r.lon && (*r.lon < -180.0 || *r.lon > 180.0)) throw ParseError("longitude out of range", line);
  if (r.lat && (*r.lat < -90.0 || *r.lat > 90.0)) throw ParseError("latitude out of range", line);
  if (r.created_at <= 0) throw ParseError("created_at must be positive", line);
  if (r.id.empty()) r.id = "L" + std::to_string(line);
  if (r.zipcode && r.zipcode->empty()) r.zipcode.reset();
  if (r.neighborhood && r.neighborhood->empty()) r.neighborhood.reset();
  return !is_blank(r.text);
}

inline std::optional<std::string> json_label(const nlohmann::json& row, const char* key) {
  if (!row.contains(key) || row[key].is_null()) return std::nullopt;
  if (row[key].is_string()) return row[key].get<std::string>();
  if (row[key].is_number()) return row[key].dump();
  throw Error(std::string("field '") + key + "' must be a string");
}

inline TweetRecord record_from_json(const nlohmann::json& row, std::size_t line) {
  if (!row.is_object()) throw ParseError("expected a JSON object", line);
  TweetRecord r;
  try {
    for (const char* key : {"text", "username", "created_at"}) {
      if (!row.contains(key) || row[key].is_null()) throw ParseError(std::string("missing field '") + key + "'", line);
    }
    r.text = row["text"].get<std::string>();
    r.username = row["username"].get<std::string>();
    const auto& ts = row["created_at"];
    r.created_at = ts.is_string() ? parse_timestamp(ts.get<std::string>(), line) : ts.get<std::int64_t>();
    if (row.contains("id") && !row["id"].is_null()) {
      r.id = row["id"].is_string() ? row["id"].get<std::string>() : row["id"].dump();
    }
    for (const char* key : {"lon", "lat"}) {
      if (!row.contains(key) || row[key].is_null()) continue;
      const double v = row[key].is_string() ? parse_double_field(row[key].get<std::string>(), key, line).value_or(NAN)
                                            : row[key].get<double>();
      if (std::isnan(v)) continue;
      (std::string(key) == "lon" ? r.lon : r.lat) = v;
    }
    r.zipcode = json_label(row, "zipcode");
    r.neighborhood = json_label(row, "neighborhood");
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(std::string("malformed row: ") + e.what(), line);
  }
  return r;
}

// RFC-4180 record reader. Returns false at end of input. `line` is advanced
// past every physical line consumed; `start_line` is where the record began.
inline bool read_csv_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line,
                            std::size_t& start_line) {
  fields.clear();
  if (in.peek() == std::char_traits<char>::eof()) return false;
  start_line = ++line;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (int ch; (ch = in.get()) != std::char_traits<char>::eof();) {
    any = true;
    const char c = static_cast<char>(ch);
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get();
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      fields.push_back(std::move(field));
      return true;
    } else if (c == '\r') {
      if (in.peek() == '\n') continue;
      field += c;
    } else {
      field += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", start_line);
  if (any) fields.push_back(std::move(field));
  return any;
}

inline bool keyword_match(const std::string& text, const std::vector<std::string>& keywords) {
  const std::string lower = lowercase(text);
  return std::any_of(keywords.begin(), keywords.end(),
                     [&](const std::string& k) { return lower.find(k) != std::string::npos; });
}

}  // namespace detail

// Parses a corpus stream. When `keywords` is non-empty only rows whose text
// contains one of them (case-insensitive substring) are kept.
inline LoadReport parse_corpus(std::istream& in, CorpusFormat format, const std::vector<std::string>& keywords = {}) {
  LoadReport report;
  std::vector<TweetRecord> records;
  std::vector<std::string> lowered;
  for (const auto& k : keywords) lowered.push_back(detail::lowercase(k));

  auto accept = [&](TweetRecord r, std::size_t line) {
    if (!detail::finish_record(r, line)) {
      ++report.dropped_empty;
      return;
    }
    if (!lowered.empty() && !detail::keyword_match(r.text, lowered)) {
      ++report.dropped_keyword;
      return;
    }
    records.push_back(std::move(r));
  };

  if (format == CorpusFormat::jsonl) {
    std::string text;
    for (std::size_t line = 1; std::getline(in, text); ++line) {
      if (detail::is_blank(text)) continue;
      nlohmann::json row;
      try {
        row = nlohmann::json::parse(text);
      } catch (const nlohmann::json::exception&) {
        throw ParseError("invalid JSON", line);
      }
      accept(detail::record_from_json(row, line), line);
    }
  } else {
    std::vector<std::string> fields;
    std::size_t line = 0, start = 0;
    if (!detail::read_csv_record(in, fields, line, start)) {
      report.corpus = Corpus{};
      return report;
    }
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < fields.size(); ++i) col[fields[i]] = i;
    for (const char* key : {"text", "username", "created_at"}) {
      if (!col.count(key)) throw ParseError(std::string("CSV header lacks column '") + key + "'", 1);
    }
    auto get = [&](const char* key) -> std::optional<std::string> {
      auto it = col.find(key);
      if (it == col.end()) return std::nullopt;
      if (it->second >= fields.size()) throw ParseError("row has too few fields", start);
      return fields[it->second];
    };
    while (detail::read_csv_record(in, fields, line, start)) {
      if (fields.size() == 1 && detail::is_blank(fields[0])) continue;
      if (fields.size() != col.size()) {
        throw ParseError("expected " + std::to_string(col.size()) + " fields, got " + std::to_string(fields.size()),
                         start);
      }
      TweetRecord r;
      r.id = get("id").value_or("");
      r.text = *get("text");
      r.username = *get("username");
      r.created_at = detail::parse_timestamp(*get("created_at"), start);
      if (auto v = get("lon")) r.lon = detail::parse_double_field(*v, "lon", start);
      if (auto v = get("lat")) r.lat = detail::parse_double_field(*v, "lat", start);
      if (auto v = get("zipcode")) r.zipcode = *v;
      if (auto v = get("neighborhood")) r.neighborhood = *v;
      accept(std::move(r), start);
    }
  }
  try {
    report.corpus = Corpus(std::move(records));
  } catch (const Error& e) {
    throw ParseError(e.what(), 0);
  }
  return report;
}

inline LoadReport load_corpus(const std::string& path, CorpusFormat format,
                              const std::vector<std::string>& keywords = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus file: " + path);
  return parse_corpus(in, format, keywords);
}

// One keyword per line; blank lines and '#' comments ignored.
inline std::vector<std::string> load_keyword_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open keyword file: " + path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (detail::is_blank(line) || line[0] == '#') continue;
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    out.push_back(line);
  }
  return out;
}

inline nlohmann::json record_to_json(const TweetRecord& r) {
  nlohmann::json j = {{"id", r.id}, {"text", r.text}, {"username", r.username}, {"created_at", r.created_at}};
  j["lon"] = r.lon ? nlohmann::json(*r.lon) : nlohmann::json(nullptr);
  j["lat"] = r.lat ? nlohmann::json(*r.lat) : nlohmann::json(nullptr);
  j["zipcode"] = r.zipcode ? nlohmann::json(*r.zipcode) : nlohmann::json(nullptr);
  j["neighborhood"] = r.neighborhood ? nlohmann::json(*r.neighborhood) : nlohmann::json(nullptr);
  return j;
}

inline void write_jsonl(const Corpus& corpus, std::ostream& out) {
  for (const TweetRecord& r : corpus) out << record_to_json(r).dump() << '\n';
}

inline void write_csv(const Corpus& corpus, std::ostream& out) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + '"';
  };
  auto num = [](const std::optional<double>& v) {
    if (!v) return std::string();
    std::ostringstream os;
    os.precision(17);
    os << *v;
    return os.str();
  };
  out << "id,text,username,created_at,lon,lat,zipcode,neighborhood\n";
  for (const TweetRecord& r : corpus) {
    out << quote(r.id) << ',' << quote(r.text) << ',' << quote(r.username) << ',' << r.created_at << ','
        << num(r.lon) << ',' << num(r.lat) << ',' << quote(r.zipcode.value_or("")) << ','
        << quote(r.neighborhood.value_or("")) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splitting and sampling

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct Splits {
  Corpus train;
  Corpus valid;
  Corpus test;
};

namespace detail {

inline std::map<std::string, std::vector<std::size_t>> group_by_label(const Corpus& c, LabelKind kind,
                                                                      const char* op) {
  std::map<std::string, std::vector<std::size_t>> groups;
  std::size_t missing = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& label = c[i].label(kind);
    if (!label) {
      ++missing;
      continue;
    }
    groups[*label].push_back(i);
  }
  if (missing) {
    throw Error(std::string(op) + ": " + std::to_string(missing) + " records lack a " + to_string(kind) + " label");
  }
  return groups;
}

}  // namespace detail

// Deterministic shuffled split. With `stratify`, every label's share of each
// split is within one record of its share of the corpus. Each split keeps
// corpus order.
inline Splits split(const Corpus& corpus, SplitRatios ratios, std::uint64_t seed,
                    std::optional<LabelKind> stratify = std::nullopt) {
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.valid + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  std::vector<std::vector<std::size_t>> groups;
  if (stratify) {
    for (auto& [label, idx] : detail::group_by_label(corpus, *stratify, "split")) groups.push_back(std::move(idx));
  } else {
    std::vector<std::size_t> all(corpus.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    groups.push_back(std::move(all));
  }
  Rng rng(derive_seed(seed, 0x73706c6974));
  std::vector<std::size_t> tr, va, te;
  for (auto& g : groups) {
    rng.shuffle(g);
    const double n = static_cast<double>(g.size());
    const auto cut1 = static_cast<std::size_t>(std::llround(n * ratios.train));
    const auto cut2 = std::min(g.size(), static_cast<std::size_t>(std::llround(n * (ratios.train + ratios.valid))));
    tr.insert(tr.end(), g.begin(), g.begin() + static_cast<std::ptrdiff_t>(cut1));
    va.insert(va.end(), g.begin() + static_cast<std::ptrdiff_t>(cut1), g.begin() + static_cast<std::ptrdiff_t>(cut2));
    te.insert(te.end(), g.begin() + static_cast<std::ptrdiff_t>(cut2), g.end());
  }
  for (auto* v : {&tr, &va, &te}) std::sort(v->begin(), v->end());
  return {corpus.subset(tr), corpus.subset(va), corpus.subset(te)};
}

inline std::map<std::string, std::size_t> class_counts(const Corpus& c, LabelKind kind) {
  std::map<std::string, std::size_t> counts;
  for (const TweetRecord& r : c) {
    if (const auto& l = r.label(kind)) ++counts[*l];
  }
  return counts;
}

// Minority-class oversampling. Class c with n_c records is brought to
// round(n_c + s * (n_max - n_c)) by appending draws with replacement; the
// copies get ids suffixed "#os<k>". s = 0 is the identity, s = 1 balances.
inline Corpus oversample(const Corpus& train, LabelKind kind, double sample_factor, std::uint64_t seed) {
  if (!(sample_factor >= 0.0 && sample_factor <= 1.0)) throw ConfigError("sample_factor must be in [0, 1]");
  const auto groups = detail::group_by_label(train, kind, "oversample");
  if (groups.empty()) throw Error("oversample: no classes");
  std::size_t n_max = 0;
  for (const auto& [label, idx] : groups) n_max = std::max(n_max, idx.size());
  std::vector<TweetRecord> out(train.records());
  Rng rng(derive_seed(seed, 0x6f7673));
  std::size_t copy = 0;
  for (const auto& [label, idx] : groups) {
    const double n_c = static_cast<double>(idx.size());
    const auto target = static_cast<std::size_t>(std::llround(n_c + sample_factor * (static_cast<double>(n_max) - n_c)));
    for (std::size_t k = idx.size(); k < target; ++k) {
      TweetRecord r = train[idx[rng.index(idx.size())]];
      r.id += "#os" + std::to_string(++copy);
      out.push_back(std::move(r));
    }
  }
  return Corpus(std::move(out));
}

struct StratifiedSample {
  Corpus corpus;
  std::vector<std::string> dropped_classes;  // classes below the floor
};

// Balanced subset: every retained class keeps exactly min-count records
// (sampled without replacement), classes with fewer than `floor` records are
// dropped. Corpus order is preserved.
inline StratifiedSample stratified_validation(const Corpus& valid, LabelKind kind, std::uint64_t seed,
                                              std::size_t floor = 1) {
  auto groups = detail::group_by_label(valid, kind, "stratified_validation");
  StratifiedSample result;
  for (auto it = groups.begin(); it != groups.end();) {
    if (it->second.size() < floor) {
      result.dropped_classes.push_back(it->first);
      it = groups.erase(it);
    } else {
      ++it;
    }
  }
  if (groups.size() < 2) throw Error("stratified_validation needs at least 2 classes");
  std::size_t m = SIZE_MAX;
  for (const auto& [label, idx] : groups) m = std::min(m, idx.size());
  Rng rng(derive_seed(seed, 0x7374726174));
  std::vector<std::size_t> keep;
  for (auto& [label, idx] : groups) {
    rng.shuffle(idx);
    keep.insert(keep.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(m));
  }
  std::sort(keep.begin(), keep.end());
  result.corpus = valid.subset(keep);
  return result;
}

}  // namespace geoloc
