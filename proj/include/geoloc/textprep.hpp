#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoloc/error.hpp"

namespace geoloc {

using StopwordSet = std::unordered_set<std::string>;

// English stopwords; identical to data/stopwords_en.txt.
inline constexpr std::array<std::string_view, 179> kDefaultStopwords = {
    "i",          "me",       "my",       "myself",   "we",       "our",      "ours",     "ourselves", "you",
    "you're",     "you've",   "you'll",   "you'd",    "your",     "yours",    "yourself", "yourselves", "he",
    "him",        "his",      "himself",  "she",      "she's",    "her",      "hers",     "herself",  "it",
    "it's",       "its",      "itself",   "they",     "them",     "their",    "theirs",   "themselves", "what",
    "which",      "who",      "whom",     "this",     "that",     "that'll",  "these",    "those",    "am",
    "is",         "are",      "was",      "were",     "be",       "been",     "being",    "have",     "has",
    "had",        "having",   "do",       "does",     "did",      "doing",    "a",        "an",       "the",
    "and",        "but",      "if",       "or",       "because",  "as",       "until",    "while",    "of",
    "at",         "by",       "for",      "with",     "about",    "against",  "between",  "into",     "through",
    "during",     "before",   "after",    "above",    "below",    "to",       "from",     "up",       "down",
    "in",         "out",      "on",       "off",      "over",     "under",    "again",    "further",  "then",
    "once",       "here",     "there",    "when",     "where",    "why",      "how",      "all",      "any",
    "both",       "each",     "few",      "more",     "most",     "other",    "some",     "such",     "no",
    "nor",        "not",      "only",     "own",      "same",     "so",       "than",     "too",      "very",
    "s",          "t",        "can",      "will",     "just",     "don",      "don't",    "should",   "should've",
    "now",        "d",        "ll",       "m",        "o",        "re",       "ve",       "y",        "ain",
    "aren",       "aren't",   "couldn",   "couldn't", "didn",     "didn't",   "doesn",    "doesn't",  "hadn",
    "hadn't",     "hasn",     "hasn't",   "haven",    "haven't",  "isn",      "isn't",    "ma",       "mightn",
    "mightn't",   "mustn",    "mustn't",  "needn",    "needn't",  "shan",     "shan't",   "shouldn",  "shouldn't",
    "wasn",       "wasn't",   "weren",    "weren't",  "won",      "won't",    "wouldn",   "wouldn't",
};

inline std::shared_ptr<const StopwordSet> default_stopwords() {
  static const std::shared_ptr<const StopwordSet> set = [] {
    auto s = std::make_shared<StopwordSet>();
    for (std::string_view w : kDefaultStopwords) s->emplace(w);
    return s;
  }();
  return set;
}

// Plain text, one word per line; blank lines and '#' comments ignored.
inline std::shared_ptr<const StopwordSet> load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open stopword file: " + path);
  auto set = std::make_shared<StopwordSet>();
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    std::size_t b = 0;
    while (b < line.size() && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
    line.erase(0, b);
    if (line.empty() || line[0] == '#') continue;
    for (char& c : line) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    set->insert(line);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Stemming

namespace detail {

inline bool ends_with(std::string_view w, std::string_view suffix) {
  return w.size() >= suffix.size() && w.substr(w.size() - suffix.size()) == suffix;
}

inline bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

inline bool has_vowel(std::string_view w) { return std::any_of(w.begin(), w.end(), is_vowel); }

// Drops one letter of a trailing double consonant ("runn" -> "run"), except ll/ss/zz.
inline void undouble(std::string& w) {
  const std::size_t n = w.size();
  if (n >= 2 && w[n - 1] == w[n - 2] && std::isalpha(static_cast<unsigned char>(w[n - 1])) && !is_vowel(w[n - 1]) &&
      w[n - 1] != 'l' && w[n - 1] != 's' && w[n - 1] != 'z') {
    w.pop_back();
  }
}

// One suffix rule; returns true when the word changed.
inline bool stem_once(std::string& w) {
  auto stem_len = [&](std::size_t suffix) { return w.size() - suffix; };
  if (ends_with(w, "sses")) {
    w.resize(w.size() - 2);
    return true;
  }
  if (ends_with(w, "ies") && stem_len(3) >= 2) {
    w.resize(w.size() - 3);
    w += 'y';
    return true;
  }
  if (ends_with(w, "tion") && stem_len(4) >= 3) {
    w.resize(w.size() - 3);
    return true;
  }
  if (ends_with(w, "ing") && stem_len(3) >= 3 && has_vowel(std::string_view(w).substr(0, stem_len(3)))) {
    w.resize(w.size() - 3);
    undouble(w);
    return true;
  }
  if (ends_with(w, "ed") && stem_len(2) >= 3 && has_vowel(std::string_view(w).substr(0, stem_len(2)))) {
    w.resize(w.size() - 2);
    undouble(w);
    return true;
  }
  if (ends_with(w, "ly") && stem_len(2) >= 3) {
    w.resize(w.size() - 2);
    return true;
  }
  if (ends_with(w, "s") && !ends_with(w, "ss") && !ends_with(w, "us") && !ends_with(w, "is") && w.size() >= 4) {
    w.pop_back();
    return true;
  }
  return false;
}

}  // namespace detail

// Rule-based suffix stripper (-sses, -ies, -tion, -ing, -ed, -ly, -s) applied
// until no rule fires, which makes stem(stem(w)) == stem(w).
inline std::string stem(std::string word) {
  while (detail::stem_once(word)) {
  }
  return word;
}

// ---------------------------------------------------------------------------
// Normalization

struct NormalizeOptions {
  std::size_t max_words = 64;
  bool stem = true;
  std::shared_ptr<const StopwordSet> stopwords = default_stopwords();
};

struct TokenizedTweet {
  std::vector<std::string> tokens;
  std::u32string char_seq;  // lowercased text without URLs and @mentions
};

namespace detail {

// Decodes UTF-8; invalid sequences become U+FFFD.
inline std::u32string decode_utf8(std::string_view s) {
  std::u32string out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      len = 1;
      cp = c;
    } else if ((c >> 5) == 0x6) {
      len = 2;
      cp = c & 0x1f;
    } else if ((c >> 4) == 0xe) {
      len = 3;
      cp = c & 0x0f;
    } else if ((c >> 3) == 0x1e) {
      len = 4;
      cp = c & 0x07;
    }
    bool ok = len > 0 && i + len <= s.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc >> 6) != 0x2) ok = false;
      cp = (cp << 6) | (cc & 0x3f);
    }
    if (!ok) {
      out.push_back(U'�');
      ++i;
      continue;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

inline bool is_dropped_chunk(std::string_view chunk) {
  return chunk.starts_with("http://") || chunk.starts_with("https://") || chunk.starts_with("www.") ||
         chunk.starts_with("@");
}

}  // namespace detail

// Lowercases, strips URLs, @mentions and non-alphanumeric characters, drops
// stopwords (checked before and after stemming), stems, and truncates.
inline TokenizedTweet normalize(std::string_view text, const NormalizeOptions& opts = {}) {
  TokenizedTweet out;
  const StopwordSet* stop = opts.stopwords ? opts.stopwords.get() : default_stopwords().get();
  std::string lowered(text);
  for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));

  std::string kept;  // whitespace-collapsed text without URLs/mentions
  std::size_t i = 0;
  while (i < lowered.size()) {
    while (i < lowered.size() && std::isspace(static_cast<unsigned char>(lowered[i]))) ++i;
    std::size_t j = i;
    while (j < lowered.size() && !std::isspace(static_cast<unsigned char>(lowered[j]))) ++j;
    if (j > i) {
      const std::string_view chunk(lowered.data() + i, j - i);
      if (!detail::is_dropped_chunk(chunk)) {
        if (!kept.empty()) kept += ' ';
        kept.append(chunk);
      }
    }
    i = j;
  }
  out.char_seq = detail::decode_utf8(kept);

  std::string word;
  auto flush = [&]() {
    if (word.empty()) return;
    if (out.tokens.size() < opts.max_words && !stop->count(word)) {
      std::string w = opts.stem ? stem(word) : word;
      if (!stop->count(w)) out.tokens.push_back(std::move(w));
    }
    word.clear();
  };
  for (char c : kept) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      word += c;
    } else {
      flush();
    }
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// Vocabularies

// Token ids: 0 = padding, 1 = unknown, then tokens by (frequency desc, token asc).
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocab() : tokens_{"<pad>", "<unk>"}, freqs_{0, 0} { reindex(); }

  Vocab(std::vector<std::string> tokens, std::vector<std::size_t> freqs)
      : tokens_(std::move(tokens)), freqs_(std::move(freqs)) {
    if (tokens_.size() < 2 || tokens_.size() != freqs_.size() || tokens_[0] != "<pad>" || tokens_[1] != "<unk>") {
      throw Error("malformed vocabulary");
    }
    reindex();
  }

  int id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::size_t frequency(int id) const { return freqs_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  nlohmann::json to_json() const { return {{"tokens", tokens_}, {"freqs", freqs_}}; }
  static Vocab from_json(const nlohmann::json& j) {
    return Vocab(j.at("tokens").get<std::vector<std::string>>(), j.at("freqs").get<std::vector<std::size_t>>());
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_ && freqs_ == o.freqs_; }

 private:
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) throw Error("duplicate vocabulary token");
    }
  }

  std::vector<std::string> tokens_;
  std::vector<std::size_t> freqs_;
  std::unordered_map<std::string, int> index_;
};

// Keeps tokens with frequency >= min_freq; the result, pad and unk included,
// has at most max_size entries.
inline Vocab build_vocab(const std::vector<std::vector<std::string>>& docs, std::size_t min_freq, std::size_t max_size) {
  if (max_size < 2) throw ConfigError("vocabulary max_size must be >= 2");
  std::map<std::string, std::size_t> counts;
  for (const auto& doc : docs)
    for (const auto& t : doc) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (n >= min_freq && tok != "<pad>" && tok != "<unk>") ranked.emplace_back(tok, n);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > max_size - 2) ranked.resize(max_size - 2);
  std::vector<std::string> tokens{"<pad>", "<unk>"};
  std::vector<std::size_t> freqs{0, 0};
  for (auto& [tok, n] : ranked) {
    tokens.push_back(tok);
    freqs.push_back(n);
  }
  return Vocab(std::move(tokens), std::move(freqs));
}

// Fixed character alphabet: a-z, 0-9, space and 12 punctuation marks.
class CharVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789 .,!?'\"-:;()#";

  static const CharVocab& standard() {
    static const CharVocab v;
    return v;
  }

  int id(char32_t c) const {
    if (c < 128) {
      const int v = table_[c];
      return v ? v : kUnk;
    }
    return kUnk;
  }
  std::size_t size() const noexcept { return kAlphabet.size() + 2; }

 private:
  CharVocab() {
    table_.fill(0);
    for (std::size_t i = 0; i < kAlphabet.size(); ++i) table_[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i) + 2;
  }
  std::array<int, 128> table_{};
};

// Right-padded (with 0) or truncated to exactly max_words ids.
inline std::vector<int> encode_words(const std::vector<std::string>& tokens, const Vocab& vocab, std::size_t max_words) {
  std::vector<int> ids(max_words, Vocab::kPad);
  for (std::size_t i = 0; i < tokens.size() && i < max_words; ++i) ids[i] = vocab.id(tokens[i]);
  return ids;
}

inline std::vector<int> encode_chars(std::u32string_view chars, const CharVocab& vocab, std::size_t max_chars) {
  std::vector<int> ids(max_chars, CharVocab::kPad);
  for (std::size_t i = 0; i < chars.size() && i < max_chars; ++i) ids[i] = vocab.id(chars[i]);
  return ids;
}

inline std::vector<int> encode_chars(std::string_view utf8, const CharVocab& vocab, std::size_t max_chars) {
  return encode_chars(detail::decode_utf8(utf8), vocab, max_chars);
}

}  // namespace geoloc
