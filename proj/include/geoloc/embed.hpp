#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "geoloc/error.hpp"
#include "geoloc/rng.hpp"
#include "geoloc/tensor.hpp"
#include "geoloc/textprep.hpp"

namespace geoloc {

// Rows aligned with Vocab ids. Row 0 (padding) is zero; row 1 (unknown) is
// the mean of the vectors found in the file.
struct EmbeddingTable {
  Tensor rows;
  std::size_t found = 0;   // vocabulary tokens (pad/unk excluded) with a file vector
  std::size_t total = 0;   // vocabulary tokens (pad/unk excluded)
  double coverage() const { return total == 0 ? 1.0 : static_cast<double>(found) / static_cast<double>(total); }
  std::size_t dim() const { return rows.rank() == 2 ? rows.dim(1) : 0; }
  std::size_t size() const { return rows.rank() == 2 ? rows.dim(0) : 0; }
  std::span<const double> row(int id) const { return rows.row(static_cast<std::size_t>(id)); }
};

struct EmbeddingLoadOptions {
  double fallback_scale = 0.1;  // missing words get uniform(-scale, scale) vectors
  bool match_stems = true;      // file words may match vocabulary entries through the stemmer
};

// Text format: "word v1 ... vd" per line, whitespace separated. An optional
// word2vec-style header "count dim" on the first line is skipped.
inline EmbeddingTable load_embeddings(std::istream& in, const Vocab& vocab, const EmbeddingLoadOptions& opts = {}) {
  const std::size_t V = vocab.size();
  std::size_t d = 0;
  std::vector<std::vector<double>> vecs(V);
  std::vector<bool> exact(V, false);
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    std::vector<double> v;
    for (std::string tok; ls >> tok;) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("malformed embedding value '" + tok + "'", line_no);
      }
    }
    if (line_no == 1 && v.size() == 1 && word.find_first_not_of("0123456789") == std::string::npos) continue;
    if (v.empty()) throw ParseError("embedding line has no values", line_no);
    if (d == 0) d = v.size();
    if (v.size() != d) {
      throw ParseError("inconsistent embedding dimension " + std::to_string(v.size()) + " (expected " +
                           std::to_string(d) + ")",
                       line_no);
    }
    for (auto& w : v)
      if (!std::isfinite(w)) throw ParseError("non-finite embedding value", line_no);
    std::string lower = word;
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (vocab.contains(lower)) {
      const int id = vocab.id(lower);
      if (id > Vocab::kUnk && !exact[id]) {
        vecs[id] = v;
        exact[id] = true;
      }
    } else if (opts.match_stems) {
      const std::string s = stem(lower);
      if (vocab.contains(s)) {
        const int id = vocab.id(s);
        if (id > Vocab::kUnk && vecs[id].empty()) vecs[id] = v;
      }
    }
  }
  if (d == 0) throw ParseError("embedding file contains no vectors", line_no);

  EmbeddingTable table;
  table.rows = Tensor(Shape{V, d});
  table.total = V >= 2 ? V - 2 : 0;
  std::vector<double> mean(d, 0.0);
  for (std::size_t id = 2; id < V; ++id) {
    auto row = table.rows.row(id);
    if (!vecs[id].empty()) {
      ++table.found;
      for (std::size_t k = 0; k < d; ++k) {
        row[k] = vecs[id][k];
        mean[k] += vecs[id][k];
      }
    } else {
      Rng rng(fnv1a(vocab.token(static_cast<int>(id))));
      for (std::size_t k = 0; k < d; ++k) row[k] = rng.uniform(-opts.fallback_scale, opts.fallback_scale);
    }
  }
  if (table.found > 0 && V > 1) {
    auto unk = table.rows.row(Vocab::kUnk);
    for (std::size_t k = 0; k < d; ++k) unk[k] = mean[k] / static_cast<double>(table.found);
  }
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path, const Vocab& vocab, const EmbeddingLoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open embeddings file: " + path);
  return load_embeddings(in, vocab, opts);
}

// Mean of the non-padding rows; all-padding input gives the zero vector.
inline std::vector<double> sentence_embedding(std::span<const int> ids, const EmbeddingTable& table) {
  const std::size_t d = table.dim();
  std::vector<double> out(d, 0.0);
  std::size_t n = 0;
  for (int id : ids) {
    if (id == Vocab::kPad) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= table.size()) throw Error("token id out of embedding range");
    const auto row = table.row(id);
    for (std::size_t k = 0; k < d; ++k) out[k] += row[k];
    ++n;
  }
  if (n > 0)
    for (double& v : out) v /= static_cast<double>(n);
  return out;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error("cosine_similarity: dimension mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

}  // namespace geoloc
