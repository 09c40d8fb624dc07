#pragma once

#include <map>
#include <string>
#include <vector>

#include "geoloc/corpus.hpp"
#include "geoloc/rng.hpp"

namespace geoloc::testing {

// Records with zipcode labels in the given counts, in shuffled order.
inline Corpus labelled_corpus(const std::map<std::string, std::size_t>& counts) {
  std::vector<TweetRecord> records;
  std::size_t n = 0;
  for (const auto& [label, c] : counts) {
    for (std::size_t i = 0; i < c; ++i) {
      TweetRecord r;
      r.id = label + "-" + std::to_string(i);
      r.text = "word " + label;
      r.username = "u" + std::to_string(n % 7);
      r.created_at = 1514764800 + static_cast<std::int64_t>(n) * 60;
      r.zipcode = label;
      records.push_back(std::move(r));
      ++n;
    }
  }
  Rng rng(n);
  rng.shuffle(records);
  return Corpus(std::move(records));
}

// Random class-count map: 2-6 classes with 1-200 records each.
inline std::map<std::string, std::size_t> random_counts(Rng& rng, std::size_t min_classes = 2) {
  std::map<std::string, std::size_t> counts;
  const std::size_t classes = min_classes + rng.index(7 - min_classes);
  for (std::size_t c = 0; c < classes; ++c) counts["c" + std::to_string(c)] = 1 + rng.index(200);
  return counts;
}

}  // namespace geoloc::testing
