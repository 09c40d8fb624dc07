#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "geoloc/corpus.hpp"
#include "geoloc/error.hpp"
#include "geoloc/geo.hpp"
#include "geoloc/rng.hpp"

// Synthetic corpora with planted geographic signal. Regions are cells of an
// axis-aligned lon/lat grid; each user has a home cell; post text mixes the
// cell's signature vocabulary with a region-independent shared vocabulary.
namespace geoloc {

struct SyntheticSpec {
  std::size_t num_regions = 4;
  std::size_t grid_rows = 2;
  std::size_t grid_cols = 2;
  std::size_t num_users = 100;
  double posts_per_user = 20.0;  // mean; per-user count is 1 + Poisson(mean - 1)
  double locality = 0.9;         // probability a post comes from the home cell
  std::size_t signature_words = 20;
  std::size_t shared_words = 200;
  std::size_t words_per_post = 8;
  double signature_rate = 0.5;  // chance each word is drawn from the signature vocabulary
  double time_span_days = 7.0;
  double origin_lon = -84.55;
  double origin_lat = 33.65;
  double cell_degrees = 0.05;
  std::int64_t start_time = 1514764800;  // 2018-01-01T00:00:00Z
  std::uint64_t seed = 1;

  void validate() const {
    if (num_regions != grid_rows * grid_cols) throw ConfigError("synthetic: num_regions must equal grid_rows * grid_cols");
    if (num_regions < 1 || num_users < 1 || signature_words < 1 || shared_words < 1 || words_per_post < 1) {
      throw ConfigError("synthetic: all counts must be >= 1");
    }
    if (num_regions > 1600 || signature_words > 1600 || shared_words > 1600) {
      throw ConfigError("synthetic: region and vocabulary counts are limited to 1600");
    }
    if (!(posts_per_user >= 1.0)) throw ConfigError("synthetic: posts_per_user must be >= 1");
    if (!(locality >= 0.0 && locality <= 1.0)) throw ConfigError("synthetic: locality must be in [0, 1]");
    if (!(signature_rate >= 0.0 && signature_rate <= 1.0)) throw ConfigError("synthetic: signature_rate must be in [0, 1]");
    if (!(time_span_days > 0.0)) throw ConfigError("synthetic: time_span_days must be positive");
    if (!(cell_degrees > 0.0)) throw ConfigError("synthetic: cell_degrees must be positive");
    const double max_lon = origin_lon + cell_degrees * static_cast<double>(grid_cols);
    const double max_lat = origin_lat + cell_degrees * static_cast<double>(grid_rows);
    if (!GeoPoint{origin_lon, origin_lat}.valid() || !GeoPoint{max_lon, max_lat}.valid()) {
      throw ConfigError("synthetic: grid extends outside valid coordinates");
    }
    if (start_time <= 0) throw ConfigError("synthetic: start_time must be positive");
  }
};

namespace detail {

// 40 consonant-vowel syllables. Words built from them end in a vowel other
// than 'y', so the stemmer leaves them alone.
inline std::string syllable(std::size_t i) {
  static constexpr char kCons[] = "bdfgklmprtvz";
  static constexpr char kVow[] = "aeiou";
  return {kCons[(i / 5) % 8], kVow[i % 5]};
}

}  // namespace detail

inline std::string synthetic_signature_word(std::size_t region, std::size_t j) {
  return "zo" + detail::syllable(region / 40) + detail::syllable(region % 40) + detail::syllable(j / 40) +
         detail::syllable(j % 40);
}

inline std::string synthetic_shared_word(std::size_t j) {
  return "ka" + detail::syllable(j / 40) + detail::syllable(j % 40);
}

inline std::string synthetic_zipcode(std::size_t region) { return std::to_string(30300 + region); }

inline std::string synthetic_neighborhood(std::size_t region) {
  std::ostringstream os;
  os << 'N' << std::setw(2) << std::setfill('0') << region;
  return os.str();
}

struct CellBounds {
  double min_lon, max_lon, min_lat, max_lat;
};

inline CellBounds synthetic_cell(const SyntheticSpec& spec, std::size_t region) {
  const double row = static_cast<double>(region / spec.grid_cols);
  const double col = static_cast<double>(region % spec.grid_cols);
  const double lon0 = spec.origin_lon + col * spec.cell_degrees;
  const double lat0 = spec.origin_lat + row * spec.cell_degrees;
  return {lon0, lon0 + spec.cell_degrees, lat0, lat0 + spec.cell_degrees};
}

// Grid cells as square polygons, labelled like the generated records.
inline RegionSet synthetic_regions(const SyntheticSpec& spec, LabelKind kind) {
  spec.validate();
  RegionSet set;
  set.kind = kind;
  for (std::size_t r = 0; r < spec.num_regions; ++r) {
    const CellBounds c = synthetic_cell(spec, r);
    Ring ring{{c.min_lon, c.min_lat}, {c.max_lon, c.min_lat}, {c.max_lon, c.max_lat}, {c.min_lon, c.max_lat},
              {c.min_lon, c.min_lat}};
    set.regions.push_back(
        {kind == LabelKind::zipcode ? synthetic_zipcode(r) : synthetic_neighborhood(r), {Polygon{{ring}}}});
  }
  return set;
}

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<std::size_t> home_region;  // per user index
  std::vector<std::size_t> post_region;  // per record
  std::size_t home_posts = 0;

  double home_fraction() const {
    return corpus.empty() ? 0.0 : static_cast<double>(home_posts) / static_cast<double>(corpus.size());
  }
};

// A post comes from the author's home cell with probability `locality`,
// otherwise from a cell drawn uniformly over all cells (home included), so
// the expected home fraction is locality + (1 - locality) / num_regions.
inline SyntheticCorpus generate_synthetic_detailed(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0x73796e));
  SyntheticCorpus out;
  std::vector<TweetRecord> records;
  const double span = spec.time_span_days * 86400.0;
  for (std::size_t u = 0; u < spec.num_users; ++u) {
    const std::size_t home = rng.index(spec.num_regions);
    out.home_region.push_back(home);
    const std::size_t posts = 1 + rng.poisson(spec.posts_per_user - 1.0);
    std::vector<double> times(posts);
    for (double& t : times) t = rng.uniform() * span;
    std::sort(times.begin(), times.end());
    std::ostringstream uname;
    uname << "user" << std::setw(4) << std::setfill('0') << u;
    for (std::size_t p = 0; p < posts; ++p) {
      const std::size_t region = rng.bernoulli(spec.locality) ? home : rng.index(spec.num_regions);
      if (region == home) ++out.home_posts;
      std::string text;
      for (std::size_t w = 0; w < spec.words_per_post; ++w) {
        if (w) text += ' ';
        if (rng.bernoulli(spec.signature_rate)) {
          text += synthetic_signature_word(region, rng.index(spec.signature_words));
        } else {
          text += synthetic_shared_word(rng.index(spec.shared_words));
        }
      }
      const CellBounds c = synthetic_cell(spec, region);
      const double fx = 1e-6 + (1.0 - 2e-6) * rng.uniform();
      const double fy = 1e-6 + (1.0 - 2e-6) * rng.uniform();
      TweetRecord r;
      std::ostringstream id;
      id << 't' << std::setw(6) << std::setfill('0') << records.size();
      r.id = id.str();
      r.text = std::move(text);
      r.username = uname.str();
      r.created_at = spec.start_time + static_cast<std::int64_t>(times[p]);
      r.lon = c.min_lon + fx * spec.cell_degrees;
      r.lat = c.min_lat + fy * spec.cell_degrees;
      r.zipcode = synthetic_zipcode(region);
      r.neighborhood = synthetic_neighborhood(region);
      records.push_back(std::move(r));
      out.post_region.push_back(region);
    }
  }
  out.corpus = Corpus(std::move(records));
  return out;
}

inline Corpus generate_synthetic(const SyntheticSpec& spec) { return generate_synthetic_detailed(spec).corpus; }

struct SyntheticEmbeddingSpec {
  std::size_t dim = 100;
  double signature_noise = 0.5;  // spread of signature words around their region direction
  double shared_scale = 1.0;     // norm scale of shared-word vectors
  std::uint64_t seed = 1;
};

// Writes glove-style text vectors for the synthetic vocabulary. Signature
// words of one region share a unit direction plus noise; shared words are
// isotropic noise.
inline void write_synthetic_embeddings(const SyntheticSpec& spec, const SyntheticEmbeddingSpec& es, std::ostream& out) {
  spec.validate();
  if (es.dim < 1) throw ConfigError("synthetic embeddings: dim must be >= 1");
  Rng rng(derive_seed(es.seed, 0x656d62));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(es.dim));
  std::vector<std::vector<double>> centers(spec.num_regions, std::vector<double>(es.dim));
  for (auto& c : centers) {
    double norm = 0.0;
    for (double& v : c) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : c) v /= norm;
  }
  out << std::setprecision(6);
  auto emit = [&](const std::string& word, const std::vector<double>& v) {
    out << word;
    for (double x : v) out << ' ' << x;
    out << '\n';
  };
  std::vector<double> v(es.dim);
  for (std::size_t r = 0; r < spec.num_regions; ++r) {
    for (std::size_t j = 0; j < spec.signature_words; ++j) {
      for (std::size_t k = 0; k < es.dim; ++k) v[k] = centers[r][k] + es.signature_noise * inv_sqrt_d * rng.normal();
      emit(synthetic_signature_word(r, j), v);
    }
  }
  for (std::size_t j = 0; j < spec.shared_words; ++j) {
    for (std::size_t k = 0; k < es.dim; ++k) v[k] = es.shared_scale * inv_sqrt_d * rng.normal();
    emit(synthetic_shared_word(j), v);
  }
}

}  // namespace geoloc
