#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoloc/corpus.hpp"
#include "geoloc/embed.hpp"
#include "geoloc/error.hpp"
#include "geoloc/rng.hpp"
#include "geoloc/tensor.hpp"

namespace geoloc {

struct AugmentConfig {
  double time_window_hours = 72.0;
  std::size_t k_tokens = 16;
  double sample_frac = 1.0;
  std::size_t num_clusters = 9;
  std::size_t nc_samples = 35;
  bool history_in_training = false;  // also augment training inputs from the user history

  void validate() const {
    if (!(time_window_hours >= 0.0) || !std::isfinite(time_window_hours)) {
      throw ConfigError("augment.time_window_hours must be a non-negative number");
    }
    if (!(sample_frac >= 0.0 && sample_frac <= 1.0)) throw ConfigError("augment.sample_frac must be in [0, 1]");
  }
};

// ---------------------------------------------------------------------------
// User history

struct HistoryItem {
  std::string id;
  std::int64_t created_at = 0;
  std::optional<GeoPoint> location;
  std::vector<std::string> tokens;

  bool operator==(const HistoryItem& o) const {
    return id == o.id && created_at == o.created_at && tokens == o.tokens &&
           location.has_value() == o.location.has_value() &&
           (!location || (location->lon == o.location->lon && location->lat == o.location->lat));
  }
};

class UserDict {
 public:
  UserDict() = default;

  // tokens[i] holds the normalized tokens of train.records()[i].
  UserDict(const Corpus& train, const std::vector<std::vector<std::string>>& tokens) {
    if (tokens.size() != train.size()) throw Error("user dictionary: token lists do not match corpus size");
    for (std::size_t i = 0; i < train.size(); ++i) {
      const TweetRecord& r = train.records()[i];
      HistoryItem item{r.id, r.created_at, std::nullopt, tokens[i]};
      if (r.has_point()) item.location = r.point();
      users_[r.username].push_back(std::move(item));
    }
    for (auto& [user, items] : users_) {
      std::stable_sort(items.begin(), items.end(),
                       [](const HistoryItem& a, const HistoryItem& b) { return a.created_at < b.created_at; });
    }
  }

  const std::vector<HistoryItem>* find(const std::string& username) const {
    auto it = users_.find(username);
    return it == users_.end() ? nullptr : &it->second;
  }
  std::size_t size() const noexcept { return users_.size(); }
  bool empty() const noexcept { return users_.empty(); }
  const std::map<std::string, std::vector<HistoryItem>>& users() const noexcept { return users_; }

  std::vector<std::string> tweet_ids() const {
    std::vector<std::string> ids;
    for (const auto& [user, items] : users_)
      for (const auto& item : items) ids.push_back(item.id);
    return ids;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [user, items] : users_) {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& it : items) {
        nlohmann::json e = {{"id", it.id}, {"created_at", it.created_at}, {"tokens", it.tokens}};
        e["location"] = it.location ? nlohmann::json::array({it.location->lon, it.location->lat}) : nlohmann::json(nullptr);
        arr.push_back(std::move(e));
      }
      j[user] = std::move(arr);
    }
    return j;
  }

  static UserDict from_json(const nlohmann::json& j) {
    UserDict d;
    for (const auto& [user, arr] : j.items()) {
      auto& items = d.users_[user];
      for (const auto& e : arr) {
        HistoryItem it;
        it.id = e.at("id").get<std::string>();
        it.created_at = e.at("created_at").get<std::int64_t>();
        it.tokens = e.at("tokens").get<std::vector<std::string>>();
        if (!e.at("location").is_null()) it.location = GeoPoint{e["location"][0].get<double>(), e["location"][1].get<double>()};
        items.push_back(std::move(it));
      }
    }
    return d;
  }

  bool operator==(const UserDict& o) const { return users_ == o.users_; }

 private:
  std::map<std::string, std::vector<HistoryItem>> users_;
};

inline UserDict build_user_dict(const Corpus& train, const NormalizeOptions& opts = {}) {
  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(train.size());
  for (const auto& r : train.records()) tokens.push_back(normalize(r.text, opts).tokens);
  return UserDict(train, tokens);
}

struct HistoryQuery {
  std::string id;
  std::string username;
  std::int64_t created_at = 0;
};

// Appends the first k_tokens of the earliest ceil(sample_frac * |f|) history
// items, where f holds the author's items within the symmetric time window
// (the query tweet itself excluded). The result is cut to max_words.
inline std::vector<std::string> augment_with_history(std::vector<std::string> tokens, const HistoryQuery& q,
                                                     const UserDict& dict, const AugmentConfig& cfg,
                                                     std::size_t max_words) {
  const auto* items = dict.find(q.username);
  if (items && cfg.sample_frac > 0.0 && cfg.k_tokens > 0) {
    const double window = cfg.time_window_hours * 3600.0;
    std::vector<const HistoryItem*> eligible;
    for (const auto& it : *items) {
      if (it.id == q.id) continue;
      const double dt = std::abs(static_cast<double>(it.created_at - q.created_at));
      if (dt <= window) eligible.push_back(&it);
    }
    const auto keep = static_cast<std::size_t>(std::ceil(cfg.sample_frac * static_cast<double>(eligible.size()) - 1e-12));
    for (std::size_t i = 0; i < keep && i < eligible.size(); ++i) {
      const auto& t = eligible[i]->tokens;
      tokens.insert(tokens.end(), t.begin(), t.begin() + static_cast<std::ptrdiff_t>(std::min(cfg.k_tokens, t.size())));
    }
  }
  if (tokens.size() > max_words) tokens.resize(max_words);
  return tokens;
}

// ---------------------------------------------------------------------------
// KMeans

struct KMeansResult {
  Tensor centroids;                       // [k, d]
  std::vector<std::size_t> assignments;   // per point
  std::vector<double> inertia_history;    // after each assignment step
  std::size_t iterations = 0;
  bool converged = false;

  double inertia() const { return inertia_history.empty() ? 0.0 : inertia_history.back(); }
};

namespace detail {

inline double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline std::size_t nearest_row(std::span<const double> p, const Tensor& centroids, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.dim(0); ++c) {
    const double d = sq_dist(p, centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

}  // namespace detail

// k-means++ seeding followed by Lloyd iterations until the assignment stops
// changing or max_iter updates have run. An empty cluster is moved to the
// point farthest from its current centroid.
inline KMeansResult kmeans(const Tensor& points, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100) {
  if (points.rank() != 2) throw Error("kmeans: points must be a [n, d] matrix");
  const std::size_t n = points.dim(0), d = points.dim(1);
  if (k < 1) throw ConfigError("kmeans: k must be >= 1");
  if (n < k) throw ConfigError("kmeans: " + std::to_string(n) + " points cannot form " + std::to_string(k) + " clusters");
  if (!points.all_finite()) throw NumericalError("kmeans: non-finite input point");

  Rng rng(derive_seed(seed, 0x6b6d65616e73));
  KMeansResult res;
  res.centroids = Tensor(Shape{k, d});
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.index(n);
  for (std::size_t c = 0; c < k; ++c) {
    if (c > 0) {
      double total = 0.0;
      for (double v : d2) total += v;
      if (total > 0.0) {
        double u = rng.uniform() * total;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          if (d2[i] <= 0.0) continue;
          if (u < d2[i]) {
            pick = i;
            break;
          }
          u -= d2[i];
        }
        while (d2[pick] <= 0.0) --pick;
      } else {
        pick = rng.index(n);
      }
    }
    std::copy_n(points.row(pick).begin(), d, res.centroids.row(c).begin());
    for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], detail::sq_dist(points.row(i), res.centroids.row(c)));
  }

  res.assignments.assign(n, 0);
  auto assign = [&]() {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double dist = 0.0;
      const std::size_t c = detail::nearest_row(points.row(i), res.centroids, &dist);
      if (c != res.assignments[i]) changed = true;
      res.assignments[i] = c;
      inertia += dist;
    }
    res.inertia_history.push_back(inertia);
    return changed;
  };
  assign();

  for (std::size_t it = 0; it < max_iter; ++it) {
    Tensor sums(Shape{k, d});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = res.assignments[i];
      ++counts[c];
      auto row = points.row(i);
      auto s = sums.row(c);
      for (std::size_t j = 0; j < d; ++j) s[j] += row[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      auto s = sums.row(c);
      auto out = res.centroids.row(c);
      for (std::size_t j = 0; j < d; ++j) out[j] = s[j] / static_cast<double>(counts[c]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[res.assignments[i]] <= 1) continue;
        const double dist = detail::sq_dist(points.row(i), res.centroids.row(res.assignments[i]));
        if (dist > far_d) {
          far_d = dist;
          far = i;
        }
      }
      if (far_d < 0.0) continue;
      --counts[res.assignments[far]];
      res.assignments[far] = c;
      counts[c] = 1;
      std::copy_n(points.row(far).begin(), d, res.centroids.row(c).begin());
    }
    ++res.iterations;
    if (!assign()) {
      res.converged = true;
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Cluster retrieval

struct ClusterIndex {
  Tensor embeddings;  // [n, d] sentence embeddings of the training tweets
  std::vector<std::string> ids;
  std::vector<std::string> usernames;
  Tensor centroids;
  std::vector<std::size_t> assignments;
  std::map<std::string, std::vector<std::size_t>> user_rows;
  std::vector<std::vector<std::size_t>> members;  // rows per cluster, ascending

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t num_clusters() const { return centroids.rank() == 2 ? centroids.dim(0) : 0; }

  void rebuild_members() {
    members.assign(num_clusters(), {});
    for (std::size_t i = 0; i < assignments.size(); ++i) members.at(assignments[i]).push_back(i);
  }

  // Most frequent cluster among the user's training tweets; ties go to the
  // lower cluster index.
  std::optional<std::size_t> user_cluster(const std::string& username) const {
    auto it = user_rows.find(username);
    if (it == user_rows.end() || it->second.empty()) return std::nullopt;
    std::vector<std::size_t> votes(num_clusters(), 0);
    for (std::size_t r : it->second) ++votes[assignments[r]];
    return static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
  }

  std::size_t nearest_cluster(std::span<const double> embedding) const {
    return detail::nearest_row(embedding, centroids);
  }

  nlohmann::json to_json() const {
    return {{"embeddings", embeddings.values()},
            {"dim", embeddings.rank() == 2 ? embeddings.dim(1) : 0},
            {"ids", ids},
            {"usernames", usernames},
            {"centroids", centroids.values()},
            {"assignments", assignments}};
  }

  static ClusterIndex from_json(const nlohmann::json& j) {
    ClusterIndex idx;
    const auto d = j.at("dim").get<std::size_t>();
    idx.ids = j.at("ids").get<std::vector<std::string>>();
    idx.usernames = j.at("usernames").get<std::vector<std::string>>();
    idx.assignments = j.at("assignments").get<std::vector<std::size_t>>();
    auto emb = j.at("embeddings").get<std::vector<double>>();
    auto cen = j.at("centroids").get<std::vector<double>>();
    if (d == 0 || emb.size() != idx.ids.size() * d || cen.size() % d != 0 || idx.usernames.size() != idx.ids.size() ||
        idx.assignments.size() != idx.ids.size()) {
      throw Error("malformed cluster index");
    }
    idx.embeddings = Tensor(Shape{idx.ids.size(), d}, std::move(emb));
    const std::size_t k = cen.size() / d;
    idx.centroids = Tensor(Shape{k, d}, std::move(cen));
    for (std::size_t a : idx.assignments)
      if (a >= idx.num_clusters()) throw Error("malformed cluster index: assignment out of range");
    for (std::size_t i = 0; i < idx.usernames.size(); ++i) idx.user_rows[idx.usernames[i]].push_back(i);
    idx.rebuild_members();
    return idx;
  }
};

// encoded[i] holds the word ids of train.records()[i].
inline ClusterIndex build_cluster_index(const Corpus& train, const std::vector<std::vector<int>>& encoded,
                                        const EmbeddingTable& table, std::size_t num_clusters, std::uint64_t seed) {
  if (encoded.size() != train.size()) throw Error("cluster index: encodings do not match corpus size");
  if (num_clusters > train.size()) {
    throw ConfigError("augment.num_clusters (" + std::to_string(num_clusters) + ") exceeds training tweets (" +
                      std::to_string(train.size()) + ")");
  }
  ClusterIndex idx;
  const std::size_t n = train.size(), d = table.dim();
  idx.embeddings = Tensor(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const auto e = sentence_embedding(encoded[i], table);
    std::copy(e.begin(), e.end(), idx.embeddings.row(i).begin());
    const TweetRecord& r = train.records()[i];
    idx.ids.push_back(r.id);
    idx.usernames.push_back(r.username);
    idx.user_rows[r.username].push_back(i);
  }
  KMeansResult km = kmeans(idx.embeddings, num_clusters, seed);
  idx.centroids = std::move(km.centroids);
  idx.assignments = std::move(km.assignments);
  idx.rebuild_members();
  return idx;
}

struct SimilarQuery {
  std::string id;        // excluded from the result
  std::string username;  // selects the cluster; unseen users fall back to the embedding's cluster
  std::span<const double> embedding;
};

// Top-nc rows of the selected cluster by cosine similarity (descending,
// ties by row index).
inline std::vector<std::size_t> sample_similar(const SimilarQuery& q, const ClusterIndex& index, std::size_t nc) {
  if (nc == 0 || index.size() == 0) return {};
  const auto modal = index.user_cluster(q.username);
  const std::size_t cluster = modal ? *modal : index.nearest_cluster(q.embedding);
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t r : index.members.at(cluster)) {
    if (index.ids[r] == q.id) continue;
    scored.emplace_back(cosine_similarity(q.embedding, index.embeddings.row(r)), r);
  }
  const std::size_t keep = std::min(nc, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < keep; ++i) out.push_back(scored[i].second);
  return out;
}

}  // namespace geoloc
