#include <catch_amalgamated.hpp>

#include <numeric>
#include <sstream>

#include "geoloc/augment.hpp"

using namespace geoloc;
using Catch::Approx;

namespace {

TweetRecord rec(std::string id, std::string user, std::int64_t t, std::string text = "x") {
  TweetRecord r;
  r.id = std::move(id);
  r.username = std::move(user);
  r.created_at = t;
  r.text = std::move(text);
  return r;
}

UserDict dict_of(std::vector<TweetRecord> records, std::vector<std::vector<std::string>> tokens) {
  return UserDict(Corpus(std::move(records)), tokens);
}

Tensor blobs(Rng& rng, std::size_t per_blob, double sigma, std::vector<std::size_t>* truth) {
  Tensor pts(Shape{2 * per_blob, 3});
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    const std::size_t b = (i * 7919) % 2;  // interleave blob members
    if (truth) truth->push_back(b);
    for (std::size_t k = 0; k < 3; ++k) pts.at(i, k) = (b ? 10.0 * 2 * sigma : 0.0) + sigma * rng.normal();
  }
  return pts;
}

}  // namespace

TEST_CASE("user dictionary groups and time-sorts history", "[augment]") {
  const UserDict d = dict_of({rec("3", "a", 300), rec("1", "a", 100), rec("2", "a", 200)}, {{"c"}, {"a"}, {"b"}});
  REQUIRE(d.size() == 1);
  const auto* items = d.find("a");
  REQUIRE(items->size() == 3);
  CHECK((*items)[0].id == "1");
  CHECK((*items)[2].id == "3");
  CHECK(UserDict(Corpus{}, {}).empty());
}

TEST_CASE("interleaved users keep separate sorted lists", "[augment]") {
  const UserDict d = dict_of({rec("1", "a", 50), rec("2", "b", 40), rec("3", "a", 30), rec("4", "b", 60), rec("5", "a", 10)},
                             {{}, {}, {}, {}, {}});
  std::vector<std::string> a, b;
  for (const auto& it : *d.find("a")) a.push_back(it.id);
  for (const auto& it : *d.find("b")) b.push_back(it.id);
  CHECK(a == std::vector<std::string>{"5", "3", "1"});
  CHECK(b == std::vector<std::string>{"2", "4"});
  CHECK(UserDict::from_json(d.to_json()) == d);
}

TEST_CASE("history augmentation", "[augment]") {
  const std::int64_t t0 = 1514764800;
  const UserDict d = dict_of({rec("self", "u", t0), rec("near", "u", t0 + 10 * 3600), rec("far", "u", t0 + 100 * 3600)},
                             {{"self"}, {"a", "b", "c"}, {"z"}});
  AugmentConfig cfg;
  cfg.time_window_hours = 72;
  cfg.k_tokens = 2;
  const HistoryQuery q{"self", "u", t0};
  CHECK(augment_with_history({"t"}, q, d, cfg, 64) == std::vector<std::string>{"t", "a", "b"});

  cfg.sample_frac = 0.0;
  CHECK(augment_with_history({"t"}, q, d, cfg, 64) == std::vector<std::string>{"t"});

  cfg.sample_frac = 1.0;
  CHECK(augment_with_history({"t"}, {"x", "nobody", t0}, d, cfg, 64) == std::vector<std::string>{"t"});
  CHECK(augment_with_history({"t"}, q, d, cfg, 2) == std::vector<std::string>{"t", "a"});

  cfg.time_window_hours = 1000;
  CHECK(augment_with_history({"t"}, q, d, cfg, 64) == std::vector<std::string>{"t", "a", "b", "z"});
  cfg.sample_frac = 0.5;  // ceil(0.5 * 2) = 1: only the earliest eligible item
  CHECK(augment_with_history({"t"}, q, d, cfg, 64) == std::vector<std::string>{"t", "a", "b"});
}

TEST_CASE("kmeans with one cluster returns the mean", "[augment][kmeans]") {
  Rng rng(3);
  Tensor pts(Shape{50, 4});
  for (double& v : pts.data()) v = rng.normal();
  const KMeansResult r = kmeans(pts, 1, 9);
  for (std::size_t k = 0; k < 4; ++k) {
    double m = 0.0;
    for (std::size_t i = 0; i < 50; ++i) m += pts.at(i, k);
    CHECK(std::abs(r.centroids.at(0, k) - m / 50.0) < 1e-9);
  }
}

TEST_CASE("kmeans recovers separated blobs", "[augment][kmeans]") {
  Rng rng(8);
  std::vector<std::size_t> truth;
  const Tensor pts = blobs(rng, 40, 1.0, &truth);
  const KMeansResult r = kmeans(pts, 2, 4);
  const std::size_t flip = r.assignments[0] == truth[0] ? 0 : 1;
  for (std::size_t i = 0; i < truth.size(); ++i) CHECK((r.assignments[i] ^ flip) == truth[i]);
}

TEST_CASE("kmeans with k = n has zero inertia", "[augment][kmeans]") {
  Rng rng(5);
  Tensor pts(Shape{6, 2});
  for (double& v : pts.data()) v = rng.normal();
  const KMeansResult r = kmeans(pts, 6, 1);
  CHECK(r.inertia() == Approx(0.0).margin(1e-12));
  std::vector<std::size_t> a = r.assignments;
  std::sort(a.begin(), a.end());
  CHECK(std::adjacent_find(a.begin(), a.end()) == a.end());
}

TEST_CASE("kmeans inertia never increases", "[augment][kmeans][property]") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor pts(Shape{80, 3});
    for (double& v : pts.data()) v = rng.normal() + (rng.bernoulli(0.3) ? 4.0 : 0.0);
    const KMeansResult r = kmeans(pts, 2 + rng.index(6), trial);
    for (std::size_t i = 1; i < r.inertia_history.size(); ++i) {
      CHECK(r.inertia_history[i] <= r.inertia_history[i - 1] + 1e-9);
    }
  }
}

TEST_CASE("kmeans rejects bad k", "[augment][kmeans]") {
  Tensor pts(Shape{3, 2});
  CHECK_THROWS_AS(kmeans(pts, 0, 1), ConfigError);
  CHECK_THROWS_AS(kmeans(pts, 4, 1), ConfigError);
}

namespace {

struct Fixture {
  Corpus train;
  std::vector<std::vector<int>> encoded;
  EmbeddingTable table;
};

Fixture cluster_fixture() {
  Fixture f;
  const Vocab v = build_vocab({{"n", "e", "s", "w"}}, 1, 10);
  std::istringstream file("n 0 1\ne 1 0\ns 0 -1\nw -1 0\n");
  f.table = load_embeddings(file, v);
  std::vector<TweetRecord> rs;
  const std::vector<std::string> words{"n", "e", "n", "s", "w", "e", "n", "s", "w", "e"};
  for (std::size_t i = 0; i < words.size(); ++i) {
    rs.push_back(rec("t" + std::to_string(i), i < 5 ? "alice" : "bob", 1514764800 + static_cast<std::int64_t>(i)));
    f.encoded.push_back({v.id(words[i]), v.id(words[(i + 1) % words.size()]), 0});
  }
  f.train = Corpus(std::move(rs));
  return f;
}

}  // namespace

TEST_CASE("cluster index assigns every tweet", "[augment][cluster]") {
  const Fixture f = cluster_fixture();
  const ClusterIndex idx = build_cluster_index(f.train, f.encoded, f.table, 2, 7);
  CHECK(idx.assignments.size() == 10);
  CHECK(idx.members[0].size() + idx.members[1].size() == 10);

  const ClusterIndex again = build_cluster_index(f.train, f.encoded, f.table, 2, 7);
  CHECK(again.assignments == idx.assignments);
  CHECK(again.centroids == idx.centroids);

  const ClusterIndex one = build_cluster_index(f.train, f.encoded, f.table, 1, 7);
  CHECK(one.members[0].size() == 10);
  CHECK_THROWS_AS(build_cluster_index(f.train, f.encoded, f.table, 11, 7), ConfigError);

  const ClusterIndex back = ClusterIndex::from_json(idx.to_json());
  CHECK(back.assignments == idx.assignments);
  CHECK(back.members == idx.members);
}

TEST_CASE("sample_similar ranks by cosine within the user's cluster", "[augment][cluster]") {
  ClusterIndex idx;
  idx.embeddings = Tensor(Shape{4, 2}, {1, 0, 0.6, 0.8, 0.9, 0.1, -1, 0});
  idx.ids = {"a", "b", "c", "d"};
  idx.usernames = {"u", "u", "u", "v"};
  idx.centroids = Tensor(Shape{2, 2}, {1, 0, -1, 0});
  idx.assignments = {0, 0, 0, 1};
  for (std::size_t i = 0; i < 4; ++i) idx.user_rows[idx.usernames[i]].push_back(i);
  idx.rebuild_members();

  const std::vector<double> q{1.0, 0.2};
  // Brute-force oracle over the cluster's rows.
  std::vector<std::pair<double, std::size_t>> oracle;
  for (std::size_t r : {0u, 1u, 2u}) {
    const auto e = idx.embeddings.row(r);
    const double c = (q[0] * e[0] + q[1] * e[1]) / (std::hypot(q[0], q[1]) * std::hypot(e[0], e[1]));
    oracle.emplace_back(-c, r);
  }
  std::sort(oracle.begin(), oracle.end());
  const auto got = sample_similar({"query", "u", q}, idx, 2);
  CHECK(got == std::vector<std::size_t>{oracle[0].second, oracle[1].second});

  CHECK(sample_similar({"query", "u", q}, idx, 0).empty());
  CHECK(sample_similar({"a", "u", q}, idx, 5) == std::vector<std::size_t>{2, 1});

  const std::vector<double> west{-1.0, 0.1};
  CHECK(sample_similar({"query", "stranger", west}, idx, 1) == std::vector<std::size_t>{3});
  CHECK(sample_similar({"query", "stranger", q}, idx, 3).size() == 3);
}

TEST_CASE("modal cluster ties go to the lower index", "[augment][cluster]") {
  ClusterIndex idx;
  idx.centroids = Tensor(Shape{3, 1}, {0, 1, 2});
  idx.assignments = {2, 1, 1, 2};
  idx.user_rows["u"] = {0, 1, 2, 3};
  CHECK(idx.user_cluster("u") == 1);
  CHECK_FALSE(idx.user_cluster("nobody").has_value());
}
