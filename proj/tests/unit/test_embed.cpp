#include <catch_amalgamated.hpp>

#include <sstream>

#include "geoloc/embed.hpp"
#include "geoloc/rng.hpp"

using namespace geoloc;
using Catch::Approx;

namespace {
Vocab vocab_of(std::vector<std::string> words) { return build_vocab({std::move(words)}, 1, 1000); }
}  // namespace

TEST_CASE("full coverage when every word has a vector", "[embed]") {
  const Vocab v = vocab_of({"park", "street"});
  std::istringstream file("park 1 0 0 0\nstreet 0 1 0 0\n");
  const EmbeddingTable t = load_embeddings(file, v);
  CHECK(t.coverage() == 1.0);
  CHECK(t.dim() == 4);
  CHECK(t.row(v.id("street"))[1] == 1.0);
  CHECK(t.row(Vocab::kPad)[0] == 0.0);
  CHECK(t.row(Vocab::kUnk)[0] == Approx(0.5));
}

TEST_CASE("missing words get a deterministic fallback", "[embed]") {
  const Vocab v = vocab_of({"park", "zzz"});
  std::istringstream f1("park 1 0 0 0\n"), f2("park 1 0 0 0\n");
  const EmbeddingTable a = load_embeddings(f1, v), b = load_embeddings(f2, v);
  CHECK(a.coverage() == 0.5);
  CHECK(a.rows == b.rows);
  for (double x : a.row(v.id("zzz"))) CHECK(std::abs(x) <= 0.1);
}

TEST_CASE("inconsistent dimension is a parse error naming the line", "[embed]") {
  const Vocab v = vocab_of({"a"});
  std::istringstream file("a 1 2 3 4\nb 1 2 3 4 5\n");
  CHECK_THROWS_WITH(load_embeddings(file, v), Catch::Matchers::ContainsSubstring("line 2"));
}

TEST_CASE("word2vec header line is skipped and stems match", "[embed]") {
  const Vocab v = vocab_of({"run"});
  std::istringstream file("3 2\nrunning 0.5 0.5\n");
  const EmbeddingTable t = load_embeddings(file, v);
  CHECK(t.found == 1);
  CHECK(t.row(v.id("run"))[0] == 0.5);
}

TEST_CASE("sentence embedding is the mean of non-pad rows", "[embed]") {
  const Vocab v = vocab_of({"a", "b"});
  std::istringstream file("a 1 2\nb 3 6\n");
  const EmbeddingTable t = load_embeddings(file, v);
  const int a = v.id("a"), b = v.id("b");
  CHECK(sentence_embedding(std::vector<int>{a, 0, 0}, t) == std::vector<double>{1, 2});
  CHECK(sentence_embedding(std::vector<int>{a, b}, t) == std::vector<double>{2, 4});
  CHECK(sentence_embedding(std::vector<int>{0, 0}, t) == std::vector<double>{0, 0});
}

TEST_CASE("cosine similarity", "[embed]") {
  using V = std::vector<double>;
  CHECK(cosine_similarity(V{1, 0}, V{1, 0}) == Approx(1.0));
  CHECK(cosine_similarity(V{1, 0}, V{0, 1}) == Approx(0.0));
  CHECK(cosine_similarity(V{1, 1}, V{2, 2}) == Approx(1.0));
  CHECK(cosine_similarity(V{0, 0}, V{2, 2}) == 0.0);
  CHECK_THROWS_AS(cosine_similarity(V{1}, V{1, 2}), Error);
}

TEST_CASE("cosine similarity is symmetric and bounded", "[embed][property]") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(7), b(7);
    for (auto& x : a) x = rng.normal();
    for (auto& x : b) x = rng.normal();
    const double c = cosine_similarity(a, b);
    CHECK(c == Approx(cosine_similarity(b, a)));
    CHECK(c <= 1.0);
    CHECK(c >= -1.0);
  }
}
