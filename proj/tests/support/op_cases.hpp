#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "geoloc/autodiff.hpp"
#include "geoloc/geo.hpp"
#include "geoloc/gradcheck.hpp"
#include "geoloc/ops.hpp"
#include "geoloc/rng.hpp"

// One gradient-check fixture per differentiable operator. Each case owns
// its parameters; the loss is a fixed random projection of the op output
// so every output coordinate carries a distinct weight.
namespace geoloc::testing {

struct OpCase {
  std::string name;
  std::unique_ptr<ParameterStore> params;
  LossBuilder loss;
  bool training = false;
};

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// sum(y * R) with R drawn from a seed tied to the output shape.
inline Var readout(Var y) {
  if (y.value().rank() == 0) return y;
  std::uint64_t seed = 0x5eed;
  for (std::size_t d : y.shape()) seed = derive_seed(seed, d);
  return ops::sum(ops::mul(y, y.tape->constant(random_tensor(y.shape(), seed))));
}

class CaseBuilder {
 public:
  explicit CaseBuilder(std::uint64_t seed) : seed_(seed) {}

  Parameter& param(ParameterStore& s, const std::string& name, Shape shape, double lo = -1.0, double hi = 1.0) {
    return s.add(name, random_tensor(std::move(shape), derive_seed(seed_, counter_++), lo, hi));
  }

  std::vector<OpCase>& cases() { return cases_; }

  template <class Init>
  void add(const std::string& name, Init init, bool training = false) {
    auto store = std::make_unique<ParameterStore>();
    LossBuilder loss = init(*store);
    cases_.push_back({name, std::move(store), std::move(loss), training});
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  std::vector<OpCase> cases_;
};

inline std::vector<OpCase> make_op_cases(std::uint64_t seed = 7) {
  using namespace ops;
  CaseBuilder b(seed);

  b.add("add", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {3, 4});
    auto& y = b.param(s, "y", {3, 4});
    return LossBuilder([&](Tape& t) { return readout(add(t.param(x), t.param(y))); });
  });
  b.add("sub", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {5});
    auto& y = b.param(s, "y", {5});
    return LossBuilder([&](Tape& t) { return readout(sub(t.param(x), t.param(y))); });
  });
  b.add("mul", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {3, 4});
    auto& y = b.param(s, "y", {3, 4});
    return LossBuilder([&](Tape& t) { return readout(mul(t.param(x), t.param(y))); });
  });
  b.add("scale", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {6});
    return LossBuilder([&](Tape& t) { return readout(scale(t.param(x), -2.5)); });
  });
  b.add("add_bias", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {4, 3});
    auto& bias = b.param(s, "b", {3});
    return LossBuilder([&](Tape& t) { return readout(add_bias(t.param(x), t.param(bias))); });
  });
  b.add("matmul", [&](ParameterStore& s) {
    auto& a = b.param(s, "a", {3, 4});
    auto& w = b.param(s, "w", {4, 5});
    return LossBuilder([&](Tape& t) { return readout(matmul(t.param(a), t.param(w))); });
  });
  b.add("matmul_vector", [&](ParameterStore& s) {
    auto& a = b.param(s, "a", {4});
    auto& w = b.param(s, "w", {4, 3});
    return LossBuilder([&](Tape& t) { return readout(matmul(t.param(a), t.param(w))); });
  });
  b.add("matmul_chain", [&](ParameterStore& s) {
    auto& a = b.param(s, "a", {2, 3});
    auto& w1 = b.param(s, "w1", {3, 4});
    auto& w2 = b.param(s, "w2", {4, 2});
    return LossBuilder([&](Tape& t) { return readout(matmul(matmul(t.param(a), t.param(w1)), t.param(w2))); });
  });
  b.add("matvec", [&](ParameterStore& s) {
    auto& a = b.param(s, "a", {3, 4});
    auto& v = b.param(s, "v", {4});
    return LossBuilder([&](Tape& t) { return readout(matvec(t.param(a), t.param(v))); });
  });
  b.add("transpose", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {2, 5});
    return LossBuilder([&](Tape& t) { return readout(transpose(t.param(x))); });
  });
  b.add("relu", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {12});
    return LossBuilder([&](Tape& t) { return readout(relu(t.param(x))); });
  });
  b.add("tanh", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {8}, -2.0, 2.0);
    return LossBuilder([&](Tape& t) { return readout(ops::tanh(t.param(x))); });
  });
  b.add("sigmoid", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {8}, -3.0, 3.0);
    return LossBuilder([&](Tape& t) { return readout(sigmoid(t.param(x))); });
  });
  b.add("softmax", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {3, 5}, -2.0, 2.0);
    return LossBuilder([&](Tape& t) { return readout(softmax(t.param(x))); });
  });
  b.add("cross_entropy_with_softmax", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {4, 3}, -2.0, 2.0);
    return LossBuilder([&](Tape& t) {
      static const std::vector<int> targets{0, 2, 1, 2};
      return cross_entropy_with_softmax(t.param(x), targets);
    });
  });
  b.add("sum", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {2, 3});
    return LossBuilder([&](Tape& t) { return mul(sum(t.param(x)), sum(t.param(x))); });
  });
  b.add("mean", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {7});
    return LossBuilder([&](Tape& t) { return mul(mean(t.param(x)), sum(t.param(x))); });
  });
  b.add("mean_rows", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {4, 3});
    return LossBuilder([&](Tape& t) { return readout(mean_rows(t.param(x))); });
  });
  b.add("concat", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {2, 3});
    auto& y = b.param(s, "y", {2, 2});
    return LossBuilder([&](Tape& t) { return readout(concat({t.param(x), t.param(y), t.param(x)})); });
  });
  b.add("stack_rows", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {3});
    auto& y = b.param(s, "y", {3});
    return LossBuilder([&](Tape& t) { return readout(stack_rows({t.param(x), t.param(y), t.param(x)})); });
  });
  b.add("slice_cols", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {3, 6});
    return LossBuilder([&](Tape& t) { return readout(slice_cols(t.param(x), 2, 3)); });
  });
  b.add("row", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {3, 4});
    return LossBuilder([&](Tape& t) { return readout(row(t.param(x), 1)); });
  });
  b.add("embedding_lookup", [&](ParameterStore& s) {
    auto& table = b.param(s, "table", {6, 4});
    return LossBuilder([&](Tape& t) {
      static const std::vector<int> ids{1, 4, 1, 0, 5};
      return readout(embedding_lookup(t.param(table), ids));
    });
  });
  b.add("conv1d", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {7, 3});
    auto& w = b.param(s, "w", {3, 3, 4});
    auto& bias = b.param(s, "b", {4});
    return LossBuilder([&](Tape& t) { return readout(conv1d(t.param(x), t.param(w), t.param(bias))); });
  });
  b.add("max_over_time", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {6, 4});
    return LossBuilder([&](Tape& t) { return readout(max_over_time(t.param(x))); });
  });
  b.add("max_pool1d", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {7, 3});
    return LossBuilder([&](Tape& t) { return readout(max_pool1d(t.param(x), 3)); });
  });
  b.add("conv1d_maxpool", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {9, 2});
    auto& w = b.param(s, "w", {4, 2, 3});
    auto& bias = b.param(s, "b", {3});
    return LossBuilder(
        [&](Tape& t) { return readout(max_over_time(relu(conv1d(t.param(x), t.param(w), t.param(bias))))); });
  });
  b.add(
      "dropout",
      [&](ParameterStore& s) {
        auto& x = b.param(s, "x", {4, 5});
        return LossBuilder([&](Tape& t) { return readout(dropout(t.param(x), 0.4)); });
      },
      true);
  b.add("attention", [&](ParameterStore& s) {
    auto& q = b.param(s, "q", {3, 4});
    auto& k = b.param(s, "k", {5, 4});
    auto& v = b.param(s, "v", {5, 2});
    return LossBuilder([&](Tape& t) { return readout(attention(t.param(q), t.param(k), t.param(v))); });
  });
  b.add("multi_head_attention", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {4, 6});
    AttentionWeights w{&b.param(s, "wq", {6, 6}), &b.param(s, "wk", {6, 6}), &b.param(s, "wv", {6, 6}),
                       &b.param(s, "wo", {6, 6}), &b.param(s, "bq", {6}),    &b.param(s, "bk", {6}),
                       &b.param(s, "bv", {6}),    &b.param(s, "bo", {6})};
    return LossBuilder([&, w](Tape& t) { return readout(multi_head_attention(t.param(x), w, 3)); });
  });
  b.add("lstm_step", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {3});
    auto& h = b.param(s, "h", {2});
    auto& c = b.param(s, "c", {2});
    auto& w = b.param(s, "w", {5, 8});
    auto& bias = b.param(s, "b", {8});
    return LossBuilder([&](Tape& t) {
      LstmState st = lstm_step(t.param(x), {t.param(h), t.param(c)}, t.param(w), t.param(bias));
      st = lstm_step(t.param(x), st, t.param(w), t.param(bias));
      return add(readout(st.h), readout(st.c));
    });
  });
  b.add("positional_encoding", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {5, 4});
    return LossBuilder([&](Tape& t) {
      return readout(ops::tanh(add(t.param(x), t.constant(positional_encoding(5, 4)))));
    });
  });
  b.add("linear", [&](ParameterStore& s) {
    auto& x = b.param(s, "x", {2, 3});
    auto& w = b.param(s, "w", {3, 4});
    auto& bias = b.param(s, "b", {4});
    return LossBuilder([&](Tape& t) { return readout(linear(t.param(x), w, bias)); });
  });
  b.add("pairwise_loss", [&](ParameterStore& s) {
    auto& pred = b.param(s, "pred", {4, 2});
    auto& truth = b.param(s, "truth", {4, 2}, 2.0, 3.0);
    return LossBuilder([&](Tape& t) { return pairwise_loss(t.param(pred), t.param(truth)); });
  });
  return std::move(b.cases());
}

inline GradCheckReport check_case(OpCase& c) {
  GradCheckOptions opts;
  opts.label = c.name;
  opts.training = c.training;
  opts.seed = 11;
  return grad_check(c.loss, *c.params, opts);
}

}  // namespace geoloc::testing
