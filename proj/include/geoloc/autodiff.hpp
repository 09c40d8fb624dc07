#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "geoloc/error.hpp"
#include "geoloc/rng.hpp"
#include "geoloc/tensor.hpp"

namespace geoloc {

class Tape;

// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

struct TapeOptions {
  bool grad_enabled = true;
  bool training = false;
  std::uint64_t seed = 0;
};

// Append-only record of operations. Nodes are stored in creation order,
// which is a topological order, so backward is a single reverse sweep.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() : Tape(TapeOptions{}) {}
  explicit Tape(TapeOptions opts) : opts_(opts), rng_(opts.seed) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool training() const noexcept { return opts_.training; }
  bool grad_enabled() const noexcept { return opts_.grad_enabled; }
  Rng& rng() noexcept { return rng_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  Var constant(Tensor value) {
    Node n;
    n.op = "constant";
    n.value = std::move(value);
    return push(std::move(n));
  }

  // A leaf that receives a gradient but is not a Parameter.
  Var input(Tensor value, bool requires_grad = true) {
    Node n;
    n.op = "input";
    n.value = std::move(value);
    n.requires_grad = requires_grad && opts_.grad_enabled;
    return push(std::move(n));
  }

  // Leaf referencing a Parameter without copying it. Repeated calls return
  // the same node; its gradient is added to Parameter::grad by backward().
  Var param(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
    Node n;
    n.op = "param";
    n.ref = &p.value;
    n.param = &p;
    n.requires_grad = opts_.grad_enabled;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  // Records the result of an operation. Throws NumericalError when the
  // forward value is not finite.
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> parents, Backward backward) {
    return record(op, std::move(value), std::vector<Var>(parents), std::move(backward));
  }

  Var record(std::string_view op, Tensor value, const std::vector<Var>& parents, Backward backward) {
    if (!value.all_finite()) {
      throw NumericalError("non-finite value produced by op '" + std::string(op) + "'");
    }
    Node n;
    n.op = std::string(op);
    n.value = std::move(value);
    if (opts_.grad_enabled) {
      for (const Var& p : parents) {
        if (p.tape != this) throw Error("op '" + n.op + "' mixes variables from different tapes");
        if (nodes_[p.id].requires_grad) n.requires_grad = true;
      }
      if (n.requires_grad) n.backward = std::move(backward);
    }
    return push(std::move(n));
  }

  // The handle the next record() call will return; lets a backward
  // closure refer to its own output.
  Var next_var() noexcept { return Var{this, nodes_.size()}; }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.ref ? *n.ref : n.value;
  }
  const Tensor& value(Var v) const { return value(v.id); }

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  const std::string& op_name(Var v) const { return nodes_[v.id].op; }

  bool has_grad(Var v) const { return nodes_[v.id].has_grad; }
  const Tensor& grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (!n.has_grad) throw Error("no gradient recorded for node " + std::to_string(v.id));
    return n.grad;
  }

  // Calls f(grad_span) on the parent's gradient buffer when it needs one.
  template <class F>
  void accumulate(Var parent, F&& f) {
    Node& n = nodes_[parent.id];
    if (!n.requires_grad) return;
    if (!n.has_grad) {
      n.grad = Tensor(value(parent.id).shape());
      n.has_grad = true;
    }
    f(n.grad.data());
  }

  void backward(Var loss) {
    if (loss.tape != this) throw Error("backward on a variable from another tape");
    if (backward_done_) throw Error("backward already run on this tape");
    if (value(loss).size() != 1) {
      throw Error("backward requires a scalar loss, got shape " + shape_str(value(loss).shape()));
    }
    backward_done_ = true;
    Node& root = nodes_[loss.id];
    if (!root.requires_grad) return;
    root.grad = Tensor(value(loss.id).shape(), 1.0);
    root.has_grad = true;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param) {
        auto dst = n.param->grad.data();
        auto src = n.grad.data();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  struct Node {
    std::string op;
    Tensor value;
    const Tensor* ref = nullptr;
    Parameter* param = nullptr;
    bool requires_grad = false;
    bool has_grad = false;
    Tensor grad;
    Backward backward;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  TapeOptions opts_;
  Rng rng_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Var::value() const { return tape->value(id); }

}  // namespace geoloc
