#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "geoloc/autodiff.hpp"

// Differentiable operators. Sequences are [T, d] matrices, vectors are rank 1.
namespace geoloc::ops {

namespace detail {

inline Tape& same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape || a.tape == nullptr) {
    throw Error(std::string("op '") + op + "' requires operands on the same tape");
  }
  return *a.tape;
}

inline void require(bool ok, const char* op, const std::string& msg) {
  if (!ok) throw Error(std::string("op '") + op + "': " + msg);
}

inline std::size_t rows_of(const Shape& s) { return s.size() == 1 ? 1 : s[0]; }
inline std::size_t cols_of(const Shape& s) { return s.back(); }

template <class Fwd, class Deriv>
Var unary(Var x, const char* op, Fwd fwd, Deriv deriv) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
  return x.tape->record(op, std::move(out), {x}, [x, deriv](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    t.accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * deriv(xv[i]);
    });
  });
}

}  // namespace detail

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "add");
  detail::require(a.shape() == b.shape(), "add",
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return t.record("add", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    for (Var p : {a, b}) {
      t.accumulate(p, [&](std::span<double> gp) {
        for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[i];
      });
    }
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "sub");
  detail::require(a.shape() == b.shape(), "sub",
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return t.record("sub", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    });
    t.accumulate(b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    });
  });
}

// Elementwise product.
inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "mul");
  detail::require(a.shape() == b.shape(), "mul",
                  "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return t.record("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& bv = t.value(b);
    t.accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    });
    t.accumulate(b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    });
  });
}

inline Var scale(Var x, double s) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= s;
  return x.tape->record("scale", std::move(out), {x}, [x, s](Tape& t, const Tensor& g) {
    t.accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += s * g[i];
    });
  });
}

// x: [n] or [m, n]; bias: [n], added to every row.
inline Var add_bias(Var x, Var bias) {
  Tape& t = detail::same_tape(x, bias, "add_bias");
  const Shape& xs = x.shape();
  detail::require(bias.value().rank() == 1 && !xs.empty() && xs.back() == bias.value().size(), "add_bias",
                  "bias " + shape_str(bias.shape()) + " incompatible with " + shape_str(xs));
  const std::size_t n = xs.back();
  Tensor out = x.value();
  const Tensor& bv = bias.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  return t.record("add_bias", std::move(out), {x, bias}, [x, bias, n](Tape& t, const Tensor& g) {
    t.accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
    t.accumulate(bias, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
    });
  });
}

// a: [k] or [m, k]; b: [k, n]. A rank-1 left operand yields a rank-1 result.
inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "matmul");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  detail::require((as.size() == 1 || as.size() == 2) && bs.size() == 2 && as.back() == bs[0], "matmul",
                  "cannot multiply " + shape_str(as) + " by " + shape_str(bs));
  const std::size_t m = detail::rows_of(as), k = bs[0], n = bs[1];
  Tensor out(as.size() == 1 ? Shape{n} : Shape{m, n});
  const double* A = a.value().data().data();
  const double* B = b.value().data().data();
  double* C = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return t.record("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
    const double* A = t.value(a).data().data();
    const double* B = t.value(b).data().data();
    const double* G = g.data().data();
    t.accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = B + p * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
          ga[i * k + p] += s;
        }
      }
    });
    t.accumulate(b, [&](std::span<double> gb) {
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          double* gbrow = gb.data() + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    });
  });
}

// A: [m, n], v: [n] -> [m].
inline Var matvec(Var a, Var v) {
  Tape& t = detail::same_tape(a, v, "matvec");
  const Shape& as = a.shape();
  detail::require(as.size() == 2 && v.value().rank() == 1 && as[1] == v.value().size(), "matvec",
                  "cannot multiply " + shape_str(as) + " by " + shape_str(v.shape()));
  const std::size_t m = as[0], n = as[1];
  Tensor out(Shape{m});
  const Tensor& av = a.value();
  const Tensor& vv = v.value();
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += av[i * n + j] * vv[j];
    out[i] = s;
  }
  return t.record("matvec", std::move(out), {a, v}, [a, v, m, n](Tape& t, const Tensor& g) {
    const Tensor& av = t.value(a);
    const Tensor& vv = t.value(v);
    t.accumulate(a, [&](std::span<double> ga) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[i] * vv[j];
    });
    t.accumulate(v, [&](std::span<double> gv) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gv[j] += g[i] * av[i * n + j];
    });
  });
}

inline Var transpose(Var x) {
  const Shape& xs = x.shape();
  detail::require(xs.size() == 2, "transpose", "expects a matrix, got " + shape_str(xs));
  const std::size_t m = xs[0], n = xs[1];
  Tensor out(Shape{n, m});
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = xv[i * n + j];
  return x.tape->record("transpose", std::move(out), {x}, [x, m, n](Tape& t, const Tensor& g) {
    t.accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
  });
}

inline Var relu(Var x) {
  return detail::unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Var x) {
  return detail::unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double v) {
        const double y = std::tanh(v);
        return 1.0 - y * y;
      });
}

inline double sigmoid_value(double v) {
  return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

inline Var sigmoid(Var x) {
  return detail::unary(x, "sigmoid", sigmoid_value, [](double v) {
    const double y = sigmoid_value(v);
    return y * (1.0 - y);
  });
}

// Softmax along the last axis of a vector or matrix.
inline Var softmax(Var x) {
  const Shape& xs = x.shape();
  detail::require(xs.size() == 1 || xs.size() == 2, "softmax", "expects rank 1 or 2");
  const std::size_t rows = detail::rows_of(xs), cols = detail::cols_of(xs);
  Tensor out(xs);
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * cols;
    double* o = out.data().data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= s;
  }
  const Var y = x.tape->next_var();
  return x.tape->record("softmax", std::move(out), {x}, [x, y, rows, cols](Tape& t, const Tensor& g) {
    const Tensor& yv = t.value(y);
    t.accumulate(x, [&](std::span<double> gx) {
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * yv[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += yv[r * cols + c] * (g[r * cols + c] - dot);
      }
    });
  });
}

// Mean cross-entropy of softmax(logits) against class indices.
// logits: [C] (one target) or [B, C].
inline Var cross_entropy_with_softmax(Var logits, std::span<const int> targets) {
  const Shape& ls = logits.shape();
  detail::require(ls.size() == 1 || ls.size() == 2, "cross_entropy", "expects rank 1 or 2 logits");
  const std::size_t rows = detail::rows_of(ls), cols = detail::cols_of(ls);
  detail::require(targets.size() == rows, "cross_entropy",
                  "target count " + std::to_string(targets.size()) + " != batch " + std::to_string(rows));
  std::vector<double> probs(rows * cols);
  std::vector<int> tgt(targets.begin(), targets.end());
  const Tensor& lv = logits.value();
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    detail::require(tgt[r] >= 0 && static_cast<std::size_t>(tgt[r]) < cols, "cross_entropy",
                    "target index out of range");
    const double* in = lv.data().data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (probs[r * cols + c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) probs[r * cols + c] /= s;
    loss += (mx + std::log(s)) - in[tgt[r]];
  }
  loss /= static_cast<double>(rows);
  return logits.tape->record(
      "cross_entropy", Tensor::scalar(loss), {logits},
      [logits, probs = std::move(probs), tgt = std::move(tgt), rows, cols](Tape& t, const Tensor& g) {
        const double scale = g[0] / static_cast<double>(rows);
        t.accumulate(logits, [&](std::span<double> gl) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
              const double onehot = static_cast<int>(c) == tgt[r] ? 1.0 : 0.0;
              gl[r * cols + c] += scale * (probs[r * cols + c] - onehot);
            }
          }
        });
      });
}

inline Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape->record("sum", Tensor::scalar(s), {x}, [x](Tape& t, const Tensor& g) {
    t.accumulate(x, [&](std::span<double> gx) {
      for (double& v : gx) v += g[0];
    });
  });
}

inline Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

// Mean over the first axis: [T, d] -> [d].
inline Var mean_rows(Var x) {
  const Shape& xs = x.shape();
  detail::require(xs.size() == 2 && xs[0] > 0, "mean_rows", "expects a non-empty matrix");
  const std::size_t rows = xs[0], cols = xs[1];
  Tensor out(Shape{cols});
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c] += xv[r * cols + c];
  for (double& v : out.data()) v /= static_cast<double>(rows);
  return x.tape->record("mean_rows", std::move(out), {x}, [x, rows, cols](Tape& t, const Tensor& g) {
    t.accumulate(x, [&](std::span<double> gx) {
      const double inv = 1.0 / static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c] * inv;
    });
  });
}

// Concatenation along the last axis. All parts are vectors, or matrices
// with the same row count.
inline Var concat(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat", "no inputs");
  Tape& t = *parts.front().tape;
  const std::size_t rank = parts.front().value().rank();
  detail::require(rank == 1 || rank == 2, "concat", "expects rank 1 or 2");
  const std::size_t rows = detail::rows_of(parts.front().shape());
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    detail::same_tape(parts.front(), p, "concat");
    detail::require(p.value().rank() == rank && detail::rows_of(p.shape()) == rows, "concat",
                    "incompatible part " + shape_str(p.shape()));
    widths.push_back(detail::cols_of(p.shape()));
    total += widths.back();
  }
  Tensor out(rank == 1 ? Shape{total} : Shape{rows, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + off + c] = pv[r * widths[k] + c];
    off += widths[k];
  }
  return t.record("concat", std::move(out), parts, [parts, widths, rows, total](Tape& t, const Tensor& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const std::size_t w = widths[k];
      t.accumulate(parts[k], [&](std::span<double> gp) {
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * total + off + c];
      });
      off += w;
    }
  });
}

// Stacks equal-length vectors into a [B, d] matrix.
inline Var stack_rows(const std::vector<Var>& rows_in) {
  detail::require(!rows_in.empty(), "stack_rows", "no inputs");
  Tape& t = *rows_in.front().tape;
  const std::size_t d = rows_in.front().value().size();
  Tensor out(Shape{rows_in.size(), d});
  for (std::size_t r = 0; r < rows_in.size(); ++r) {
    detail::same_tape(rows_in.front(), rows_in[r], "stack_rows");
    detail::require(rows_in[r].value().rank() == 1 && rows_in[r].value().size() == d, "stack_rows",
                    "rows must be vectors of equal length");
    std::copy_n(rows_in[r].value().data().data(), d, out.data().data() + r * d);
  }
  return t.record("stack_rows", std::move(out), rows_in, [rows_in, d](Tape& t, const Tensor& g) {
    for (std::size_t r = 0; r < rows_in.size(); ++r) {
      t.accumulate(rows_in[r], [&](std::span<double> gr) {
        for (std::size_t c = 0; c < d; ++c) gr[c] += g[r * d + c];
      });
    }
  });
}

// Columns [start, start + len) of a vector or matrix.
inline Var slice_cols(Var x, std::size_t start, std::size_t len) {
  const Shape& xs = x.shape();
  detail::require((xs.size() == 1 || xs.size() == 2) && start + len <= xs.back(), "slice_cols",
                  "range out of bounds for " + shape_str(xs));
  const std::size_t rows = detail::rows_of(xs), cols = xs.back();
  Tensor out(xs.size() == 1 ? Shape{len} : Shape{rows, len});
  const Tensor& xv = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < len; ++c) out[r * len + c] = xv[r * cols + start + c];
  return x.tape->record("slice_cols", std::move(out), {x}, [x, rows, cols, start, len](Tape& t, const Tensor& g) {
    t.accumulate(x, [&](std::span<double> gx) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < len; ++c) gx[r * cols + start + c] += g[r * len + c];
    });
  });
}

// Row r of a matrix as a vector.
inline Var row(Var x, std::size_t r) {
  const Shape& xs = x.shape();
  detail::require(xs.size() == 2 && r < xs[0], "row", "row index out of range");
  const std::size_t cols = xs[1];
  Tensor out(Shape{cols});
  std::copy_n(x.value().data().data() + r * cols, cols, out.data().data());
  return x.tape->record("row", std::move(out), {x}, [x, r, cols](Tape& t, const Tensor& g) {
    t.accumulate(x, [&](std::span<double> gx) {
      for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += g[c];
    });
  });
}

// Gathers rows of a trainable table: table [V, d], ids -> [T, d].
inline Var embedding_lookup(Var table, std::span<const int> ids) {
  const Shape& ts = table.shape();
  detail::require(ts.size() == 2, "embedding_lookup", "table must be a matrix");
  detail::require(!ids.empty(), "embedding_lookup", "empty id sequence");
  const std::size_t vocab = ts[0], d = ts[1];
  std::vector<int> idv(ids.begin(), ids.end());
  Tensor out(Shape{idv.size(), d});
  const Tensor& tv = table.value();
  for (std::size_t i = 0; i < idv.size(); ++i) {
    detail::require(idv[i] >= 0 && static_cast<std::size_t>(idv[i]) < vocab, "embedding_lookup",
                    "id " + std::to_string(idv[i]) + " out of range");
    std::copy_n(tv.data().data() + static_cast<std::size_t>(idv[i]) * d, d, out.data().data() + i * d);
  }
  return table.tape->record("embedding_lookup", std::move(out), {table},
                            [table, idv = std::move(idv), d](Tape& t, const Tensor& g) {
                              t.accumulate(table, [&](std::span<double> gt) {
                                for (std::size_t i = 0; i < idv.size(); ++i) {
                                  double* dst = gt.data() + static_cast<std::size_t>(idv[i]) * d;
                                  for (std::size_t c = 0; c < d; ++c) dst[c] += g[i * d + c];
                                }
                              });
                            });
}

// Valid 1-D convolution, stride 1.
// x: [T, Cin], w: [K, Cin, Cout], b: [Cout] -> [T - K + 1, Cout].
inline Var conv1d(Var x, Var w, Var b) {
  Tape& t = detail::same_tape(x, w, "conv1d");
  detail::same_tape(x, b, "conv1d");
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  detail::require(xs.size() == 2 && ws.size() == 3 && ws[1] == xs[1] && b.value().size() == ws[2], "conv1d",
                  "incompatible shapes x" + shape_str(xs) + " w" + shape_str(ws));
  const std::size_t T = xs[0], cin = xs[1], K = ws[0], cout = ws[2];
  detail::require(T >= K, "conv1d", "sequence length " + std::to_string(T) + " shorter than kernel " +
                                        std::to_string(K));
  const std::size_t L = T - K + 1;
  Tensor out(Shape{L, cout});
  const double* X = x.value().data().data();
  const double* W = w.value().data().data();
  const double* B = b.value().data().data();
  double* Y = out.data().data();
  for (std::size_t l = 0; l < L; ++l) {
    double* yrow = Y + l * cout;
    std::copy_n(B, cout, yrow);
    for (std::size_t k = 0; k < K; ++k) {
      const double* xrow = X + (l + k) * cin;
      for (std::size_t i = 0; i < cin; ++i) {
        const double xv = xrow[i];
        if (xv == 0.0) continue;
        const double* wrow = W + (k * cin + i) * cout;
        for (std::size_t o = 0; o < cout; ++o) yrow[o] += xv * wrow[o];
      }
    }
  }
  return t.record("conv1d", std::move(out), {x, w, b}, [x, w, b, L, K, cin, cout](Tape& t, const Tensor& g) {
    const double* X = t.value(x).data().data();
    const double* W = t.value(w).data().data();
    const double* G = g.data().data();
    t.accumulate(x, [&](std::span<double> gx) {
      for (std::size_t l = 0; l < L; ++l) {
        const double* grow = G + l * cout;
        for (std::size_t k = 0; k < K; ++k) {
          double* gxrow = gx.data() + (l + k) * cin;
          for (std::size_t i = 0; i < cin; ++i) {
            const double* wrow = W + (k * cin + i) * cout;
            double s = 0.0;
            for (std::size_t o = 0; o < cout; ++o) s += grow[o] * wrow[o];
            gxrow[i] += s;
          }
        }
      }
    });
    t.accumulate(w, [&](std::span<double> gw) {
      for (std::size_t l = 0; l < L; ++l) {
        const double* grow = G + l * cout;
        for (std::size_t k = 0; k < K; ++k) {
          const double* xrow = X + (l + k) * cin;
          for (std::size_t i = 0; i < cin; ++i) {
            const double xv = xrow[i];
            if (xv == 0.0) continue;
            double* gwrow = gw.data() + (k * cin + i) * cout;
            for (std::size_t o = 0; o < cout; ++o) gwrow[o] += xv * grow[o];
          }
        }
      }
    });
    t.accumulate(b, [&](std::span<double> gb) {
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t o = 0; o < cout; ++o) gb[o] += G[l * cout + o];
    });
  });
}

// Global max over time: [T, C] -> [C]. Ties route the gradient to the
// earliest maximal position.
inline Var max_over_time(Var x) {
  const Shape& xs = x.shape();
  detail::require(xs.size() == 2 && xs[0] > 0, "max_over_time", "expects a non-empty matrix");
  const std::size_t T = xs[0], C = xs[1];
  Tensor out(Shape{C});
  std::vector<std::size_t> arg(C, 0);
  const Tensor& xv = x.value();
  for (std::size_t c = 0; c < C; ++c) {
    double best = xv[c];
    for (std::size_t s = 1; s < T; ++s) {
      if (xv[s * C + c] > best) {
        best = xv[s * C + c];
        arg[c] = s;
      }
    }
    out[c] = best;
  }
  return x.tape->record("max_over_time", std::move(out), {x}, [x, arg = std::move(arg), C](Tape& t, const Tensor& g) {
    t.accumulate(x, [&](std::span<double> gx) {
      for (std::size_t c = 0; c < C; ++c) gx[arg[c] * C + c] += g[c];
    });
  });
}

// Non-overlapping max pooling along time: [T, C] -> [floor(T / size), C].
inline Var max_pool1d(Var x, std::size_t size) {
  const Shape& xs = x.shape();
  detail::require(xs.size() == 2 && size >= 1 && xs[0] >= size, "max_pool1d", "sequence shorter than window");
  const std::size_t T = xs[0] / size, C = xs[1];
  Tensor out(Shape{T, C});
  std::vector<std::size_t> arg(T * C);
  const Tensor& xv = x.value();
  for (std::size_t p = 0; p < T; ++p) {
    for (std::size_t c = 0; c < C; ++c) {
      std::size_t best = p * size;
      for (std::size_t s = p * size + 1; s < (p + 1) * size; ++s) {
        if (xv[s * C + c] > xv[best * C + c]) best = s;
      }
      arg[p * C + c] = best;
      out[p * C + c] = xv[best * C + c];
    }
  }
  return x.tape->record("max_pool1d", std::move(out), {x}, [x, arg = std::move(arg), C](Tape& t, const Tensor& g) {
    t.accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i] * C + i % C] += g[i];
    });
  });
}

// Inverted dropout. Identity in eval mode or when p == 0.
inline Var dropout(Var x, double p) {
  Tape& t = *x.tape;
  if (!t.training() || p <= 0.0) return x;
  detail::require(p < 1.0, "dropout", "rate must be < 1");
  const double keep = 1.0 / (1.0 - p);
  std::vector<double> mask(x.value().size());
  for (double& m : mask) m = t.rng().uniform() < p ? 0.0 : keep;
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return t.record("dropout", std::move(out), {x}, [x, mask = std::move(mask)](Tape& t, const Tensor& g) {
    t.accumulate(x, [&](std::span<double> gx) {
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * mask[i];
    });
  });
}

// softmax(q k^T / sqrt(d_k)); q: [T, dk], k: [S, dk] -> [T, S].
inline Var attention_weights(Var q, Var k) {
  const double dk = static_cast<double>(q.shape().back());
  return softmax(scale(matmul(q, transpose(k)), 1.0 / std::sqrt(dk)));
}

// Scaled dot-product attention; v: [S, dv] -> [T, dv].
inline Var attention(Var q, Var k, Var v) { return matmul(attention_weights(q, k), v); }

struct AttentionWeights {
  Parameter* wq;
  Parameter* wk;
  Parameter* wv;
  Parameter* wo;
  Parameter* bq;
  Parameter* bk;
  Parameter* bv;
  Parameter* bo;
};

// Multi-head self-attention over x: [T, d] with `heads` heads of width d / heads.
inline Var multi_head_attention(Var x, const AttentionWeights& w, std::size_t heads) {
  Tape& t = *x.tape;
  const std::size_t d = x.shape().back();
  detail::require(heads >= 1 && d % heads == 0, "multi_head_attention",
                  "width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  Var q = add_bias(matmul(x, t.param(*w.wq)), t.param(*w.bq));
  Var k = add_bias(matmul(x, t.param(*w.wk)), t.param(*w.bk));
  Var v = add_bias(matmul(x, t.param(*w.wv)), t.param(*w.bv));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(attention(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh), slice_cols(v, h * dh, dh)));
  }
  Var merged = heads == 1 ? outs.front() : concat(outs);
  return add_bias(matmul(merged, t.param(*w.wo)), t.param(*w.bo));
}

struct LstmState {
  Var h;
  Var c;
};

// One LSTM step with gate order (input, forget, cell, output).
// x: [in], state h/c: [H], w: [in + H, 4H], b: [4H].
inline LstmState lstm_step(Var x, LstmState state, Var w, Var b) {
  const std::size_t H = state.h.value().size();
  detail::require(w.shape().size() == 2 && w.shape()[1] == 4 * H, "lstm_step", "weight width must be 4H");
  Var z = add_bias(matmul(concat({x, state.h}), w), b);
  Var i = sigmoid(slice_cols(z, 0, H));
  Var f = sigmoid(slice_cols(z, H, H));
  Var g = tanh(slice_cols(z, 2 * H, H));
  Var o = sigmoid(slice_cols(z, 3 * H, H));
  Var c = add(mul(f, state.c), mul(i, g));
  Var h = mul(o, tanh(c));
  return {h, c};
}

// Sinusoidal position table [T, d]; not trainable.
inline Tensor positional_encoding(std::size_t T, std::size_t d) {
  Tensor pe(Shape{T, d});
  for (std::size_t pos = 0; pos < T; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double pair = static_cast<double>(i - i % 2);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, pair / static_cast<double>(d));
      pe[pos * d + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

// Dense layer: x W + b for x: [in] or [T, in].
inline Var linear(Var x, Parameter& w, Parameter& b) {
  Tape& t = *x.tape;
  return add_bias(matmul(x, t.param(w)), t.param(b));
}

}  // namespace geoloc::ops
