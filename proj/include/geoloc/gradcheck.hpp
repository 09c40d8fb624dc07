#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "geoloc/autodiff.hpp"
#include "geoloc/rng.hpp"

namespace geoloc {

struct GradCheckOptions {
  std::string label = "graph";  // names the op under test in failure messages
  double eps = 1e-3;
  double tol = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-3;
  std::size_t max_coords = 10000;
  std::uint64_t seed = 0;
  bool training = false;
};

struct GradCheckFailure {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::string label;
  bool passed = true;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates sitting on a kink or tie
  std::vector<GradCheckFailure> failures;

  std::string summary() const {
    std::ostringstream os;
    os << label << ": " << (passed ? "pass" : "FAIL") << " max_rel_error=" << max_rel_error
       << " checked=" << checked << " skipped=" << skipped;
    for (std::size_t i = 0; i < failures.size() && i < 5; ++i) {
      const auto& f = failures[i];
      os << "\n  " << f.param << "[" << f.index << "] analytic=" << f.analytic << " numeric=" << f.numeric
         << " rel=" << f.rel_error;
    }
    return os.str();
  }
};

// The builder records a scalar loss on the given tape, reading the
// parameters it closes over. It must be deterministic.
using LossBuilder = std::function<Var(Tape&)>;

// Compares reverse-mode gradients with central differences for every
// parameter coordinate (random subsample above max_coords). A mismatching
// coordinate is skipped, not failed, when it sits within eps of a
// non-differentiable point: its central differences at eps and eps/2
// disagree, or its one-sided slopes differ by a jump that does not shrink
// with the step.
inline GradCheckReport grad_check(const LossBuilder& builder, ParameterStore& params, GradCheckOptions opts = {}) {
  GradCheckReport report;
  report.label = opts.label;
  const TapeOptions tape_opts{true, opts.training, opts.seed};

  params.zero_grad();
  {
    Tape tape(tape_opts);
    Var loss = builder(tape);
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  for (std::size_t i = 0; i < params.size(); ++i) analytic.push_back(params[i].grad);

  struct Coord {
    std::size_t param, index;
  };
  std::vector<Coord> coords;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t k = 0; k < params[i].value.size(); ++k) coords.push_back({i, k});
  if (coords.size() > opts.max_coords) {
    Rng rng(derive_seed(opts.seed, 0x67726164));
    rng.shuffle(coords);
    coords.resize(opts.max_coords);
  }

  auto eval = [&]() {
    Tape tape(TapeOptions{false, opts.training, opts.seed});
    return builder(tape).value().item();
  };
  auto central = [&](double& x, double h) {
    const double orig = x;
    x = orig + h;
    const double fp = eval();
    x = orig - h;
    const double fm = eval();
    x = orig;
    return (fp - fm) / (2.0 * h);
  };
  auto rel = [&](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), opts.abs_floor});
  };
  // Difference between the right and left one-sided slopes. It shrinks
  // linearly with h on smooth functions and stays put on a kink.
  auto slope_jump = [&](double& x, double h) {
    const double orig = x;
    const double f0 = eval();
    x = orig + h;
    const double fp = eval();
    x = orig - h;
    const double fm = eval();
    x = orig;
    return ((fp - f0) - (f0 - fm)) / h;
  };
  auto on_kink = [&](double& x, double n) {
    const double n_half = central(x, opts.eps / 2.0);
    if (rel(n, n_half) > opts.tol) return true;
    const double j = std::abs(slope_jump(x, opts.eps));
    const double j_half = std::abs(slope_jump(x, opts.eps / 2.0));
    const double scale = std::max({std::abs(n), opts.abs_floor});
    return j > opts.tol * scale && j_half > 0.75 * j;
  };

  for (const Coord& c : coords) {
    double& x = params[c.param].value[c.index];
    const double a = analytic[c.param][c.index];
    const double n = central(x, opts.eps);
    double err = rel(a, n);
    if (err > opts.tol && on_kink(x, n)) {
      ++report.skipped;
      continue;
    }
    ++report.checked;
    report.max_rel_error = std::max(report.max_rel_error, err);
    if (err > opts.tol) {
      report.passed = false;
      report.failures.push_back({params[c.param].name, c.index, a, n, err});
    }
  }
  if (report.checked == 0) report.passed = false;
  params.zero_grad();
  return report;
}

}  // namespace geoloc
