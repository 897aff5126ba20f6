#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "freqnet/errors.hpp"
#include "freqnet/inference.hpp"
#include "freqnet/learn.hpp"
#include "freqnet/model.hpp"
#include "freqnet/projective.hpp"

namespace freqnet {

// Count-based relational logistic regression: solving sigmoid(w k) = 0.1 for
// the weight w at two numbers k of related objects.
struct RlrReport {
  double w_small = 0.0;   // k = 10
  double w_large = 0.0;   // k = 100
  double transfer = 0.0;  // sigmoid(w_small * 100)
};

inline RlrReport run_rlr_mismatch() {
  RlrReport r;
  r.w_small = std::log(1.0 / 9.0) / 10.0;
  r.w_large = std::log(1.0 / 9.0) / 100.0;
  r.transfer = sigmoid(r.w_small * 100.0);
  return r;
}

inline void check_schedule(const std::vector<std::int64_t>& sizes) {
  if (sizes.empty()) throw ModelError("size schedule is empty");
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1) throw ModelError("domain sizes must be positive");
    if (i > 0 && sizes[i] <= sizes[i - 1]) throw ModelError("size schedule must be strictly increasing");
  }
}

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

// Partition-only models go through the threshold compiler, which refuses
// critical comparisons; everything else through compile_limit.
inline QfLbn compile_any(const Model& m, const CompileOptions& opt = {}) {
  return m.all_partition() ? compile_threshold_limit(m, opt) : compile_limit(m, opt);
}

// Positive literal of `rel` on the first elements 0, 1, ... of each argument.
inline Query first_atom_query(const Model& m, const std::string& rel) {
  const size_t r = m.signature().relation_index(rel);
  std::vector<int> args(m.signature().relation(r).arity());
  for (size_t i = 0; i < args.size(); ++i) args[i] = static_cast<int>(i);
  return Query{{{r, std::move(args)}, true}, {}};
}

struct ConvergenceSpec {
  Model model;
  std::string relation;
  std::vector<std::int64_t> sizes;
  std::uint64_t samples = 20000;
  std::uint64_t seed = 0;
  unsigned threads = default_threads();
  bool rao_blackwell = true;
  CompileOptions compile{};
};

struct ConvergenceRow {
  std::int64_t n = 0;
  double estimate = 0.0;
  double stderr_ = 0.0;
  double limit = 0.0;
  double gap = 0.0;
};

// Likelihood-weighting estimates of the query at each domain size next to
// its compiled limit. Sizes are seeded independently from the master seed.
inline std::vector<ConvergenceRow> run_convergence(const ConvergenceSpec& spec) {
  check_schedule(spec.sizes);
  const Query q = first_atom_query(spec.model, spec.relation);
  const double limit = limit_query(compile_any(spec.model, spec.compile), q);
  std::vector<ConvergenceRow> rows;
  for (size_t i = 0; i < spec.sizes.size(); ++i) {
    const auto n = spec.sizes[i];
    auto est = estimate_query(spec.model, DomainSizes::uniform(spec.model.signature(), n), q, spec.samples,
                              derive_seed(spec.seed, i), {spec.threads, spec.rao_blackwell});
    rows.push_back({n, est.value, est.std_error, limit, std::abs(est.value - limit)});
  }
  return rows;
}

inline void write_convergence_csv(std::ostream& os, const std::vector<ConvergenceRow>& rows) {
  os << "n,estimate,stderr,limit,gap\n" << std::setprecision(10);
  for (const auto& r : rows) os << r.n << ',' << r.estimate << ',' << r.stderr_ << ',' << r.limit << ',' << r.gap << '\n';
}

struct SweepSpec {
  Model model;
  std::string relation;     // the parametrized relation; also the query target
  size_t param_index = 0;   // parameter of that relation's function to sweep
  double lo = -3.0, hi = 3.0, step = 0.5;
  std::vector<std::int64_t> sizes{50, 200, 800};
  std::uint64_t samples = 20000;
  std::uint64_t seed = 0;
  unsigned threads = default_threads();
  CompileOptions compile{};
};

struct SweepRow {
  std::string kind;  // "point" per grid point, "max" for the per-size maximum over the grid
  std::int64_t n = 0;
  double w = 0.0;
  double gap = 0.0;
  double stderr_ = 0.0;
  double reference_gap = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<double> grid;
  std::vector<double> limits;       // limit query per grid point
  std::vector<double> jump_bounds;  // Lipschitz bound per adjacent pair
  bool continuous = true;
};

namespace detail {

// Count-based contrast: sigmoid(w n mu) tends to a step in w. Its gap over
// the grid cell [w - h/2, w + h/2] is a supremum, attained at the end nearest 0.
inline double reference_cell_gap(double w, double h, std::int64_t n, double mu) {
  const double a = w - h / 2, b = w + h / 2;
  if (a <= 0.0 && b >= 0.0) return 0.5;
  const double nearest = a > 0.0 ? a : b;
  const double step = nearest > 0.0 ? 1.0 : 0.0;
  return std::abs(sigmoid(nearest * static_cast<double>(n) * mu) - step);
}

}  // namespace detail

// Gap between the finite-size query probability and its limit over a
// parameter grid; the estimates use Rao-Blackwellized likelihood weighting.
inline SweepResult run_uniform_sweep(const SweepSpec& spec) {
  check_schedule(spec.sizes);
  if (!(spec.step > 0.0) || spec.hi < spec.lo) throw ModelError("sweep grid needs lo <= hi and a positive step");
  const auto& sig = spec.model.signature();
  const size_t r = sig.relation_index(spec.relation);
  const auto& spec_node = spec.model.node(r);
  if (spec_node.is_partition()) throw ModelError("sweep relation '" + spec.relation + "' has no parametric function");
  if (spec.param_index >= spec_node.function.params().size()) throw ModelError("sweep parameter index out of range");
  const auto bound = spec_node.function.bounds()[spec.param_index];
  SweepResult out;
  for (int i = 0;; ++i) {
    const double w = spec.lo + i * spec.step;
    if (w > spec.hi + 1e-9 * spec.step) break;
    if (!bound.contains(w)) throw ModelError("grid point " + std::to_string(w) + " is outside the parameter bounds");
    out.grid.push_back(std::abs(w) < 1e-12 ? 0.0 : w);
  }
  const Query q = first_atom_query(spec.model, spec.relation);
  auto at = [&](double w) {
    Model m = spec.model;
    m.mutable_node(r).function.set_param(spec.param_index, w);
    return m;
  };

  std::vector<QfLbn> compiled;
  for (double w : out.grid) {
    compiled.push_back(compile_limit(at(w), spec.compile));
    out.limits.push_back(limit_query(compiled.back(), q));
  }
  // Limiting value of the first feature, used as the contrast's mean.
  double mu = 0.0;
  {
    const auto& t = compiled.front().tables(r).begin()->second;
    for (size_t row = 0; row < t.q.size(); ++row)
      if (t.defined[row] && !t.inputs[row].empty()) mu = std::max(mu, t.inputs[row].front());
  }

  // Continuity: adjacent limits differ by at most max |df/dw| over the
  // interval times the spacing, with inputs read off the compiled rows.
  for (size_t i = 0; i + 1 < out.grid.size(); ++i) {
    double slope = 0.0;
    const auto& tables = compiled[i].tables(r);
    for (int k = 0; k <= 32; ++k) {
      auto f = at(out.grid[i] + (out.grid[i + 1] - out.grid[i]) * k / 32.0).node(r).function;
      for (const auto& [pat, t] : tables)
        for (size_t row = 0; row < t.q.size(); ++row)
          if (t.defined[row])
            slope = std::max(slope, std::abs(detail::family_gradient(f, t.inputs[row])[spec.param_index]));
    }
    const double bound_i = slope * (out.grid[i + 1] - out.grid[i]) * 1.05 + 1e-6;
    out.jump_bounds.push_back(bound_i);
    if (std::abs(out.limits[i + 1] - out.limits[i]) > bound_i) out.continuous = false;
  }

  for (size_t si = 0; si < spec.sizes.size(); ++si) {
    const auto n = spec.sizes[si];
    SweepRow best{"max", n, 0.0, -1.0, 0.0, 0.0};
    for (size_t gi = 0; gi < out.grid.size(); ++gi) {
      auto est = estimate_query(at(out.grid[gi]), DomainSizes::uniform(sig, n), q, spec.samples,
                                derive_seed(spec.seed, si * 1000003 + gi), {spec.threads, true});
      SweepRow row{"point", n, out.grid[gi], std::abs(est.value - out.limits[gi]), est.std_error,
                   detail::reference_cell_gap(out.grid[gi], spec.step, n, mu)};
      if (row.gap > best.gap) {
        best.w = row.w;
        best.gap = row.gap;
        best.stderr_ = row.stderr_;
      }
      best.reference_gap = std::max(best.reference_gap, row.reference_gap);
      out.rows.push_back(row);
    }
    out.rows.push_back(best);
  }
  return out;
}

inline void write_sweep_csv(std::ostream& os, const SweepResult& res) {
  os << "kind,n,w,gap,stderr,reference_gap\n" << std::setprecision(10);
  for (const auto& r : res.rows)
    os << r.kind << ',' << r.n << ',' << r.w << ',' << r.gap << ',' << r.stderr_ << ',' << r.reference_gap << '\n';
}

struct TransferSpec {
  Model generator;
  Model skeleton;  // starting point of the fit; must share the generator's signature
  std::string relation;
  std::int64_t n = 1000;
  int substructures = 50;
  std::int64_t m = 50;
  std::uint64_t seed = 0;
  FitConfig fit{};
};

struct TransferReport {
  double true_limit = 0.0;
  double fitted_limit = 0.0;
  double gap = 0.0;
  FitResult fit;
};

// Generate one world of size n, fit the skeleton on random substructures of
// size m, and compare the limit query probabilities.
inline TransferReport run_transfer(const TransferSpec& spec) {
  if (!(spec.generator.signature() == spec.skeleton.signature()))
    throw ModelError("generator and skeleton signatures differ");
  if (spec.substructures < 1) throw ModelError("at least one substructure is required");
  const auto& sig = spec.generator.signature();
  const Query q = first_atom_query(spec.generator, spec.relation);
  auto world = forward_sample(spec.generator, DomainSizes::uniform(sig, spec.n), derive_seed(spec.seed, 0));
  std::vector<Structure> subs;
  for (int i = 0; i < spec.substructures; ++i)
    subs.push_back(sample_substructure(world, DomainSizes::uniform(sig, spec.m), derive_seed(spec.seed, 1 + i)));
  TransferReport out;
  out.true_limit = limit_query(compile_any(spec.generator, spec.fit.compile), q);
  out.fit = fit_params(spec.skeleton, subs, spec.fit);
  out.fitted_limit = limit_query(compile_any(out.fit.model, spec.fit.compile), q);
  out.gap = std::abs(out.fitted_limit - out.true_limit);
  return out;
}

inline void write_fit_csv(std::ostream& os, const Model& m, const FitResult& fit) {
  for (const auto& name : param_names(m)) os << name << ',';
  os << "loglik,iterations,converged\n" << std::setprecision(10);
  for (double p : fit.params) os << p << ',';
  os << fit.loglik << ',' << fit.iterations << ',' << (fit.converged ? 1 : 0) << '\n';
}

}  // namespace freqnet
