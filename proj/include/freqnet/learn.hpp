#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "freqnet/errors.hpp"
#include "freqnet/eval.hpp"
#include "freqnet/ground.hpp"
#include "freqnet/model.hpp"
#include "freqnet/projective.hpp"
#include "freqnet/rng.hpp"

namespace freqnet {

inline constexpr double kDefaultCellValue = 0.5;

struct FrequencyFit {
  Model model;
  std::vector<std::string> diagnostics;
};

// Sets every partition case probability to the relative frequency of the
// relation among the data tuples satisfying that case. Functional nodes are
// copied unchanged.
inline FrequencyFit fit_partition_frequencies(const Model& skeleton, const Structure& data) {
  const auto& sig = skeleton.signature();
  if (!(sig == data.signature())) throw ModelError("data signature differs from the model signature");
  FrequencyFit out{skeleton, {}};
  Evaluator ev(data);
  for (size_t r = 0; r < skeleton.size(); ++r) {
    const auto& spec = skeleton.node(r);
    if (!spec.is_partition()) continue;
    ev.reset();
    std::vector<CompiledFormula> cases;
    for (const auto& c : spec.cases) cases.emplace_back(c.chi, sig, spec.args);
    std::vector<std::uint64_t> total(cases.size(), 0), hits(cases.size(), 0);
    for (std::uint64_t i = 0; i < data.atom_count(r); ++i) {
      const auto tuple = data.tuple_of(r, i);
      int hit = -1;
      for (size_t c = 0; c < cases.size(); ++c) {
        std::vector<int> env(cases[c].slot_count(), 0);
        std::copy(tuple.begin(), tuple.end(), env.begin());
        if (!ev.eval(cases[c], env)) continue;
        if (hit >= 0)
          throw PartitionViolation("cases " + std::to_string(hit + 1) + " and " + std::to_string(c + 1) +
                                   " both hold for " + atom_name(sig, r, tuple) + " in the data");
        hit = static_cast<int>(c);
      }
      if (hit < 0) throw PartitionViolation("no case holds for " + atom_name(sig, r, tuple) + " in the data");
      ++total[static_cast<size_t>(hit)];
      hits[static_cast<size_t>(hit)] += data.holds_index(r, i);
    }
    auto& node = out.model.mutable_node(r);
    for (size_t c = 0; c < cases.size(); ++c) {
      if (total[c] == 0) {
        node.cases[c].mu = kDefaultCellValue;
        out.diagnostics.push_back("node '" + sig.relation(r).name + "' case " + std::to_string(c + 1) +
                                  " has no instances in the data; probability set to 0.5");
      } else {
        node.cases[c].mu = static_cast<double>(hits[c]) / static_cast<double>(total[c]);
      }
    }
  }
  return out;
}

// Sorted uniformly random subset of k elements out of n.
inline std::vector<int> sample_elements(std::int64_t n, std::int64_t k, Rng& rng) {
  std::vector<int> pool(static_cast<size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = static_cast<int>(i);
  for (std::int64_t i = 0; i < k; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

// Induced substructure on a random subset of each sort; element i of the
// result is the i-th smallest kept element.
inline Structure sample_substructure(const Structure& data, const DomainSizes& m, std::uint64_t seed) {
  const auto& sig = data.signature();
  size_t max_arity = 0;
  for (const auto& rel : sig.relations()) max_arity = std::max(max_arity, rel.arity());
  std::map<std::string, std::vector<int>> kept;
  for (size_t s = 0; s < sig.sorts().size(); ++s) {
    const auto& sort = sig.sorts()[s];
    const std::int64_t n = data.size_of(sort), k = m.at(sort);
    if (k > n)
      throw ModelError("substructure size " + std::to_string(k) + " exceeds the size " + std::to_string(n) +
                       " of sort '" + sort + "'");
    if (k <= static_cast<std::int64_t>(max_arity))
      throw ModelError("substructure size " + std::to_string(k) + " for sort '" + sort +
                       "' must exceed the highest arity " + std::to_string(max_arity));
    Rng rng(derive_seed(seed, s));
    kept[sort] = sample_elements(n, k, rng);
  }
  DomainSizes sizes;
  for (const auto& s : sig.sorts()) sizes.set(s, m.at(s));
  Structure out(data.signature_ptr(), sizes);
  for (size_t r = 0; r < sig.relations().size(); ++r) {
    const auto& sorts = sig.relation(r).sorts;
    std::vector<int> old(sorts.size());
    for (std::uint64_t i = 0; i < out.atom_count(r); ++i) {
      const auto t = out.tuple_of(r, i);
      for (size_t j = 0; j < t.size(); ++j) old[j] = kept[sorts[j]][static_cast<size_t>(t[j])];
      out.set_index(r, i, data.holds(r, old));
    }
  }
  return out;
}

// Flat parameter vector in Model::parameter_slots order.
inline std::vector<double> model_params(const Model& m) {
  std::vector<double> out;
  for (const auto& [r, i] : m.parameter_slots()) out.push_back(m.node(r).function.params()[i]);
  return out;
}

inline Model with_params(const Model& m, std::span<const double> params) {
  const auto slots = m.parameter_slots();
  if (params.size() != slots.size())
    throw ModelError("expected " + std::to_string(slots.size()) + " parameters, got " +
                     std::to_string(params.size()));
  Model out = m;
  for (size_t k = 0; k < slots.size(); ++k) {
    const auto [r, i] = slots[k];
    auto& f = out.mutable_node(r).function;
    if (!f.bounds()[i].contains(params[k]))
      throw ModelError("parameter " + std::to_string(k) + " of node '" + m.signature().relation(r).name +
                       "' = " + std::to_string(params[k]) + " is outside its bounds");
    f.set_param(i, params[k]);
  }
  return out;
}

inline std::vector<ParamBounds> param_bounds(const Model& m) {
  std::vector<ParamBounds> out;
  for (const auto& [r, i] : m.parameter_slots()) out.push_back(m.node(r).function.bounds()[i]);
  return out;
}

// Names such as "R.w1", "R.c" or "Q.p", one per parameter slot.
inline std::vector<std::string> param_names(const Model& m) {
  std::vector<std::string> out;
  for (const auto& [r, i] : m.parameter_slots()) {
    const auto& f = m.node(r).function;
    const std::string prefix = m.signature().relation(r).name + ".";
    std::string local;
    switch (f.kind()) {
      case FamilyKind::Constant: local = "p"; break;
      case FamilyKind::Bump: local = i == 0 ? "alpha" : i == 1 ? "beta" : "p"; break;
      case FamilyKind::Table: local = "v" + std::to_string(i); break;
      default: local = i + 1 == f.params().size() ? "c" : "w" + std::to_string(i + 1); break;
    }
    out.push_back(prefix + local);
  }
  return out;
}

enum class GradientMode { Analytic, FiniteDifference };

struct LogLikelihood {
  double value = 0.0;
  std::vector<double> gradient;
  std::uint64_t atoms = 0;      // observed atoms scored
  std::uint64_t undefined = 0;  // atoms whose diagram has limit probability zero (not scored)
  std::vector<std::string> diagnostics;
};

namespace detail {

// Observed counts of one relation, per equality pattern and table row.
using RowCounts = std::map<std::pair<std::vector<int>, std::uint64_t>, std::pair<std::uint64_t, std::uint64_t>>;

inline RowCounts count_rows(const QfLbn& qf, const Structure& s, size_t r) {
  RowCounts out;
  for (std::uint64_t i = 0; i < s.atom_count(r); ++i) {
    const auto tuple = s.tuple_of(r, i);
    auto pattern = equality_pattern(tuple);
    const QfTable& t = qf.table(r, pattern);
    std::vector<int> elems;
    for (size_t j = 0; j < tuple.size(); ++j)
      if (static_cast<size_t>(pattern[j]) == elems.size()) elems.push_back(tuple[j]);
    std::uint64_t mask = 0;
    std::vector<int> args;
    for (size_t c = 0; c < t.context.size(); ++c) {
      args.clear();
      for (int a : t.context[c].args) args.push_back(elems[static_cast<size_t>(a)]);
      if (s.holds(t.context[c].rel, args)) mask |= std::uint64_t{1} << c;
    }
    auto& cell = out[{std::move(pattern), mask}];
    (s.holds_index(r, i) ? cell.first : cell.second) += 1;
  }
  return out;
}

// dq/dtheta for a family at limit inputs x.
inline std::vector<double> family_gradient(const FunctionFamily& f, std::span<const double> x) {
  if (f.kind() == FamilyKind::Constant) return {1.0};
  if (f.kind() == FamilyKind::Table) {
    std::vector<double> g(f.params().size(), 0.0);
    std::uint64_t idx = 0;
    for (size_t i = 0; i < x.size(); ++i)
      if (x[i] == 1.0) idx |= std::uint64_t{1} << i;
    g[idx] = 1.0;
    return g;
  }
  return f.grad(x);
}

struct LikelihoodTerms {
  double value = 0.0;
  std::vector<double> gradient;  // analytic part, zero elsewhere
  std::uint64_t atoms = 0, undefined = 0;
  std::vector<std::string> diagnostics;
};

inline LikelihoodTerms score(const Model& m, const QfLbn& qf, const std::vector<Structure>& structures,
                             const std::vector<char>& analytic) {
  const auto slots = m.parameter_slots();
  LikelihoodTerms out;
  out.gradient.assign(slots.size(), 0.0);
  std::vector<size_t> first_slot(m.size(), slots.size());
  for (size_t k = slots.size(); k-- > 0;) first_slot[slots[k].first] = k;
  for (size_t si = 0; si < structures.size(); ++si) {
    const auto& s = structures[si];
    for (size_t r : qf.order()) {
      for (const auto& [key, cnt] : count_rows(qf, s, r)) {
        const QfTable& t = qf.table(r, key.first);
        const auto [pos, neg] = cnt;
        if (!t.defined[key.second]) {
          out.undefined += pos + neg;
          continue;
        }
        out.atoms += pos + neg;
        const double q = t.q[key.second];
        if ((pos > 0 && q <= 0.0) || (neg > 0 && q >= 1.0)) {
          out.value = -std::numeric_limits<double>::infinity();
          out.diagnostics.push_back("structure " + std::to_string(si) + ": observed " +
                                    (pos > 0 && q <= 0.0 ? "" : "~") + m.signature().relation(r).name +
                                    " has limit probability zero on its diagram");
          continue;
        }
        if (pos) out.value += static_cast<double>(pos) * std::log(q);
        if (neg) out.value += static_cast<double>(neg) * std::log1p(-q);
        if (first_slot[r] == slots.size() || !analytic[first_slot[r]]) continue;
        const double dq = (pos ? static_cast<double>(pos) / q : 0.0) - (neg ? static_cast<double>(neg) / (1.0 - q) : 0.0);
        const auto g = family_gradient(m.node(r).function, t.inputs.at(key.second));
        for (size_t i = 0; i < g.size(); ++i) out.gradient[first_slot[r] + i] += dq * g[i];
      }
    }
  }
  return out;
}

// Slots whose relation feeds no functional node: their tables are the only
// ones moved by the parameter, so the chain rule through the family is exact.
inline std::vector<char> analytic_slots(const Model& m) {
  std::vector<char> feeds_functional(m.size(), 0);
  for (size_t r = 0; r < m.size(); ++r)
    if (!m.node(r).is_partition())
      for (size_t a : m.ancestors(r)) feeds_functional[a] = 1;
  std::vector<char> out;
  for (const auto& [r, i] : m.parameter_slots()) {
    const auto& f = m.node(r).function;
    out.push_back(!feeds_functional[r] && (f.differentiable() || f.kind() == FamilyKind::Table));
  }
  return out;
}

}  // namespace detail

// Log-likelihood of fully observed structures under the compiled limit of
// `model` with the given parameters: every ground atom is scored by its limit
// table row, selected by the equality pattern of its arguments and the
// observed truth values of the row's context atoms.
inline LogLikelihood projective_log_likelihood(const Model& model, std::span<const double> params,
                                               const std::vector<Structure>& structures,
                                               GradientMode mode = GradientMode::Analytic, bool want_gradient = true,
                                               double fd_step = 1e-5, const CompileOptions& opt = {}) {
  Model m = with_params(model, params);
  LogLikelihood out;
  out.gradient.assign(params.size(), 0.0);
  if (structures.empty()) return out;
  std::vector<char> analytic =
      mode == GradientMode::Analytic ? detail::analytic_slots(m) : std::vector<char>(params.size(), 0);
  if (!want_gradient) analytic.assign(params.size(), 0);
  auto terms = detail::score(m, compile_limit(m, opt), structures, analytic);
  out.value = terms.value;
  out.atoms = terms.atoms;
  out.undefined = terms.undefined;
  out.diagnostics = std::move(terms.diagnostics);
  if (!want_gradient || std::isinf(out.value)) return out;
  out.gradient = std::move(terms.gradient);
  const auto bounds = param_bounds(m);
  const std::vector<char> none(params.size(), 0);
  for (size_t k = 0; k < params.size(); ++k) {
    if (analytic[k]) continue;
    const double h = fd_step * std::max(1.0, std::abs(params[k]));
    const double hi = bounds[k].clamp(params[k] + h), lo = bounds[k].clamp(params[k] - h);
    if (hi == lo) continue;
    std::vector<double> p(params.begin(), params.end());
    p[k] = hi;
    Model mp = with_params(model, p);
    const double vp = detail::score(mp, compile_limit(mp, opt), structures, none).value;
    p[k] = lo;
    Model mm = with_params(model, p);
    const double vm = detail::score(mm, compile_limit(mm, opt), structures, none).value;
    out.gradient[k] = (vp - vm) / (hi - lo);
  }
  return out;
}

struct FitConfig {
  double learning_rate = 1.0;  // initial step on the per-atom mean log-likelihood
  int max_iterations = 500;
  double tolerance = 1e-10;  // stop when an accepted step improves the per-atom mean by less
  GradientMode gradient = GradientMode::Analytic;
  std::uint64_t seed = 0;
  double fd_step = 1e-5;
  std::vector<bool> frozen;  // optional, one flag per parameter slot
  CompileOptions compile{};
};

struct FitResult {
  std::vector<double> params;
  double loglik = 0.0;
  int iterations = 0;
  bool converged = false;
  Model model;
  std::vector<double> trace;  // log-likelihood after each accepted step, starting with the initial value
  std::vector<std::string> diagnostics;
};

// Projected gradient ascent with backtracking: a step is accepted only if it
// does not lower the log-likelihood.
inline FitResult fit_params(const Model& model, const std::vector<Structure>& structures,
                            const FitConfig& cfg = {}) {
  if (!(cfg.learning_rate > 0.0) || cfg.max_iterations < 0 || !(cfg.tolerance > 0.0) || !(cfg.fd_step > 0.0))
    throw ModelError("learning rate, tolerance and finite-difference step must be positive");
  auto theta = model_params(model);
  if (!cfg.frozen.empty() && cfg.frozen.size() != theta.size())
    throw ModelError("frozen mask has " + std::to_string(cfg.frozen.size()) + " entries for " +
                     std::to_string(theta.size()) + " parameters");
  const auto bounds = param_bounds(model);
  auto evaluate = [&](const std::vector<double>& p, bool grad) {
    return projective_log_likelihood(model, p, structures, cfg.gradient, grad, cfg.fd_step, cfg.compile);
  };
  auto current = evaluate(theta, cfg.max_iterations > 0);
  FitResult out;
  out.trace.push_back(current.value);
  out.diagnostics = current.diagnostics;
  auto finish = [&]() {
    out.params = theta;
    out.loglik = current.value;
    out.model = with_params(model, theta);
    return out;
  };
  if (std::isnan(current.value)) throw FitDivergence("log-likelihood is NaN at iteration 0");
  if (cfg.max_iterations == 0) return finish();
  const double scale = 1.0 / static_cast<double>(std::max<std::uint64_t>(1, current.atoms));
  double step = cfg.learning_rate;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    out.iterations = it;
    std::vector<double> g = current.gradient;
    for (size_t k = 0; k < g.size(); ++k) {
      if (std::isnan(g[k])) throw FitDivergence("gradient is NaN at iteration " + std::to_string(it));
      g[k] = cfg.frozen.empty() || !cfg.frozen[k] ? g[k] * scale : 0.0;
    }
    bool accepted = false;
    std::vector<double> cand(theta.size());
    LogLikelihood next;
    while (step >= cfg.learning_rate * 1e-14) {
      for (size_t k = 0; k < theta.size(); ++k) cand[k] = bounds[k].clamp(theta[k] + step * g[k]);
      if (cand == theta) break;
      next = evaluate(cand, false);
      if (std::isnan(next.value)) throw FitDivergence("log-likelihood is NaN at iteration " + std::to_string(it));
      if (next.value >= current.value) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      out.converged = true;
      break;
    }
    const double gain = (next.value - current.value) * scale;
    std::vector<double> prev_theta = theta, prev_grad = std::move(g);
    theta = cand;
    current = evaluate(theta, true);
    out.trace.push_back(current.value);
    // Barzilai-Borwein step from the last secant pair when it shows curvature.
    double ss = 0.0, sy = 0.0;
    for (size_t k = 0; k < theta.size(); ++k) {
      if (!cfg.frozen.empty() && cfg.frozen[k]) continue;
      const double sk = theta[k] - prev_theta[k], yk = current.gradient[k] * scale - prev_grad[k];
      ss += sk * sk;
      sy += sk * yk;
    }
    step = sy < 0.0 && std::isfinite(sy) ? ss / -sy : step * 2.0;
    if (gain < cfg.tolerance) {
      out.converged = true;
      break;
    }
  }
  return finish();
}

}  // namespace freqnet
