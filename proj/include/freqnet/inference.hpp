#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <thread>
#include <vector>

#include "freqnet/errors.hpp"
#include "freqnet/ground.hpp"
#include "freqnet/rng.hpp"

namespace freqnet {

struct Query {
  GroundLiteral target;
  std::vector<GroundLiteral> evidence;
};

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  double effective_samples = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t samples = 0;
};

struct SamplingOptions {
  unsigned threads = 1;
  // Replace the sampled target indicator by its conditional probability when
  // the target's relation is not needed by any other sampled atom.
  bool rao_blackwell = false;
};

namespace detail {

inline void check_query(const Model& m, const DomainSizes& sizes, const Query& q) {
  std::vector<GroundLiteral> all = q.evidence;
  all.push_back(q.target);
  for (const auto& l : all) {
    const auto& rel = m.signature().relation(l.atom.rel);
    if (l.atom.args.size() != rel.arity()) throw ModelError("arity mismatch in query atom " + rel.name);
    for (size_t i = 0; i < rel.arity(); ++i)
      if (l.atom.args[i] < 0 || l.atom.args[i] >= sizes.at(rel.sorts[i]))
        throw ModelError("query atom " + atom_name(m.signature(), l.atom.rel, l.atom.args) + " is out of range");
  }
  for (size_t i = 0; i < q.evidence.size(); ++i)
    for (size_t j = i + 1; j < q.evidence.size(); ++j)
      if (q.evidence[i].atom == q.evidence[j].atom && q.evidence[i].positive != q.evidence[j].positive)
        throw ModelError("inconsistent evidence on " + atom_name(m.signature(), q.evidence[i].atom.rel,
                                                                 q.evidence[i].atom.args));
}

// Atoms that influence the query, in layer order: every atom of a strict
// ancestor of a mentioned relation, plus the mentioned atoms themselves.
inline std::vector<GroundAtom> needed_atoms(const Model& m, const DomainSizes& sizes, const Query& q,
                                            std::set<size_t>* ancestor_rels = nullptr) {
  std::set<size_t> mentioned;
  std::map<size_t, std::set<std::vector<int>>> mentioned_atoms;
  std::vector<GroundLiteral> all = q.evidence;
  all.push_back(q.target);
  for (const auto& l : all) {
    mentioned.insert(l.atom.rel);
    mentioned_atoms[l.atom.rel].insert(l.atom.args);
  }
  std::set<size_t> anc;
  for (size_t r : mentioned)
    for (size_t a : m.ancestors(r)) anc.insert(a);
  if (ancestor_rels) *ancestor_rels = anc;
  Structure shape(m.signature_ptr(), sizes);
  std::vector<GroundAtom> out;
  for (size_t r : m.topological_order()) {
    if (anc.count(r)) {
      for (std::uint64_t i = 0; i < shape.atom_count(r); ++i) out.push_back({r, shape.tuple_of(r, i)});
    } else if (mentioned.count(r)) {
      for (const auto& t : mentioned_atoms[r]) out.push_back({r, t});
    }
  }
  return out;
}

// Fixed-shape pairwise summation; the result does not depend on thread count.
inline double pairwise_sum(const double* v, size_t n) {
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  const size_t h = n / 2;
  return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

}  // namespace detail

inline double exact_query(const Model& m, const DomainSizes& sizes, const Query& q, size_t cap = default_cap()) {
  detail::check_query(m, sizes, q);
  auto atoms = detail::needed_atoms(m, sizes, q);
  if (atoms.size() > cap)
    throw CapExceeded(std::to_string(atoms.size()) + " relevant ground atoms exceed the enumeration cap of " +
                      std::to_string(cap));
  CompiledModel cm(m);
  Structure world(m.signature_ptr(), sizes);
  std::vector<int> evidence(atoms.size(), -1);
  int target_index = -1;
  for (size_t i = 0; i < atoms.size(); ++i) {
    for (const auto& e : q.evidence)
      if (e.atom == atoms[i]) evidence[i] = e.positive ? 1 : 0;
    if (q.target.atom == atoms[i]) target_index = static_cast<int>(i);
  }
  Evaluator ev(world);
  double evidence_mass = 0.0, joint_mass = 0.0;
  std::function<void(size_t, double)> dfs = [&](size_t k, double prob) {
    if (k == atoms.size()) {
      evidence_mass += prob;
      const bool t = world.holds(atoms[static_cast<size_t>(target_index)].rel,
                                 atoms[static_cast<size_t>(target_index)].args);
      if (t == q.target.positive) joint_mass += prob;
      return;
    }
    ev.reset();
    const auto& a = atoms[k];
    const double p = cm.atom_prob(ev, a.rel, a.args);
    for (int value = 1; value >= 0; --value) {
      if (evidence[k] >= 0 && evidence[k] != value) continue;
      const double w = value ? p : 1.0 - p;
      if (w <= 0.0) continue;
      world.set(a.rel, a.args, value == 1);
      dfs(k + 1, prob * w);
    }
    world.set(a.rel, a.args, false);
  };
  dfs(0, 1.0);
  if (evidence_mass <= 0.0) throw ZeroProbabilityEvidence("the evidence has probability zero");
  return joint_mass / evidence_mass;
}

// Ancestral sample of a complete world.
inline Structure forward_sample(const CompiledModel& cm, const DomainSizes& sizes, std::uint64_t seed) {
  const Model& m = cm.model();
  Structure world(m.signature_ptr(), sizes);
  Rng rng(seed);
  Evaluator ev(world);
  FeatureCache cache;
  for (size_t r : cm.order())
    for (std::uint64_t i = 0; i < world.atom_count(r); ++i) {
      const auto tuple = world.tuple_of(r, i);
      world.set_index(r, i, rng.bernoulli(cm.atom_prob(ev, r, tuple, &cache)));
    }
  return world;
}

inline Structure forward_sample(const Model& m, const DomainSizes& sizes, std::uint64_t seed) {
  CompiledModel cm(m);
  return forward_sample(cm, sizes, seed);
}

// Likelihood weighting over the atoms relevant to the query.
inline Estimate estimate_query(const Model& m, const DomainSizes& sizes, const Query& q, std::uint64_t n_samples,
                               std::uint64_t seed, const SamplingOptions& opt = {}) {
  if (n_samples == 0) throw ModelError("at least one sample is required");
  detail::check_query(m, sizes, q);
  std::set<size_t> anc;
  const auto atoms = detail::needed_atoms(m, sizes, q, &anc);
  CompiledModel cm(m);
  std::vector<int> evidence(atoms.size(), -1);
  size_t target_index = 0;
  for (size_t i = 0; i < atoms.size(); ++i) {
    for (const auto& e : q.evidence)
      if (e.atom == atoms[i]) evidence[i] = e.positive ? 1 : 0;
    if (q.target.atom == atoms[i]) target_index = i;
  }
  const bool rb = opt.rao_blackwell && !anc.count(q.target.atom.rel) && evidence[target_index] < 0;

  std::vector<double> weights(n_samples), hits(n_samples);
  auto run = [&](std::uint64_t begin, std::uint64_t end) {
    Structure world(m.signature_ptr(), sizes);
    Evaluator ev(world);
    FeatureCache cache;
    for (std::uint64_t s = begin; s < end; ++s) {
      Rng rng(derive_seed(seed, s));
      ev.reset();
      cache.clear();
      double w = 1.0, t = 0.0;
      for (size_t k = 0; k < atoms.size() && w > 0.0; ++k) {
        const auto& a = atoms[k];
        const double p = cm.atom_prob(ev, a.rel, a.args, &cache);
        if (k == target_index && rb) {
          t = q.target.positive ? p : 1.0 - p;
          continue;
        }
        bool value;
        if (evidence[k] >= 0) {
          value = evidence[k] == 1;
          w *= value ? p : 1.0 - p;
        } else {
          value = rng.bernoulli(p);
        }
        world.set(a.rel, a.args, value);
        if (k == target_index) t = value == q.target.positive ? 1.0 : 0.0;
      }
      weights[s] = w;
      hits[s] = w > 0.0 ? w * t : 0.0;
    }
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(n_samples)));
  if (threads == 1) {
    run(0, n_samples);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (unsigned t = 0; t < threads; ++t) {
      const std::uint64_t b = n_samples * t / threads, e = n_samples * (t + 1) / threads;
      pool.emplace_back([&, t, b, e] {
        try {
          run(b, e);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  const double sw = detail::pairwise_sum(weights.data(), weights.size());
  if (sw <= 0.0)
    throw ZeroProbabilityEvidence("all " + std::to_string(n_samples) + " likelihood weights are zero");
  const double est = detail::pairwise_sum(hits.data(), hits.size()) / sw;
  std::vector<double> sq(n_samples), w2(n_samples);
  for (std::uint64_t s = 0; s < n_samples; ++s) {
    const double t = weights[s] > 0.0 ? hits[s] / weights[s] : 0.0;
    sq[s] = weights[s] * weights[s] * (t - est) * (t - est);
    w2[s] = weights[s] * weights[s];
  }
  Estimate out;
  out.value = est;
  out.std_error = std::sqrt(detail::pairwise_sum(sq.data(), sq.size())) / sw;
  out.effective_samples = sw * sw / detail::pairwise_sum(w2.data(), w2.size());
  out.seed = seed;
  out.samples = n_samples;
  return out;
}

}  // namespace freqnet
