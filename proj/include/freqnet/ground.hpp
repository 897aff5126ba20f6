#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

#include "freqnet/errors.hpp"
#include "freqnet/eval.hpp"
#include "freqnet/model.hpp"
#include "freqnet/syntax.hpp"

namespace freqnet {

inline constexpr size_t kDefaultCap = 24;

// Enumeration cap, overridable through FREQNET_CAP.
inline size_t default_cap() {
  if (const char* env = std::getenv("FREQNET_CAP")) {
    char* end = nullptr;
    unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0 && v <= 40) return static_cast<size_t>(v);
  }
  return kDefaultCap;
}

inline std::string atom_name(const Signature& sig, size_t rel, std::span<const int> tuple) {
  std::string s = sig.relation(rel).name + "(";
  for (size_t i = 0; i < tuple.size(); ++i) s += (i ? "," : "") + std::to_string(tuple[i]);
  return s + ")";
}

// Per-world memo of feature values keyed by the node arguments a feature depends on.
class FeatureCache {
 public:
  void clear() { tables_.clear(); }
  std::unordered_map<std::uint64_t, double>& table(size_t rel, size_t feature) {
    return tables_[rel * 4096 + feature];
  }

 private:
  std::unordered_map<size_t, std::unordered_map<std::uint64_t, double>> tables_;
};

// Model with every node formula lowered for fast repeated evaluation.
class CompiledModel {
 public:
  struct CompiledFeature {
    CompiledFormula joint;      // phi & psi over args ++ ys
    CompiledFormula condition;  // psi over args ++ ys
    std::vector<int> y_slots;
    std::vector<int> y_sorts;
    std::vector<int> dep_args;  // argument positions the value depends on
    bool conditional = false;
  };
  struct CompiledNode {
    std::vector<CompiledFormula> cases;
    std::vector<CompiledFeature> features;
  };

  explicit CompiledModel(const Model& m) : model_(&m), order_(m.topological_order()) {
    m.check();
    const auto& sig = m.signature();
    nodes_.resize(m.size());
    for (size_t r = 0; r < m.size(); ++r) {
      const auto& spec = m.node(r);
      auto& node = nodes_[r];
      for (const auto& c : spec.cases) node.cases.emplace_back(c.chi, sig, spec.args);
      for (const auto& f : spec.features) {
        std::vector<Variable> slots = spec.args;
        CompiledFeature cf;
        for (const auto& y : f.ys) {
          cf.y_slots.push_back(static_cast<int>(slots.size()));
          const auto& sorts = sig.sorts();
          cf.y_sorts.push_back(static_cast<int>(std::find(sorts.begin(), sorts.end(), y.sort) - sorts.begin()));
          slots.push_back(y);
        }
        cf.joint = CompiledFormula(Formula::conj(f.phi, f.psi), sig, slots);
        cf.condition = CompiledFormula(f.psi, sig, slots);
        cf.conditional = f.conditional();
        std::set<std::string> used;
        for (const auto& v : free_variables(Formula::conj(f.phi, f.psi))) used.insert(v.name);
        for (size_t i = 0; i < spec.args.size(); ++i) {
          bool shadowed = false;
          for (const auto& y : f.ys) shadowed |= y.name == spec.args[i].name;
          if (used.count(spec.args[i].name) && !shadowed) cf.dep_args.push_back(static_cast<int>(i));
        }
        node.features.push_back(std::move(cf));
      }
    }
  }

  const Model& model() const { return *model_; }
  const std::vector<size_t>& order() const { return order_; }

  // Feature values of rel(tuple) in the evaluator's structure. A conditional
  // feature whose condition is never met takes the value 0.
  std::vector<double> features(Evaluator& ev, size_t rel, std::span<const int> tuple,
                               FeatureCache* cache = nullptr) const {
    const auto& node = nodes_[rel];
    std::vector<double> out;
    out.reserve(node.features.size());
    for (size_t i = 0; i < node.features.size(); ++i) {
      const auto& f = node.features[i];
      std::uint64_t key = 0;
      std::unordered_map<std::uint64_t, double>* table = nullptr;
      if (cache && f.dep_args.size() <= 3) {
        for (int a : f.dep_args) key = key * 1048583ULL + static_cast<std::uint64_t>(tuple[static_cast<size_t>(a)]);
        table = &cache->table(rel, i);
        if (auto it = table->find(key); it != table->end()) {
          out.push_back(it->second);
          continue;
        }
      }
      std::vector<int> env(f.joint.slot_count(), 0);
      std::copy(tuple.begin(), tuple.end(), env.begin());
      const double num = static_cast<double>(ev.count_node(f.joint, f.joint.root(), env, f.y_slots, f.y_sorts));
      double den = 1.0;
      for (int s : f.y_sorts) den *= static_cast<double>(ev.sort_size(s));
      if (f.conditional) {
        std::vector<int> env2(f.condition.slot_count(), 0);
        std::copy(tuple.begin(), tuple.end(), env2.begin());
        den = static_cast<double>(ev.count_node(f.condition, f.condition.root(), env2, f.y_slots, f.y_sorts));
      }
      const double v = den > 0 ? num / den : 0.0;
      if (table) table->emplace(key, v);
      out.push_back(v);
    }
    return out;
  }

  // Probability that rel(tuple) holds given its parents in the evaluator's structure.
  double atom_prob(Evaluator& ev, size_t rel, std::span<const int> tuple, FeatureCache* cache = nullptr) const {
    const auto& spec = model_->node(rel);
    const auto& node = nodes_[rel];
    if (spec.is_partition()) {
      int hit = -1;
      for (size_t i = 0; i < node.cases.size(); ++i) {
        std::vector<int> env(node.cases[i].slot_count(), 0);
        std::copy(tuple.begin(), tuple.end(), env.begin());
        if (ev.eval(node.cases[i], env)) {
          if (hit >= 0)
            throw PartitionViolation("cases " + std::to_string(hit + 1) + " and " + std::to_string(i + 1) +
                                     " both hold for " + atom_name(model_->signature(), rel, tuple));
          hit = static_cast<int>(i);
        }
      }
      if (hit < 0) throw PartitionViolation("no case holds for " + atom_name(model_->signature(), rel, tuple));
      return spec.cases[static_cast<size_t>(hit)].mu;
    }
    auto x = features(ev, rel, tuple, cache);
    return spec.function.eval(x);
  }

 private:
  const Model* model_;
  std::vector<size_t> order_;
  std::vector<CompiledNode> nodes_;
};

// Induced ground Bayesian network: one layer per relation in topological order.
class GroundNet {
 public:
  struct Layer {
    size_t rel;
    std::uint64_t count;
  };

  GroundNet(const Model& m, DomainSizes sizes) : model_(&m), sizes_(std::move(sizes)) {
    sizes_.check_covers(m.signature());
    m.check();
    for (size_t r : m.topological_order()) {
      std::uint64_t n = 1;
      for (const auto& s : m.signature().relation(r).sorts) n *= static_cast<std::uint64_t>(sizes_.at(s));
      layers_.push_back({r, n});
      total_ += n;
    }
  }

  const Model& model() const { return *model_; }
  const DomainSizes& sizes() const { return sizes_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::uint64_t atom_count() const { return total_; }

  // Materialized atom list in layer order.
  std::vector<GroundAtom> atoms() const {
    std::vector<GroundAtom> out;
    Structure shape(model_->signature_ptr(), sizes_);
    for (const auto& l : layers_)
      for (std::uint64_t i = 0; i < l.count; ++i) out.push_back({l.rel, shape.tuple_of(l.rel, i)});
    return out;
  }

 private:
  const Model* model_;
  DomainSizes sizes_;
  std::vector<Layer> layers_;
  std::uint64_t total_ = 0;
};

inline GroundNet ground(const Model& m, const DomainSizes& sizes) { return GroundNet(m, sizes); }

inline double atom_prob(const Model& m, const Structure& partial_world, const GroundAtom& atom) {
  CompiledModel cm(m);
  Evaluator ev(partial_world);
  return cm.atom_prob(ev, atom.rel, atom.args);
}

inline double world_log_prob(const CompiledModel& cm, const Structure& world) {
  Evaluator ev(world);
  FeatureCache cache;
  double total = 0.0;
  for (size_t r : cm.order()) {
    for (std::uint64_t i = 0; i < world.atom_count(r); ++i) {
      const auto tuple = world.tuple_of(r, i);
      const double p = cm.atom_prob(ev, r, tuple, &cache);
      const double q = world.holds_index(r, i) ? p : 1.0 - p;
      if (q <= 0.0) return -std::numeric_limits<double>::infinity();
      total += std::log(q);
    }
  }
  return total;
}

inline double world_log_prob(const Model& m, const Structure& world) {
  CompiledModel cm(m);
  return world_log_prob(cm, world);
}

// Visits every world with positive probability by depth-first search over
// atoms in layer order; `visit` receives the completed world and its probability.
inline void for_each_world(const Model& m, const DomainSizes& sizes,
                           const std::function<void(const Structure&, double)>& visit, size_t cap = default_cap()) {
  GroundNet net(m, sizes);
  if (net.atom_count() > cap)
    throw CapExceeded(std::to_string(net.atom_count()) + " ground atoms exceed the enumeration cap of " +
                      std::to_string(cap));
  CompiledModel cm(m);
  Structure world(m.signature_ptr(), sizes);
  std::vector<std::pair<size_t, std::vector<int>>> atoms;
  for (const auto& a : net.atoms()) atoms.emplace_back(a.rel, a.args);
  Evaluator ev(world);
  std::function<void(size_t, double)> dfs = [&](size_t k, double prob) {
    if (k == atoms.size()) {
      visit(world, prob);
      return;
    }
    ev.reset();
    const auto& [rel, tuple] = atoms[k];
    const double p = cm.atom_prob(ev, rel, tuple);
    for (int value = 1; value >= 0; --value) {
      const double q = value ? p : 1.0 - p;
      if (q <= 0.0) continue;
      world.set(rel, tuple, value == 1);
      dfs(k + 1, prob * q);
    }
    world.set(rel, tuple, false);
  };
  dfs(0, 1.0);
}

// All worlds with their probabilities (zero-probability worlds included).
inline std::vector<std::pair<Structure, double>> enumerate_worlds(const Model& m, const DomainSizes& sizes,
                                                                  size_t cap = default_cap()) {
  GroundNet net(m, sizes);
  if (net.atom_count() > cap)
    throw CapExceeded(std::to_string(net.atom_count()) + " ground atoms exceed the enumeration cap of " +
                      std::to_string(cap));
  std::vector<std::pair<Structure, double>> out;
  CompiledModel cm(m);
  const auto atoms = net.atoms();
  const std::uint64_t total = std::uint64_t{1} << atoms.size();
  out.reserve(total);
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    Structure w(m.signature_ptr(), sizes);
    for (size_t i = 0; i < atoms.size(); ++i) w.set(atoms[i].rel, atoms[i].args, (mask >> i) & 1U);
    const double lp = world_log_prob(cm, w);
    out.emplace_back(std::move(w), std::isinf(lp) ? 0.0 : std::exp(lp));
  }
  return out;
}

}  // namespace freqnet
