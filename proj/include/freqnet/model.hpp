#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "freqnet/errors.hpp"
#include "freqnet/formula.hpp"
#include "freqnet/functions.hpp"
#include "freqnet/signature.hpp"

namespace freqnet {

// Feature value ||phi | psi||_ys; psi defaults to true.
struct Feature {
  std::string name;
  Formula phi;
  Formula psi = Formula::top();
  std::vector<Variable> ys;

  bool conditional() const { return !psi.is_true(); }
};

struct PartitionCase {
  Formula chi;
  double mu = 0.0;
};

struct NodeSpec {
  enum class Kind { Partition, Functional };

  Kind kind = Kind::Partition;
  std::vector<Variable> args;  // the node's free variables x1..xk
  std::vector<PartitionCase> cases;
  std::vector<Feature> features;
  FunctionFamily function;
  std::set<std::string> declared_parents;

  static NodeSpec partition(std::vector<Variable> args, std::vector<PartitionCase> cases) {
    NodeSpec n;
    n.kind = Kind::Partition;
    n.args = std::move(args);
    n.cases = std::move(cases);
    return n;
  }

  static NodeSpec functional(std::vector<Variable> args, std::vector<Feature> features, FunctionFamily f) {
    NodeSpec n;
    n.kind = Kind::Functional;
    n.args = std::move(args);
    n.features = std::move(features);
    n.function = std::move(f);
    return n;
  }

  bool is_partition() const { return kind == Kind::Partition; }

  std::vector<Formula> formulas() const {
    std::vector<Formula> out;
    for (const auto& c : cases) out.push_back(c.chi);
    for (const auto& f : features) {
      out.push_back(f.phi);
      out.push_back(f.psi);
    }
    return out;
  }

  std::set<std::string> mentioned() const {
    std::set<std::string> out;
    for (const auto& f : formulas()) mentioned_relations(f, out);
    return out;
  }
};

// Default argument variables x1..xk for a relation.
inline std::vector<Variable> default_args(const RelationSymbol& rel) {
  std::vector<Variable> out;
  for (size_t i = 0; i < rel.sorts.size(); ++i) out.push_back({"x" + std::to_string(i + 1), rel.sorts[i]});
  return out;
}

// Lifted network: one node per relation symbol. Parents of a node are the
// relations its formulas mention together with any declared parents.
class Model {
 public:
  Model() = default;
  explicit Model(SignaturePtr sig) : sig_(std::move(sig)), nodes_(sig_->relations().size()) {
    for (size_t r = 0; r < nodes_.size(); ++r) {
      nodes_[r].args = default_args(sig_->relation(r));
      nodes_[r].cases = {{Formula::top(), 0.5}};
    }
  }

  const Signature& signature() const { return *sig_; }
  const SignaturePtr& signature_ptr() const { return sig_; }
  size_t size() const { return nodes_.size(); }

  const NodeSpec& node(size_t r) const { return nodes_.at(r); }
  const NodeSpec& node(const std::string& rel) const { return nodes_.at(sig_->relation_index(rel)); }
  NodeSpec& mutable_node(size_t r) { return nodes_.at(r); }
  void set_node(size_t r, NodeSpec spec) { nodes_.at(r) = std::move(spec); }
  void set_node(const std::string& rel, NodeSpec spec) { set_node(sig_->relation_index(rel), std::move(spec)); }

  std::vector<size_t> parents(size_t r) const {
    std::set<std::string> names = nodes_[r].mentioned();
    names.insert(nodes_[r].declared_parents.begin(), nodes_[r].declared_parents.end());
    std::vector<size_t> out;
    for (const auto& n : names) {
      auto idx = sig_->find_relation(n);
      if (idx) out.push_back(*idx);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  bool is_root(size_t r) const { return parents(r).empty(); }

  // Kahn's algorithm with smallest-index tie breaking; throws on a cycle.
  std::vector<size_t> topological_order() const {
    const size_t n = nodes_.size();
    std::vector<std::vector<size_t>> children(n);
    std::vector<size_t> indegree(n, 0);
    for (size_t r = 0; r < n; ++r)
      for (size_t p : parents(r)) {
        if (p == r) throw ModelError("node '" + sig_->relation(r).name + "' mentions its own relation");
        children[p].push_back(r);
        ++indegree[r];
      }
    std::set<size_t> ready;
    for (size_t r = 0; r < n; ++r)
      if (indegree[r] == 0) ready.insert(r);
    std::vector<size_t> order;
    while (!ready.empty()) {
      size_t r = *ready.begin();
      ready.erase(ready.begin());
      order.push_back(r);
      for (size_t c : children[r])
        if (--indegree[c] == 0) ready.insert(c);
    }
    if (order.size() != n) {
      std::string names;
      for (size_t r = 0; r < n; ++r)
        if (indegree[r] > 0) names += (names.empty() ? "" : ", ") + sig_->relation(r).name;
      throw ModelError("cycle in the dependency graph among: " + names);
    }
    return order;
  }

  // Strict ancestors of r.
  std::set<size_t> ancestors(size_t r) const {
    std::set<size_t> out;
    std::vector<size_t> stack = parents(r);
    while (!stack.empty()) {
      size_t p = stack.back();
      stack.pop_back();
      if (!out.insert(p).second) continue;
      for (size_t q : parents(p)) stack.push_back(q);
    }
    return out;
  }

  bool all_partition() const {
    return std::all_of(nodes_.begin(), nodes_.end(), [](const NodeSpec& n) { return n.is_partition(); });
  }

  // No quantifiers or frequency operators, and no feature binds variables.
  bool is_quantifier_free() const {
    for (const auto& n : nodes_) {
      for (const auto& f : n.formulas())
        if (has_quantifier(f)) return false;
      for (const auto& f : n.features)
        if (!f.ys.empty()) return false;
    }
    return true;
  }

  // Structural diagnostics; empty means the model is usable.
  std::vector<std::string> validate() const {
    std::vector<std::string> out;
    try {
      topological_order();
    } catch (const ModelError& e) {
      out.push_back(e.what());
    }
    for (size_t r = 0; r < nodes_.size(); ++r) {
      const auto& rel = sig_->relation(r);
      const auto& n = nodes_[r];
      const std::string where = "node '" + rel.name + "': ";
      for (const auto& p : n.declared_parents)
        if (!sig_->find_relation(p)) out.push_back(where + "unknown parent '" + p + "'");
      if (n.args.size() != rel.arity()) {
        out.push_back(where + "expects " + std::to_string(rel.arity()) + " argument variables");
        continue;
      }
      std::set<std::string> arg_names;
      for (size_t i = 0; i < n.args.size(); ++i) {
        if (n.args[i].sort != rel.sorts[i]) out.push_back(where + "argument variable sort mismatch");
        if (!arg_names.insert(n.args[i].name).second)
          out.push_back(where + "repeated argument variable '" + n.args[i].name + "'");
      }
      auto check_formula = [&](const Formula& f, const std::vector<Variable>& extra, const std::string& what) {
        try {
          check_sorts(f, *sig_);
        } catch (const ModelError& e) {
          out.push_back(where + what + ": " + e.what());
          return;
        }
        if (mentioned_relations(f).count(rel.name))
          out.push_back(where + what + " mentions the node's own relation");
        for (const auto& v : free_variables(f)) {
          bool ok = false;
          for (const auto& a : n.args) ok |= a == v;
          for (const auto& y : extra) ok |= y == v;
          if (!ok) out.push_back(where + what + " has free variable '" + v.name + "' outside the node's scope");
        }
      };
      if (n.is_partition()) {
        if (n.cases.empty()) out.push_back(where + "partition without cases");
        for (size_t i = 0; i < n.cases.size(); ++i) {
          check_formula(n.cases[i].chi, {}, "case " + std::to_string(i + 1));
          if (!(n.cases[i].mu >= 0.0 && n.cases[i].mu <= 1.0))
            out.push_back(where + "case " + std::to_string(i + 1) + " probability outside [0,1]");
        }
      } else {
        for (const auto& f : n.features) {
          check_formula(f.phi, f.ys, "feature " + f.name);
          check_formula(f.psi, f.ys, "feature " + f.name + " condition");
          if (has_frequency(f.phi) || has_frequency(f.psi))
            out.push_back(where + "feature " + f.name + " must be first-order (no frequency comparisons)");
        }
        if (n.function.arity() != n.features.size())
          out.push_back(where + "function takes " + std::to_string(n.function.arity()) + " inputs but " +
                        std::to_string(n.features.size()) + " features are given");
        for (const auto& d : n.function.diagnostics()) out.push_back(where + d);
      }
    }
    return out;
  }

  void check() const {
    auto diags = validate();
    if (!diags.empty()) throw ModelError(diags.front());
  }

  // (relation, parameter index) for every function parameter, in relation order.
  std::vector<std::pair<size_t, size_t>> parameter_slots() const {
    std::vector<std::pair<size_t, size_t>> out;
    for (size_t r = 0; r < nodes_.size(); ++r)
      if (!nodes_[r].is_partition())
        for (size_t i = 0; i < nodes_[r].function.params().size(); ++i) out.emplace_back(r, i);
    return out;
  }

 private:
  SignaturePtr sig_;
  std::vector<NodeSpec> nodes_;
};

// Rewrites an all-partition model so that every node is either a root or a
// deterministic child of roots only. Each case i of a non-root R gets a fresh
// root P_R_i with the case probability; R becomes the 0/1 partition on
// OR_i (chi_i & P_R_i) where chi_i has non-root relations inlined.
inline Model to_root_form(const Model& m) {
  if (!m.all_partition()) throw ModelError("root form requires every node to be a partition node");
  const auto& sig = m.signature();
  const auto order = m.topological_order();
  std::set<std::string> taken;
  for (const auto& r : sig.relations()) taken.insert(r.name);

  auto out_sig = std::make_shared<Signature>();
  for (const auto& s : sig.sorts()) out_sig->add_sort(s);
  for (const auto& r : sig.relations()) out_sig->add_relation(r.name, r.sorts);

  struct Fresh {
    std::string name;
    double mu;
  };
  std::map<size_t, std::vector<Fresh>> fresh;
  for (size_t r : order) {
    if (m.is_root(r)) continue;
    const auto& rel = sig.relation(r);
    for (size_t i = 0; i < m.node(r).cases.size(); ++i) {
      std::string name = "P_" + rel.name + "_" + std::to_string(i + 1);
      while (taken.count(name)) name += "_";
      taken.insert(name);
      out_sig->add_relation(name, rel.sorts);
      fresh[r].push_back({name, m.node(r).cases[i].mu});
    }
  }

  Model out(out_sig);
  std::map<size_t, Formula> definition;  // non-root R in terms of roots only
  for (size_t r : order) {
    NodeSpec spec = m.node(r);
    if (m.is_root(r)) {
      spec.declared_parents.clear();
      out.set_node(r, spec);
      continue;
    }
    std::vector<Formula> disjuncts;
    for (size_t i = 0; i < spec.cases.size(); ++i) {
      Formula chi = spec.cases[i].chi;
      for (const auto& [q, def] : definition) chi = inline_relation(chi, sig.relation(q).name, m.node(q).args, def);
      std::vector<Term> terms;
      for (const auto& a : spec.args) terms.push_back(Term::var(a));
      disjuncts.push_back(Formula::conj(chi, Formula::atom(fresh[r][i].name, terms)));
    }
    Formula def = Formula::disj_all(disjuncts);
    definition[r] = def;
    out.set_node(r, NodeSpec::partition(spec.args, {{def, 1.0}, {Formula::negation(def), 0.0}}));
    for (size_t i = 0; i < fresh[r].size(); ++i) {
      size_t p = out_sig->relation_index(fresh[r][i].name);
      out.set_node(p, NodeSpec::partition(default_args(out_sig->relation(p)), {{Formula::top(), fresh[r][i].mu}}));
    }
  }
  return out;
}

}  // namespace freqnet
