#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "freqnet/diagram.hpp"
#include "freqnet/errors.hpp"
#include "freqnet/formula.hpp"
#include "freqnet/ground.hpp"
#include "freqnet/inference.hpp"
#include "freqnet/model.hpp"
#include "freqnet/syntax.hpp"

namespace freqnet {

inline constexpr size_t kDiagramCap = 20;
inline constexpr double kCriticalTolerance = 1e-9;

// Canonical equality pattern of an argument list: class index of each
// position, numbered by first occurrence.
inline std::vector<int> equality_pattern(std::span<const int> args) {
  std::vector<int> out;
  std::vector<int> seen;
  for (int a : args) {
    auto it = std::find(seen.begin(), seen.end(), a);
    if (it == seen.end()) {
      out.push_back(static_cast<int>(seen.size()));
      seen.push_back(a);
    } else {
      out.push_back(static_cast<int>(it - seen.begin()));
    }
  }
  return out;
}

// Equality patterns available to a relation: merged positions share a sort.
inline std::vector<std::vector<int>> argument_patterns(const RelationSymbol& rel) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  std::function<void(size_t, int)> rec = [&](size_t i, int classes) {
    if (i == rel.arity()) {
      out.push_back(cur);
      return;
    }
    for (int c = 0; c <= classes; ++c) {
      if (c < classes) {
        size_t first = static_cast<size_t>(std::find(cur.begin(), cur.end(), c) - cur.begin());
        if (rel.sorts[first] != rel.sorts[i]) continue;
      }
      cur.push_back(c);
      rec(i + 1, std::max(classes, c + 1));
      cur.pop_back();
    }
  };
  rec(0, 0);
  // Put the all-distinct pattern first.
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return *std::max_element(a.begin(), a.end()) > *std::max_element(b.begin(), b.end());
  });
  if (rel.arity() == 0) out = {{}};
  return out;
}

// Conditional probability table of one relation for one equality pattern of
// its arguments. Context atoms range over the pattern's class variables; row
// `mask` has bit i set when context[i] holds.
struct QfTable {
  std::vector<int> pattern;
  std::vector<Variable> vars;
  std::vector<SymAtom> context;
  std::vector<double> q;
  std::vector<char> defined;  // rows reachable with positive probability
  std::vector<std::vector<double>> inputs;  // functional nodes: limiting feature values per row

  double at(std::uint64_t mask) const { return q.at(mask); }
};

// Quantifier-free lifted Bayesian network in table form.
class QfLbn {
 public:
  QfLbn() = default;
  QfLbn(SignaturePtr sig, std::vector<size_t> order) : sig_(std::move(sig)), order_(std::move(order)) {
    tables_.resize(sig_->relations().size());
    rank_.assign(sig_->relations().size(), 0);
    for (size_t i = 0; i < order_.size(); ++i) rank_[order_[i]] = i;
  }

  const Signature& signature() const { return *sig_; }
  const SignaturePtr& signature_ptr() const { return sig_; }
  const std::vector<size_t>& order() const { return order_; }
  size_t rank(size_t rel) const { return rank_.at(rel); }

  void set_table(size_t rel, QfTable t) { tables_.at(rel)[t.pattern] = std::move(t); }
  bool has_table(size_t rel, const std::vector<int>& pattern) const { return tables_.at(rel).count(pattern) > 0; }
  const QfTable& table(size_t rel, const std::vector<int>& pattern) const {
    auto it = tables_.at(rel).find(pattern);
    if (it == tables_.at(rel).end())
      throw ModelError("relation '" + sig_->relation(rel).name + "' has not been compiled yet");
    return it->second;
  }
  const std::map<std::vector<int>, QfTable>& tables(size_t rel) const { return tables_.at(rel); }

  // The relation's value when it holds everywhere (true) or nowhere (false)
  // with probability one.
  std::optional<bool> constant(size_t rel) const {
    std::optional<bool> out;
    if (tables_.at(rel).empty()) return out;
    bool all_one = true, all_zero = true, any = false;
    for (const auto& [pat, t] : tables_.at(rel))
      for (size_t i = 0; i < t.q.size(); ++i) {
        if (!t.defined[i]) continue;
        any = true;
        all_one &= t.q[i] == 1.0;
        all_zero &= t.q[i] == 0.0;
      }
    if (any && all_one) out = true;
    if (any && all_zero) out = false;
    return out;
  }

 private:
  SignaturePtr sig_;
  std::vector<size_t> order_;
  std::vector<size_t> rank_;
  std::vector<std::map<std::vector<int>, QfTable>> tables_;
};

// Finite piece of the limit structure: the ground atoms over a few distinct
// elements needed to evaluate some atoms, closed under table contexts.
class LocalNet {
 public:
  LocalNet(const QfLbn& qf, std::vector<Variable> vars, const std::vector<SymAtom>& seed, size_t cap = kDiagramCap)
      : qf_(&qf), vars_(std::move(vars)) {
    std::set<std::pair<size_t, SymAtom>> found;
    std::vector<SymAtom> work = seed;
    while (!work.empty()) {
      SymAtom a = work.back();
      work.pop_back();
      if (!found.insert({qf.rank(a.rel), a}).second) continue;
      if (found.size() > cap)
        throw CapExceeded("more than " + std::to_string(cap) + " atoms in a local diagram");
      const auto& t = qf.table(a.rel, equality_pattern(a.args));
      const auto cls = class_vars(a.args);
      for (const auto& c : t.context) work.push_back(map_atom(c, cls));
    }
    for (const auto& [rank, a] : found) atoms_.push_back(a);
    for (size_t i = 0; i < atoms_.size(); ++i) index_[atoms_[i]] = static_cast<int>(i);
    for (const auto& a : atoms_) {
      Entry e;
      e.table = &qf.table(a.rel, equality_pattern(a.args));
      const auto cls = class_vars(a.args);
      for (const auto& c : e.table->context) e.parents.push_back(index_.at(map_atom(c, cls)));
      entries_.push_back(std::move(e));
    }
  }

  const std::vector<Variable>& vars() const { return vars_; }
  const std::vector<SymAtom>& atoms() const { return atoms_; }
  int index_of(const SymAtom& a) const {
    auto it = index_.find(a);
    return it == index_.end() ? -1 : it->second;
  }

  double cond_prob(size_t i, const std::vector<char>& values) const {
    const auto& e = entries_[i];
    std::uint64_t mask = 0;
    for (size_t k = 0; k < e.parents.size(); ++k)
      if (values[static_cast<size_t>(e.parents[k])]) mask |= std::uint64_t{1} << k;
    return e.table->q[mask];
  }

  // Visits every assignment of positive probability that agrees with `fixed`
  // (-1 free, 0 false, 1 true); fixed atoms are conditioned on by weight.
  void enumerate(const std::function<void(const std::vector<char>&, double)>& visit,
                 const std::vector<int>& fixed = {}) const {
    std::vector<char> values(atoms_.size(), 0);
    std::function<void(size_t, double)> dfs = [&](size_t k, double prob) {
      if (k == atoms_.size()) {
        visit(values, prob);
        return;
      }
      const double p = cond_prob(k, values);
      for (int v = 1; v >= 0; --v) {
        if (!fixed.empty() && fixed[k] >= 0 && fixed[k] != v) continue;
        const double w = v ? p : 1.0 - p;
        if (w <= 0.0) continue;
        values[k] = static_cast<char>(v);
        dfs(k + 1, prob * w);
      }
      values[k] = 0;
    };
    dfs(0, 1.0);
  }

 private:
  struct Entry {
    const QfTable* table = nullptr;
    std::vector<int> parents;
  };

  static std::vector<int> class_vars(const std::vector<int>& args) {
    std::vector<int> out;
    for (int a : args)
      if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
    return out;
  }
  static SymAtom map_atom(const SymAtom& c, const std::vector<int>& cls) {
    SymAtom out{c.rel, {}};
    for (int v : c.args) out.args.push_back(cls.at(static_cast<size_t>(v)));
    return out;
  }

  const QfLbn* qf_;
  std::vector<Variable> vars_;
  std::vector<SymAtom> atoms_;
  std::map<SymAtom, int> index_;
  std::vector<Entry> entries_;
};

namespace detail {

// Quantifier-free formula lowered onto the atoms of a LocalNet.
class NetExpr {
 public:
  NetExpr(const Formula& f, const Signature& sig, const std::vector<Variable>& vars, const LocalNet& net) {
    root_ = build(f, sig, vars, net);
  }
  bool eval(const std::vector<char>& values) const { return eval(root_, values); }

 private:
  struct Node {
    FormulaKind kind;
    int a = -1, b = -1, atom = -1;
  };

  int build(const Formula& f, const Signature& sig, const std::vector<Variable>& vars, const LocalNet& net) {
    Node n{f.kind()};
    switch (f.kind()) {
      case FormulaKind::True:
      case FormulaKind::False: break;
      case FormulaKind::Atom: {
        SymAtom a{sig.relation_index(f.relation()), {}};
        for (const auto& t : f.terms()) {
          if (!t.is_var()) throw ModelError("constants are not supported in limit computations");
          int idx = -1;
          for (size_t i = 0; i < vars.size(); ++i)
            if (vars[i].name == t.name) idx = static_cast<int>(i);
          if (idx < 0) throw ModelError("variable '" + t.name + "' is not in the diagram scope");
          a.args.push_back(idx);
        }
        n.atom = net.index_of(a);
        if (n.atom < 0) throw ModelError("atom " + print_formula(f) + " missing from the local diagram");
        break;
      }
      case FormulaKind::Not: n.a = build(f.child(0), sig, vars, net); break;
      case FormulaKind::And:
      case FormulaKind::Or:
      case FormulaKind::Implies:
        n.a = build(f.child(0), sig, vars, net);
        n.b = build(f.child(1), sig, vars, net);
        break;
      default: throw ModelError("expected a quantifier-free formula, got " + print_formula(f));
    }
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size()) - 1;
  }

  bool eval(int i, const std::vector<char>& v) const {
    const Node& n = nodes_[static_cast<size_t>(i)];
    switch (n.kind) {
      case FormulaKind::True: return true;
      case FormulaKind::False: return false;
      case FormulaKind::Atom: return v[static_cast<size_t>(n.atom)] != 0;
      case FormulaKind::Not: return !eval(n.a, v);
      case FormulaKind::And: return eval(n.a, v) && eval(n.b, v);
      case FormulaKind::Or: return eval(n.a, v) || eval(n.b, v);
      default: return !eval(n.a, v) || eval(n.b, v);
    }
  }

  std::vector<Node> nodes_;
  int root_ = -1;
};

// Atoms of a quantifier-free formula as SymAtoms over `vars`.
inline void formula_atoms(const Formula& f, const Signature& sig, const std::vector<Variable>& vars,
                          std::vector<SymAtom>& out) {
  if (f.kind() == FormulaKind::Atom) {
    SymAtom a{sig.relation_index(f.relation()), {}};
    for (const auto& t : f.terms()) {
      if (!t.is_var()) throw ModelError("constants are not supported in limit computations");
      int idx = -1;
      for (size_t i = 0; i < vars.size(); ++i)
        if (vars[i].name == t.name) idx = static_cast<int>(i);
      if (idx < 0) throw ModelError("variable '" + t.name + "' is not in the diagram scope");
      a.args.push_back(idx);
    }
    out.push_back(std::move(a));
    return;
  }
  for (const auto& c : f.children()) formula_atoms(c, sig, vars, out);
}

inline Formula sym_atom_formula(const Signature& sig, const std::vector<Variable>& vars, const SymAtom& a) {
  std::vector<Term> terms;
  for (int v : a.args) terms.push_back(Term::var(vars.at(static_cast<size_t>(v))));
  return Formula::atom(sig.relation(a.rel).name, std::move(terms));
}

// Truth value of a boolean function row: 0, 1, or 2 for "don't care".
using TruthTable = std::vector<char>;

// Drops inputs the function does not depend on (don't-cares may be resolved
// either way). Returns the kept input indices and the reduced table.
inline std::pair<std::vector<size_t>, TruthTable> reduce_inputs(size_t k, TruthTable t) {
  std::vector<size_t> kept(k);
  for (size_t i = 0; i < k; ++i) kept[i] = i;
  for (size_t j = k; j-- > 0;) {
    const size_t bit = std::uint64_t{1} << j;
    bool irrelevant = true;
    for (size_t m = 0; m < t.size() && irrelevant; ++m) {
      if (m & bit) continue;
      const char a = t[m], b = t[m | bit];
      if (a != 2 && b != 2 && a != b) irrelevant = false;
    }
    if (!irrelevant) continue;
    TruthTable next(t.size() / 2);
    for (size_t m = 0; m < next.size(); ++m) {
      const size_t lo = m & (bit - 1), hi = (m & ~(bit - 1)) << 1;
      const char a = t[hi | lo], b = t[hi | lo | bit];
      next[m] = a != 2 ? a : b;
    }
    t = std::move(next);
    kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(j));
  }
  return {kept, t};
}

// Small two-level minimization: prime implicants by iterated merging, then a
// greedy cover of the true rows.
inline std::vector<std::pair<std::uint64_t, std::uint64_t>> minimize(size_t k, const TruthTable& t) {
  using Imp = std::pair<std::uint64_t, std::uint64_t>;  // (value, care mask)
  const std::uint64_t full = k == 64 ? ~std::uint64_t{0} : (std::uint64_t{1} << k) - 1;
  std::vector<std::uint64_t> ones;
  for (std::uint64_t m = 0; m < t.size(); ++m)
    if (t[m] == 1) ones.push_back(m);
  if (ones.empty()) return {};
  if (k > 10) {
    std::vector<Imp> out;
    for (auto m : ones) out.push_back({m, full});
    return out;
  }
  std::set<Imp> level;
  for (std::uint64_t m = 0; m < t.size(); ++m)
    if (t[m] != 0) level.insert({m, full});
  std::set<Imp> primes;
  while (!level.empty()) {
    std::set<Imp> next;
    std::set<Imp> merged;
    std::vector<Imp> items(level.begin(), level.end());
    for (size_t i = 0; i < items.size(); ++i)
      for (size_t j = i + 1; j < items.size(); ++j) {
        if (items[i].second != items[j].second) continue;
        const std::uint64_t diff = items[i].first ^ items[j].first;
        if (std::popcount(diff) != 1) continue;
        next.insert({items[i].first & ~diff, items[i].second & ~diff});
        merged.insert(items[i]);
        merged.insert(items[j]);
      }
    for (const auto& it : items)
      if (!merged.count(it)) primes.insert(it);
    level = std::move(next);
  }
  std::vector<Imp> out;
  std::set<std::uint64_t> uncovered(ones.begin(), ones.end());
  while (!uncovered.empty()) {
    const Imp* best = nullptr;
    size_t best_count = 0;
    for (const auto& p : primes) {
      size_t c = 0;
      for (auto m : uncovered)
        if ((m & p.second) == p.first) ++c;
      if (c > best_count || (c == best_count && best && std::popcount(p.second) < std::popcount(best->second))) {
        best = &p;
        best_count = c;
      }
    }
    out.push_back(*best);
    for (auto it = uncovered.begin(); it != uncovered.end();)
      it = (*it & best->second) == best->first ? uncovered.erase(it) : std::next(it);
  }
  return out;
}

// Formula for a boolean function of the given atoms.
inline Formula truth_table_formula(const Signature& sig, const std::vector<Variable>& vars,
                                   const std::vector<SymAtom>& atoms, const TruthTable& table) {
  auto [kept, reduced] = reduce_inputs(atoms.size(), table);
  auto imps = minimize(kept.size(), reduced);
  std::vector<Formula> terms;
  for (const auto& [value, care] : imps) {
    std::vector<Formula> lits;
    for (size_t i = 0; i < kept.size(); ++i) {
      if (!((care >> i) & 1U)) continue;
      Formula a = sym_atom_formula(sig, vars, atoms[kept[i]]);
      lits.push_back(((value >> i) & 1U) ? a : Formula::negation(a));
    }
    terms.push_back(Formula::conj_all(lits));
  }
  return Formula::disj_all(terms);
}

}  // namespace detail

namespace detail {

inline Formula with_children(const Formula& f, const std::vector<Formula>& k) {
  switch (f.kind()) {
    case FormulaKind::Not: return Formula::negation(k[0]);
    case FormulaKind::And: return Formula::conj(k[0], k[1]);
    case FormulaKind::Or: return Formula::disj(k[0], k[1]);
    case FormulaKind::Implies: return Formula::implies(k[0], k[1]);
    case FormulaKind::Forall: return Formula::forall(f.bound(), k[0]);
    case FormulaKind::Exists: return Formula::exists(f.bound(), k[0]);
    case FormulaKind::FreqCmp: return Formula::freq_cmp(f.side(), f.offset(), k[0], k[1], k[2], k[3], f.freq_vars());
    default: return f;
  }
}

inline std::uint64_t row_of(const std::vector<char>& v) {
  std::uint64_t m = 0;
  for (size_t i = 0; i < v.size(); ++i)
    if (v[i]) m |= std::uint64_t{1} << i;
  return m;
}

inline std::set<std::string> names_of(const std::vector<Variable>& vs) {
  std::set<std::string> out;
  for (const auto& v : vs) out.insert(v.name);
  return out;
}

}  // namespace detail

// Quantifier elimination and frequency limits relative to a partially
// compiled network. Formulas may only mention relations that already have
// tables; the free variables in scope always denote pairwise distinct elements.
class LimitEngine {
 public:
  explicit LimitEngine(const QfLbn& qf, size_t cap = kDiagramCap) : qf_(&qf), cap_(cap) {}

  // Replaces atoms of relations that are almost surely constant.
  Formula fold_constants(const Formula& f) const {
    if (f.kind() == FormulaKind::Atom) {
      for (const auto& t : f.terms())
        if (!t.is_var()) throw ModelError("constants are not supported in limit computations: " + print_formula(f));
      auto c = qf_->constant(qf_->signature().relation_index(f.relation()));
      return c ? Formula::truth(*c) : f;
    }
    if (f.children().empty()) return f;
    std::vector<Formula> kids;
    for (const auto& c : f.children()) kids.push_back(fold_constants(c));
    return detail::with_children(f, kids);
  }

  // Quantifier-free formula almost surely equivalent to `f` on tuples of
  // distinct elements.
  Formula qe(const Formula& f, const std::vector<Variable>& scope) const {
    switch (f.kind()) {
      case FormulaKind::True:
      case FormulaKind::False: return f;
      case FormulaKind::Atom: return fold_constants(f);
      case FormulaKind::Not:
      case FormulaKind::And:
      case FormulaKind::Or:
      case FormulaKind::Implies: {
        std::vector<Formula> kids;
        for (const auto& c : f.children()) kids.push_back(qe(c, scope));
        return simplify(detail::with_children(f, kids));
      }
      case FormulaKind::Exists: return exists(f.bound(), f.child(0), scope);
      case FormulaKind::Forall:
        return simplify(Formula::negation(exists(f.bound(), Formula::negation(f.child(0)), scope)));
      case FormulaKind::FreqCmp: return freq_cmp(f, scope);
    }
    return f;
  }

  // Per-diagram limits of ||chi||_ys over the scope atoms chi's closure touches.
  struct LimitTable {
    std::vector<SymAtom> context;  // atoms over the scope variables only
    std::vector<double> mass;      // probability of each context row
    std::vector<double> hit;       // probability of row and chi
  };

  LimitTable limit_table(const Formula& chi_qf, const std::vector<Variable>& scope,
                         const std::vector<Variable>& ys) const {
    std::vector<Variable> vars = scope;
    vars.insert(vars.end(), ys.begin(), ys.end());
    std::vector<SymAtom> seed;
    detail::formula_atoms(chi_qf, qf_->signature(), vars, seed);
    LocalNet net(*qf_, vars, seed, cap_);
    detail::NetExpr expr(chi_qf, qf_->signature(), vars, net);
    LimitTable out;
    std::vector<int> ctx_index;
    for (size_t i = 0; i < net.atoms().size(); ++i) {
      bool inside = true;
      for (int a : net.atoms()[i].args) inside &= static_cast<size_t>(a) < scope.size();
      if (inside) {
        out.context.push_back(net.atoms()[i]);
        ctx_index.push_back(static_cast<int>(i));
      }
    }
    out.mass.assign(std::size_t{1} << out.context.size(), 0.0);
    out.hit.assign(out.mass.size(), 0.0);
    net.enumerate([&](const std::vector<char>& v, double p) {
      std::uint64_t key = 0;
      for (size_t k = 0; k < ctx_index.size(); ++k)
        if (v[static_cast<size_t>(ctx_index[k])]) key |= std::uint64_t{1} << k;
      out.mass[key] += p;
      if (expr.eval(v)) out.hit[key] += p;
    });
    return out;
  }

 private:
  Formula exists(Variable v, Formula body, const std::vector<Variable>& scope) const {
    auto taken = detail::names_of(scope);
    if (taken.count(v.name)) {
      for (const auto& n : variable_names(body)) taken.insert(n);
      Variable renamed{fresh_name(v.name, taken), v.sort};
      body = substitute(body, v.name, Term::var(renamed));
      v = renamed;
    }
    std::vector<Formula> parts;
    for (const auto& z : scope)
      if (z.sort == v.sort) parts.push_back(qe(substitute(body, v.name, Term::var(z)), scope));
    std::vector<Variable> inner_scope = scope;
    inner_scope.push_back(v);
    parts.push_back(fresh_witness(qe(body, inner_scope), scope, v));
    return normalize(simplify(Formula::disj_all(parts)), scope);
  }

  // Rewrites a quantifier-free formula as a minimal cover of its true
  // diagrams, treating diagrams of probability zero as don't-cares.
  Formula normalize(const Formula& f, const std::vector<Variable>& scope) const {
    if (f.is_true() || f.is_false()) return f;
    std::vector<SymAtom> seed;
    detail::formula_atoms(f, qf_->signature(), scope, seed);
    try {
      LocalNet net(*qf_, scope, seed, std::min<size_t>(cap_, 12));
      detail::NetExpr expr(f, qf_->signature(), scope, net);
      detail::TruthTable table(std::size_t{1} << net.atoms().size(), 2);
      net.enumerate([&](const std::vector<char>& v, double) { table[detail::row_of(v)] = expr.eval(v) ? 1 : 0; });
      return detail::truth_table_formula(qf_->signature(), scope, net.atoms(), table);
    } catch (const CapExceeded&) {
      return f;
    }
  }

  // Diagrams of the scope that admit a positive-probability extension by a
  // new element satisfying `body`.
  Formula fresh_witness(const Formula& body, const std::vector<Variable>& scope, const Variable& v) const {
    if (body.is_true() || body.is_false()) return body;
    std::vector<Variable> vars = scope;
    vars.push_back(v);
    std::vector<SymAtom> seed;
    detail::formula_atoms(body, qf_->signature(), vars, seed);
    LocalNet net(*qf_, vars, seed, cap_);
    detail::NetExpr expr(body, qf_->signature(), vars, net);
    std::vector<SymAtom> ctx;
    std::vector<size_t> ctx_index;
    for (size_t i = 0; i < net.atoms().size(); ++i) {
      const auto& args = net.atoms()[i].args;
      if (std::find(args.begin(), args.end(), static_cast<int>(scope.size())) == args.end()) {
        ctx.push_back(net.atoms()[i]);
        ctx_index.push_back(i);
      }
    }
    detail::TruthTable table(std::size_t{1} << ctx.size(), 2);
    net.enumerate([&](const std::vector<char>& val, double) {
      std::uint64_t key = 0;
      for (size_t k = 0; k < ctx_index.size(); ++k)
        if (val[ctx_index[k]]) key |= std::uint64_t{1} << k;
      if (table[key] == 2) table[key] = 0;
      if (expr.eval(val)) table[key] = 1;
    });
    return detail::truth_table_formula(qf_->signature(), scope, ctx, table);
  }

  Formula freq_cmp(const Formula& f, const std::vector<Variable>& scope) const {
    // Bound variables must not collide with the scope.
    auto taken = detail::names_of(scope);
    for (const auto& c : f.children())
      for (const auto& n : variable_names(c)) taken.insert(n);
    std::vector<Variable> ys;
    Substitution ren;
    for (const auto& y : f.freq_vars()) {
      if (detail::names_of(scope).count(y.name)) {
        Variable r{fresh_name(y.name, taken), y.sort};
        taken.insert(r.name);
        ren[y.name] = Term::var(r);
        ys.push_back(r);
      } else {
        ys.push_back(y);
      }
    }
    std::vector<Variable> ext = scope;
    ext.insert(ext.end(), ys.begin(), ys.end());
    std::vector<Formula> k;
    for (const auto& c : f.children()) k.push_back(qe(ren.empty() ? c : substitute(c, ren), ext));
    const Formula& phi = k[0];
    const Formula& psi = k[1];
    const Formula& theta = k[2];
    const Formula& tau = k[3];
    if (psi.is_false() || tau.is_false()) return Formula::bottom();
    const double r = f.offset().value();

    auto left = limit_table(simplify(Formula::conj(phi, psi)), scope, ys);
    auto left_den = limit_table(psi, scope, ys);
    auto right = limit_table(simplify(Formula::conj(theta, tau)), scope, ys);
    auto right_den = limit_table(tau, scope, ys);
    // Common context: union of the four tables' scope atoms.
    std::vector<SymAtom> ctx;
    for (const auto* t : {&left, &left_den, &right, &right_den})
      for (const auto& a : t->context)
        if (std::find(ctx.begin(), ctx.end(), a) == ctx.end()) ctx.push_back(a);
    LocalNet net(*qf_, scope, ctx, cap_);
    ctx = net.atoms();
    auto project = [&](const LimitTable& t, const std::vector<char>& v) {
      std::uint64_t key = 0;
      for (size_t i = 0; i < t.context.size(); ++i)
        if (v[static_cast<size_t>(net.index_of(t.context[i]))]) key |= std::uint64_t{1} << i;
      return key;
    };
    detail::TruthTable table(std::size_t{1} << ctx.size(), 2);
    net.enumerate([&](const std::vector<char>& v, double) {
      auto ratio = [&](const LimitTable& t) { return t.hit[project(t, v)] / t.mass[project(t, v)]; };
      const double num_a = ratio(left), den_a = ratio(left_den);
      const double num_b = ratio(right), den_b = ratio(right_den);
      std::uint64_t key = 0;
      for (size_t i = 0; i < ctx.size(); ++i)
        if (v[i]) key |= std::uint64_t{1} << i;
      if (ys.empty()) {
        // No bound tuple: the comparison is decided exactly by the diagram.
        if (den_a == 0.0 || den_b == 0.0) {
          table[key] = 0;
          return;
        }
        const double d = f.side() == OffsetSide::Right ? num_a - num_b - r : r + num_a - num_b;
        table[key] = d >= -1e-12 ? 1 : 0;
        return;
      }
      if (den_a <= kCriticalTolerance || den_b <= kCriticalTolerance)
        throw CriticalThreshold("the condition of a frequency term has limit 0 in " + print_formula(f));
      const double a = num_a / den_a, b = num_b / den_b;
      const double d = f.side() == OffsetSide::Right ? a - b - r : r + a - b;
      if (std::abs(d) <= kCriticalTolerance)
        throw CriticalThreshold("critical comparison " + print_formula(f) + ": both sides tend to " +
                                format_double(f.side() == OffsetSide::Right ? a : b));
      table[key] = d > 0 ? 1 : 0;
    });
    return detail::truth_table_formula(qf_->signature(), scope, ctx, table);
  }

  const QfLbn* qf_;
  size_t cap_;
};

namespace detail {

// Builds a table, dropping context atoms the probabilities do not depend on.
inline QfTable make_table(std::vector<int> pattern, std::vector<Variable> vars, std::vector<SymAtom> ctx,
                          std::vector<double> q, std::vector<char> defined,
                          std::vector<std::vector<double>> inputs = {}) {
  for (size_t j = ctx.size(); j-- > 0;) {
    const std::uint64_t bit = std::uint64_t{1} << j;
    bool irrelevant = true;
    for (std::uint64_t m = 0; m < q.size() && irrelevant; ++m) {
      if (m & bit) continue;
      if (defined[m] && defined[m | bit] &&
          (std::abs(q[m] - q[m | bit]) > 1e-12 || (!inputs.empty() && inputs[m] != inputs[m | bit])))
        irrelevant = false;
    }
    if (!irrelevant) continue;
    std::vector<double> nq(q.size() / 2);
    std::vector<char> nd(q.size() / 2);
    std::vector<std::vector<double>> ni(inputs.empty() ? 0 : q.size() / 2);
    for (std::uint64_t m = 0; m < nq.size(); ++m) {
      const std::uint64_t lo = m & (bit - 1), hi = (m & ~(bit - 1)) << 1;
      const std::uint64_t a = hi | lo, b = hi | lo | bit;
      nd[m] = defined[a] || defined[b];
      nq[m] = defined[a] ? q[a] : defined[b] ? q[b] : 0.5;
      if (!ni.empty()) ni[m] = defined[a] ? inputs[a] : inputs[b];
    }
    q = std::move(nq);
    defined = std::move(nd);
    inputs = std::move(ni);
    ctx.erase(ctx.begin() + static_cast<std::ptrdiff_t>(j));
  }
  return {std::move(pattern), std::move(vars), std::move(ctx), std::move(q), std::move(defined), std::move(inputs)};
}

inline std::string describe_row(const Signature& sig, const std::vector<Variable>& vars,
                                const std::vector<SymAtom>& atoms, const std::vector<char>& v) {
  AtomicDiagram d{vars, atoms, std::vector<bool>(v.begin(), v.end())};
  return print_formula(d.to_formula(sig));
}

}  // namespace detail

struct CompileOptions {
  bool force = false;  // compile functional nodes whose function is not interior-preserving
  size_t cap = kDiagramCap;
};

// Asymptotic limit of a model as a quantifier-free network. Relations are
// processed in topological order; each node formula is reduced to a
// quantifier-free one and evaluated on the diagrams of its arguments.
inline QfLbn compile_limit(const Model& m, const CompileOptions& opt = {}) {
  m.check();
  const auto& sig = m.signature();
  if (!opt.force)
    for (size_t r = 0; r < m.size(); ++r) {
      const auto& n = m.node(r);
      if (!n.is_partition() && !n.function.interior_preserving())
        throw ModelError("node '" + sig.relation(r).name + "': function " + family_name(n.function.kind()) +
                         " maps interior inputs to 0 or 1; no limit guarantee (use force to compile anyway)");
    }
  QfLbn qf(m.signature_ptr(), m.topological_order());
  LimitEngine engine(qf, opt.cap);
  for (size_t r : qf.order()) {
    const auto& rel = sig.relation(r);
    const auto& spec = m.node(r);
    std::vector<QfTable> tables;
    for (const auto& pattern : argument_patterns(rel)) {
      std::vector<Variable> cvars;
      Substitution sub;
      for (size_t j = 0; j < pattern.size(); ++j) {
        const size_t c = static_cast<size_t>(pattern[j]);
        if (c == cvars.size()) {
          cvars.push_back(spec.args[j]);
        } else {
          sub[spec.args[j].name] = Term::var(cvars[c]);
        }
      }
      auto prep = [&](const Formula& f) { return engine.fold_constants(sub.empty() ? f : substitute(f, sub)); };

      if (spec.is_partition()) {
        std::vector<Formula> chis;
        std::vector<SymAtom> seed;
        for (const auto& c : spec.cases) {
          chis.push_back(engine.qe(prep(c.chi), cvars));
          detail::formula_atoms(chis.back(), sig, cvars, seed);
        }
        LocalNet net(qf, cvars, seed, opt.cap);
        std::vector<detail::NetExpr> exprs;
        for (const auto& c : chis) exprs.emplace_back(c, sig, cvars, net);
        std::vector<double> q(std::size_t{1} << net.atoms().size(), 0.5);
        std::vector<char> defined(q.size(), 0);
        net.enumerate([&](const std::vector<char>& v, double) {
          int hit = -1;
          for (size_t i = 0; i < exprs.size(); ++i)
            if (exprs[i].eval(v)) {
              if (hit >= 0)
                throw PartitionViolation("node '" + rel.name + "': cases " + std::to_string(hit + 1) + " and " +
                                         std::to_string(i + 1) + " both hold in the limit on " +
                                         detail::describe_row(sig, cvars, net.atoms(), v));
              hit = static_cast<int>(i);
            }
          if (hit < 0)
            throw PartitionViolation("node '" + rel.name + "': no case holds in the limit on " +
                                     detail::describe_row(sig, cvars, net.atoms(), v));
          const auto row = detail::row_of(v);
          q[row] = spec.cases[static_cast<size_t>(hit)].mu;
          defined[row] = 1;
        });
        tables.push_back(detail::make_table(pattern, cvars, net.atoms(), std::move(q), std::move(defined)));
        continue;
      }

      // Functional node: limit of every feature on each diagram of the arguments.
      struct FeatureLimit {
        LimitEngine::LimitTable joint, cond;
        bool conditional;
      };
      std::vector<FeatureLimit> limits;
      std::vector<SymAtom> seed;
      for (const auto& f : spec.features) {
        std::vector<Variable> scope = cvars;
        scope.insert(scope.end(), f.ys.begin(), f.ys.end());
        Formula joint = engine.qe(prep(Formula::conj(f.phi, f.psi)), scope);
        Formula cond = engine.qe(prep(f.psi), scope);
        limits.push_back({engine.limit_table(joint, cvars, f.ys), engine.limit_table(cond, cvars, f.ys),
                          f.conditional()});
        for (const auto* t : {&limits.back().joint, &limits.back().cond})
          seed.insert(seed.end(), t->context.begin(), t->context.end());
      }
      LocalNet net(qf, cvars, seed, opt.cap);
      std::vector<double> q(std::size_t{1} << net.atoms().size(), 0.5);
      std::vector<char> defined(q.size(), 0);
      std::vector<std::vector<double>> inputs(q.size(), std::vector<double>(limits.size(), 0.0));
      net.enumerate([&](const std::vector<char>& v, double) {
        auto value = [&](const LimitEngine::LimitTable& t) {
          std::uint64_t key = 0;
          for (size_t i = 0; i < t.context.size(); ++i)
            if (v[static_cast<size_t>(net.index_of(t.context[i]))]) key |= std::uint64_t{1} << i;
          return t.hit[key] / t.mass[key];
        };
        std::vector<double> x;
        for (const auto& l : limits) {
          const double joint = value(l.joint);
          const double cond = l.conditional ? value(l.cond) : 1.0;
          x.push_back(cond > 0.0 ? std::clamp(joint / cond, 0.0, 1.0) : 0.0);
        }
        const auto row = detail::row_of(v);
        q[row] = spec.function.eval(x);
        defined[row] = 1;
        inputs[row] = std::move(x);
      });
      tables.push_back(detail::make_table(pattern, cvars, net.atoms(), std::move(q), std::move(defined),
                                          std::move(inputs)));
    }
    for (auto& t : tables) qf.set_table(r, std::move(t));
  }
  return qf;
}

// Limit of a model whose nodes are all partitions; frequency comparisons are
// decided by their limiting frequencies and critical ones are refused.
inline QfLbn compile_threshold_limit(const Model& m, const CompileOptions& opt = {}) {
  if (!m.all_partition()) throw ModelError("threshold compilation expects every node to be a partition node");
  return compile_limit(m, opt);
}

// Public entry points on a compiled network.

inline Formula qe(const QfLbn& qf, const Formula& f, size_t cap = kDiagramCap) {
  check_sorts(f, qf.signature());
  if (has_constants(f)) throw ModelError("constants are not supported in quantifier elimination");
  return LimitEngine(qf, cap).qe(f, free_variables(f));
}

// Probability that the literals of `d` hold on distinct elements in the limit.
inline double diagram_prob(const QfLbn& qf, const AtomicDiagram& d, size_t cap = kDiagramCap) {
  LocalNet net(qf, d.vars, d.atoms, cap);
  std::vector<int> fixed(net.atoms().size(), -1);
  for (size_t i = 0; i < d.atoms.size(); ++i) {
    const int k = net.index_of(d.atoms[i]);
    if (fixed[static_cast<size_t>(k)] >= 0 && fixed[static_cast<size_t>(k)] != (d.values[i] ? 1 : 0)) return 0.0;
    fixed[static_cast<size_t>(k)] = d.values[i] ? 1 : 0;
  }
  double total = 0.0;
  net.enumerate([&](const std::vector<char>&, double p) { total += p; }, fixed);
  return total;
}

// Almost-sure limit of ||chi||_ys on elements whose diagram contains `context`.
inline double freq_limit(const QfLbn& qf, const Formula& chi, const AtomicDiagram& context,
                         const std::vector<Variable>& ys, size_t cap = kDiagramCap) {
  LimitEngine engine(qf, cap);
  std::vector<Variable> scope = context.vars;
  scope.insert(scope.end(), ys.begin(), ys.end());
  const Formula chi_qf = engine.qe(chi, scope);
  std::vector<SymAtom> seed = context.atoms;
  detail::formula_atoms(chi_qf, qf.signature(), scope, seed);
  LocalNet net(qf, scope, seed, cap);
  detail::NetExpr expr(chi_qf, qf.signature(), scope, net);
  std::vector<int> fixed(net.atoms().size(), -1);
  for (size_t i = 0; i < context.atoms.size(); ++i)
    fixed[static_cast<size_t>(net.index_of(context.atoms[i]))] = context.values[i] ? 1 : 0;
  double total = 0.0, hit = 0.0;
  net.enumerate(
      [&](const std::vector<char>& v, double p) {
        total += p;
        if (expr.eval(v)) hit += p;
      },
      fixed);
  if (total <= 0.0) throw ZeroProbabilityEvidence("the context diagram has limit probability zero");
  return hit / total;
}

// Limit probability of a query; distinct named elements stay distinct.
inline double limit_query(const QfLbn& qf, const Query& q, size_t cap = kDiagramCap) {
  const auto& sig = qf.signature();
  std::vector<Variable> vars;
  std::map<std::pair<std::string, int>, int> element_var;
  auto sym = [&](const GroundAtom& a) {
    const auto& rel = sig.relation(a.rel);
    if (a.args.size() != rel.arity()) throw ModelError("arity mismatch in query atom " + rel.name);
    SymAtom s{a.rel, {}};
    for (size_t i = 0; i < a.args.size(); ++i) {
      if (a.args[i] < 0) throw ModelError("negative element in query atom " + rel.name);
      auto key = std::make_pair(rel.sorts[i], a.args[i]);
      auto it = element_var.find(key);
      if (it == element_var.end()) {
        it = element_var.emplace(key, static_cast<int>(vars.size())).first;
        vars.push_back({"e" + std::to_string(vars.size()), rel.sorts[i]});
      }
      s.args.push_back(it->second);
    }
    return s;
  };
  std::vector<SymAtom> seed;
  std::vector<std::pair<SymAtom, bool>> evidence;
  for (const auto& e : q.evidence) {
    evidence.push_back({sym(e.atom), e.positive});
    seed.push_back(evidence.back().first);
  }
  const SymAtom target = sym(q.target.atom);
  seed.push_back(target);
  LocalNet net(qf, vars, seed, cap);
  std::vector<int> fixed(net.atoms().size(), -1);
  for (const auto& [a, pos] : evidence) {
    auto& slot = fixed[static_cast<size_t>(net.index_of(a))];
    if (slot >= 0 && slot != (pos ? 1 : 0)) throw ModelError("inconsistent evidence");
    slot = pos ? 1 : 0;
  }
  const size_t t = static_cast<size_t>(net.index_of(target));
  double mass = 0.0, hit = 0.0;
  net.enumerate(
      [&](const std::vector<char>& v, double p) {
        mass += p;
        if ((v[t] != 0) == q.target.positive) hit += p;
      },
      fixed);
  if (mass <= 0.0) throw ZeroProbabilityEvidence("the evidence has limit probability zero");
  return hit / mass;
}

// Runnable model with the same distribution on tuples of distinct elements:
// each relation gets a table-family node over its context atoms.
inline Model to_model(const QfLbn& qf) {
  const auto& sig = qf.signature();
  Model out(qf.signature_ptr());
  for (size_t r = 0; r < sig.relations().size(); ++r) {
    const auto& rel = sig.relation(r);
    const auto& all = qf.tables(r);
    if (all.empty()) throw ModelError("relation '" + rel.name + "' has no compiled table");
    const auto patterns = argument_patterns(rel);
    const QfTable& g = qf.table(r, patterns.front());
    // Every coinciding-argument table must agree with the generic one read
    // on the merged arguments, since the model language has no equality.
    for (size_t pi = 1; pi < patterns.size(); ++pi) {
      const QfTable& d = qf.table(r, patterns[pi]);
      std::vector<int> where(g.context.size(), -1);
      for (size_t i = 0; i < g.context.size(); ++i) {
        SymAtom mapped{g.context[i].rel, {}};
        for (int a : g.context[i].args) mapped.args.push_back(d.pattern[static_cast<size_t>(a)]);
        auto it = std::find(d.context.begin(), d.context.end(), mapped);
        if (it != d.context.end()) where[i] = static_cast<int>(it - d.context.begin());
      }
      for (std::uint64_t m = 0; m < d.q.size(); ++m) {
        if (!d.defined[m]) continue;
        for (std::uint64_t gm = 0; gm < g.q.size(); ++gm) {
          bool consistent = true;
          for (size_t i = 0; i < where.size() && consistent; ++i)
            if (where[i] >= 0) consistent = ((gm >> i) & 1U) == ((m >> where[i]) & 1U);
          if (consistent && std::abs(g.q[gm] - d.q[m]) > 1e-12)
            throw ModelError("relation '" + rel.name +
                             "' behaves differently on repeated arguments; its limit is not expressible "
                             "as a model without equality");
        }
      }
    }
    if (g.context.empty()) {
      out.set_node(r, NodeSpec::partition(g.vars, {{Formula::top(), g.q.at(0)}}));
      continue;
    }
    std::vector<Feature> features;
    for (size_t i = 0; i < g.context.size(); ++i)
      features.push_back({"c" + std::to_string(i + 1), detail::sym_atom_formula(sig, g.vars, g.context[i]),
                          Formula::top(), {}});
    out.set_node(r, NodeSpec::functional(g.vars, std::move(features),
                                         FunctionFamily::table(g.context.size(), g.q)));
  }
  out.check();
  return out;
}

struct ProjectivityReport {
  bool projective = true;
  std::vector<std::int64_t> sizes;
  std::vector<std::vector<double>> values;  // values[query][size]
  double max_deviation = 0.0;
  std::vector<std::string> violations;
};

// Exact query probabilities across domain sizes; a quantifier-free model must
// give the same answer at every size.
inline ProjectivityReport check_projectivity(const Model& m, const std::vector<std::int64_t>& sizes,
                                             const std::vector<Query>& queries, size_t cap = default_cap()) {
  if (!m.is_quantifier_free()) throw ModelError("projectivity check requires a quantifier-free model");
  ProjectivityReport rep;
  rep.sizes = sizes;
  for (size_t qi = 0; qi < queries.size(); ++qi) {
    std::vector<double> vals;
    for (auto n : sizes) vals.push_back(exact_query(m, DomainSizes::uniform(m.signature(), n), queries[qi], cap));
    for (size_t i = 1; i < vals.size(); ++i) {
      const double d = std::abs(vals[i] - vals[0]);
      rep.max_deviation = std::max(rep.max_deviation, d);
      if (d > 1e-12) {
        rep.projective = false;
        rep.violations.push_back("query " + std::to_string(qi + 1) + ": " + format_double(vals[i]) + " at size " +
                                 std::to_string(sizes[i]) + " vs " + format_double(vals[0]) + " at size " +
                                 std::to_string(sizes[0]));
      }
    }
    rep.values.push_back(std::move(vals));
  }
  return rep;
}

// r-extension axiom over one sort: every r distinct elements have a further
// distinct element b whose atoms mentioning b (among `relations`, with the
// first r variables bound to the r elements) are true exactly on `phi`.
struct ExtensionAxiom {
  size_t r = 0;
  std::string sort;
  std::vector<size_t> relations;
  std::vector<SymAtom> phi;  // over variables 0..r; variable r is the witness

  std::vector<SymAtom> delta(const Signature& sig) const {
    std::vector<Variable> vars;
    for (size_t i = 0; i <= r; ++i) vars.push_back({"x" + std::to_string(i + 1), sort});
    std::vector<SymAtom> out;
    for (const auto& a : diagram_atoms(sig, vars, relations))
      if (std::find(a.args.begin(), a.args.end(), static_cast<int>(r)) != a.args.end()) out.push_back(a);
    return out;
  }

  void check(const Signature& sig) const {
    if (!sig.has_sort(sort)) throw ModelError("unknown sort '" + sort + "'");
    for (size_t rel : relations)
      for (const auto& s : sig.relation(rel).sorts)
        if (s != sort) throw ModelError("extension axioms are single-sorted; '" + sig.relation(rel).name + "' is not");
    auto d = delta(sig);
    for (const auto& a : phi)
      if (std::find(d.begin(), d.end(), a) == d.end())
        throw ModelError("extension axiom atom does not mention the witness variable");
  }

  bool holds(const Structure& w) const {
    const auto d = delta(w.signature());
    std::vector<char> want(d.size());
    for (size_t i = 0; i < d.size(); ++i) want[i] = std::find(phi.begin(), phi.end(), d[i]) != phi.end();
    const int n = static_cast<int>(w.size_of(sort));
    std::vector<int> elems(r + 1, 0);
    std::vector<int> tuple;
    std::function<bool(size_t)> all = [&](size_t k) -> bool {
      if (k == r) {
        for (int b = 0; b < n; ++b) {
          if (std::find(elems.begin(), elems.begin() + static_cast<std::ptrdiff_t>(r), b) !=
              elems.begin() + static_cast<std::ptrdiff_t>(r))
            continue;
          elems[r] = b;
          bool ok = true;
          for (size_t i = 0; i < d.size() && ok; ++i) {
            tuple.clear();
            for (int v : d[i].args) tuple.push_back(elems[static_cast<size_t>(v)]);
            ok = w.holds(d[i].rel, tuple) == (want[i] != 0);
          }
          if (ok) return true;
        }
        return false;
      }
      for (int a = 0; a < n; ++a) {
        if (std::find(elems.begin(), elems.begin() + static_cast<std::ptrdiff_t>(k), a) !=
            elems.begin() + static_cast<std::ptrdiff_t>(k))
          continue;
        elems[k] = a;
        if (!all(k + 1)) return false;
      }
      return true;
    };
    return all(0);
  }
};

struct AxiomRate {
  std::int64_t n = 0;
  double violation = 0.0;
  double std_error = 0.0;
};

// Monte Carlo frequency of worlds violating the axiom, per domain size.
inline std::vector<AxiomRate> extension_axiom_rate(const Model& m, const ExtensionAxiom& axiom,
                                                   const std::vector<std::int64_t>& sizes, std::uint64_t n_samples,
                                                   std::uint64_t seed) {
  if (n_samples == 0) throw ModelError("at least one sample is required");
  axiom.check(m.signature());
  CompiledModel cm(m);
  std::vector<AxiomRate> out;
  for (auto n : sizes) {
    auto ds = DomainSizes::uniform(m.signature(), n);
    std::uint64_t bad = 0;
    for (std::uint64_t i = 0; i < n_samples; ++i)
      if (!axiom.holds(forward_sample(cm, ds, derive_seed(derive_seed(seed, static_cast<std::uint64_t>(n)), i))))
        ++bad;
    const double p = static_cast<double>(bad) / static_cast<double>(n_samples);
    out.push_back({n, p, std::sqrt(p * (1 - p) / static_cast<double>(n_samples))});
  }
  return out;
}

}  // namespace freqnet
