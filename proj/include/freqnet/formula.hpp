#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "freqnet/errors.hpp"
#include "freqnet/rational.hpp"
#include "freqnet/signature.hpp"

namespace freqnet {

struct Variable {
  std::string name;
  std::string sort;

  friend bool operator==(const Variable&, const Variable&) = default;
  friend auto operator<=>(const Variable&, const Variable&) = default;
};

struct Term {
  enum class Kind { Var, Const };
  Kind kind = Kind::Var;
  std::string name;  // variable name (Var only)
  int value = 0;     // element (Const only)
  std::string sort;

  static Term var(std::string name, std::string sort) { return {Kind::Var, std::move(name), 0, std::move(sort)}; }
  static Term var(const Variable& v) { return var(v.name, v.sort); }
  static Term constant(int value, std::string sort) { return {Kind::Const, {}, value, std::move(sort)}; }

  bool is_var() const { return kind == Kind::Var; }

  friend bool operator==(const Term&, const Term&) = default;
};

enum class FormulaKind { True, False, Atom, Not, And, Or, Implies, Forall, Exists, FreqCmp };

// Which side carries the offset r:
//   Left:  r + ||phi|psi||_y >= ||theta|tau||_y
//   Right: ||phi|psi||_y >= ||theta|tau||_y + r
enum class OffsetSide { Left, Right };

// Immutable CPL formula with shared subtrees.
class Formula {
 public:
  struct Node {
    FormulaKind kind = FormulaKind::True;
    std::string relation;
    std::vector<Term> terms;
    std::vector<Formula> children;  // FreqCmp: phi, psi, theta, tau
    Variable bound;                 // Forall / Exists
    std::vector<Variable> freq_vars;
    Rational offset;
    OffsetSide side = OffsetSide::Right;
  };

  Formula() : node_(truth_node(true)) {}

  static Formula truth(bool v) { return Formula(truth_node(v)); }
  static Formula top() { return truth(true); }
  static Formula bottom() { return truth(false); }

  static Formula atom(std::string relation, std::vector<Term> terms) {
    Node n;
    n.kind = FormulaKind::Atom;
    n.relation = std::move(relation);
    n.terms = std::move(terms);
    return make(std::move(n));
  }

  static Formula negation(Formula f) { return unary(FormulaKind::Not, std::move(f)); }
  static Formula conj(Formula a, Formula b) { return binary(FormulaKind::And, std::move(a), std::move(b)); }
  static Formula disj(Formula a, Formula b) { return binary(FormulaKind::Or, std::move(a), std::move(b)); }
  static Formula implies(Formula a, Formula b) { return binary(FormulaKind::Implies, std::move(a), std::move(b)); }

  static Formula forall(Variable v, Formula body) { return quantifier(FormulaKind::Forall, std::move(v), std::move(body)); }
  static Formula exists(Variable v, Formula body) { return quantifier(FormulaKind::Exists, std::move(v), std::move(body)); }

  static Formula freq_cmp(OffsetSide side, Rational r, Formula phi, Formula psi, Formula theta, Formula tau,
                          std::vector<Variable> ys) {
    if (r.num < 0) throw ModelError("frequency comparison offset must be non-negative");
    for (size_t i = 0; i < ys.size(); ++i)
      for (size_t j = i + 1; j < ys.size(); ++j)
        if (ys[i].name == ys[j].name) throw ModelError("repeated frequency variable '" + ys[i].name + "'");
    Node n;
    n.kind = FormulaKind::FreqCmp;
    n.side = side;
    n.offset = r;
    n.children = {std::move(phi), std::move(psi), std::move(theta), std::move(tau)};
    n.freq_vars = std::move(ys);
    return make(std::move(n));
  }

  // ||phi|psi||_y >= r, desugared as ||phi|psi||_y >= ||false|true||_y + r.
  static Formula freq_at_least(Formula phi, Formula psi, std::vector<Variable> ys, Rational r) {
    return freq_cmp(OffsetSide::Right, r, std::move(phi), std::move(psi), bottom(), top(), std::move(ys));
  }
  // r >= ||theta|tau||_y, desugared as r + ||false|true||_y >= ||theta|tau||_y.
  static Formula freq_at_most(Formula theta, Formula tau, std::vector<Variable> ys, Rational r) {
    return freq_cmp(OffsetSide::Left, r, bottom(), top(), std::move(theta), std::move(tau), std::move(ys));
  }

  static Formula conj_all(const std::vector<Formula>& fs) {
    if (fs.empty()) return top();
    Formula acc = fs[0];
    for (size_t i = 1; i < fs.size(); ++i) acc = conj(acc, fs[i]);
    return acc;
  }
  static Formula disj_all(const std::vector<Formula>& fs) {
    if (fs.empty()) return bottom();
    Formula acc = fs[0];
    for (size_t i = 1; i < fs.size(); ++i) acc = disj(acc, fs[i]);
    return acc;
  }

  FormulaKind kind() const { return node_->kind; }
  const std::string& relation() const { return node_->relation; }
  const std::vector<Term>& terms() const { return node_->terms; }
  const std::vector<Formula>& children() const { return node_->children; }
  const Formula& child(size_t i) const { return node_->children.at(i); }
  const Variable& bound() const { return node_->bound; }
  const std::vector<Variable>& freq_vars() const { return node_->freq_vars; }
  const Rational& offset() const { return node_->offset; }
  OffsetSide side() const { return node_->side; }
  const Node* node() const { return node_.get(); }

  bool is_true() const { return kind() == FormulaKind::True; }
  bool is_false() const { return kind() == FormulaKind::False; }

  friend bool operator==(const Formula& a, const Formula& b) {
    if (a.node_ == b.node_) return true;
    const Node& x = *a.node_;
    const Node& y = *b.node_;
    return x.kind == y.kind && x.relation == y.relation && x.terms == y.terms && x.bound == y.bound &&
           x.freq_vars == y.freq_vars && x.offset == y.offset && x.side == y.side && x.children == y.children;
  }

 private:
  explicit Formula(std::shared_ptr<const Node> n) : node_(std::move(n)) {}

  static std::shared_ptr<const Node> truth_node(bool v) {
    static const auto t = std::make_shared<const Node>(Node{FormulaKind::True, {}, {}, {}, {}, {}, {}, {}});
    static const auto f = std::make_shared<const Node>(Node{FormulaKind::False, {}, {}, {}, {}, {}, {}, {}});
    return v ? t : f;
  }
  static Formula make(Node n) { return Formula(std::make_shared<const Node>(std::move(n))); }
  static Formula unary(FormulaKind k, Formula f) {
    Node n;
    n.kind = k;
    n.children = {std::move(f)};
    return make(std::move(n));
  }
  static Formula binary(FormulaKind k, Formula a, Formula b) {
    Node n;
    n.kind = k;
    n.children = {std::move(a), std::move(b)};
    return make(std::move(n));
  }
  static Formula quantifier(FormulaKind k, Variable v, Formula body) {
    Node n;
    n.kind = k;
    n.bound = std::move(v);
    n.children = {std::move(body)};
    return make(std::move(n));
  }

  std::shared_ptr<const Node> node_;
};

namespace detail {

inline void collect_free(const Formula& f, std::set<std::string>& bound, std::map<std::string, std::string>& out) {
  switch (f.kind()) {
    case FormulaKind::True:
    case FormulaKind::False:
      return;
    case FormulaKind::Atom:
      for (const auto& t : f.terms())
        if (t.is_var() && !bound.count(t.name)) out.emplace(t.name, t.sort);
      return;
    case FormulaKind::Forall:
    case FormulaKind::Exists: {
      bool fresh = bound.insert(f.bound().name).second;
      collect_free(f.child(0), bound, out);
      if (fresh) bound.erase(f.bound().name);
      return;
    }
    case FormulaKind::FreqCmp: {
      std::vector<std::string> added;
      for (const auto& y : f.freq_vars())
        if (bound.insert(y.name).second) added.push_back(y.name);
      for (const auto& c : f.children()) collect_free(c, bound, out);
      for (const auto& n : added) bound.erase(n);
      return;
    }
    default:
      for (const auto& c : f.children()) collect_free(c, bound, out);
  }
}

inline void collect_names(const Formula& f, std::set<std::string>& out) {
  for (const auto& t : f.terms())
    if (t.is_var()) out.insert(t.name);
  if (f.kind() == FormulaKind::Forall || f.kind() == FormulaKind::Exists) out.insert(f.bound().name);
  for (const auto& y : f.freq_vars()) out.insert(y.name);
  for (const auto& c : f.children()) collect_names(c, out);
}

}  // namespace detail

// Free variables, respecting both quantifier and frequency binders; sorted by name.
inline std::vector<Variable> free_variables(const Formula& f) {
  std::set<std::string> bound;
  std::map<std::string, std::string> out;
  detail::collect_free(f, bound, out);
  std::vector<Variable> vars;
  for (auto& [n, s] : out) vars.push_back({n, s});
  return vars;
}

// Every variable name occurring anywhere (free or bound).
inline std::set<std::string> variable_names(const Formula& f) {
  std::set<std::string> out;
  detail::collect_names(f, out);
  return out;
}

inline std::string fresh_name(const std::string& base, const std::set<std::string>& avoid) {
  if (!avoid.count(base)) return base;
  for (int i = 1;; ++i) {
    std::string candidate = base + "_" + std::to_string(i);
    if (!avoid.count(candidate)) return candidate;
  }
}

using Substitution = std::map<std::string, Term>;

// Simultaneous capture-avoiding substitution of terms for free variables.
inline Formula substitute(const Formula& f, const Substitution& sub) {
  if (sub.empty()) return f;
  switch (f.kind()) {
    case FormulaKind::True:
    case FormulaKind::False:
      return f;
    case FormulaKind::Atom: {
      std::vector<Term> terms = f.terms();
      bool changed = false;
      for (auto& t : terms) {
        if (!t.is_var()) continue;
        auto it = sub.find(t.name);
        if (it == sub.end()) continue;
        if (it->second.sort != t.sort)
          throw ModelError("cannot substitute a term of sort '" + it->second.sort + "' for variable '" + t.name +
                           "' of sort '" + t.sort + "'");
        t = it->second;
        changed = true;
      }
      return changed ? Formula::atom(f.relation(), std::move(terms)) : f;
    }
    case FormulaKind::Not:
      return Formula::negation(substitute(f.child(0), sub));
    case FormulaKind::And:
      return Formula::conj(substitute(f.child(0), sub), substitute(f.child(1), sub));
    case FormulaKind::Or:
      return Formula::disj(substitute(f.child(0), sub), substitute(f.child(1), sub));
    case FormulaKind::Implies:
      return Formula::implies(substitute(f.child(0), sub), substitute(f.child(1), sub));
    case FormulaKind::Forall:
    case FormulaKind::Exists:
    case FormulaKind::FreqCmp: {
      std::vector<Variable> binders =
          f.kind() == FormulaKind::FreqCmp ? f.freq_vars() : std::vector<Variable>{f.bound()};
      Substitution inner = sub;
      for (const auto& b : binders) inner.erase(b.name);
      // Names that the substituted terms would bring into scope.
      std::set<std::string> incoming;
      auto free_here = free_variables(f);
      for (const auto& [name, term] : inner) {
        bool occurs = false;
        for (const auto& v : free_here) occurs |= v.name == name;
        if (occurs && term.is_var()) incoming.insert(term.name);
      }
      std::set<std::string> avoid = variable_names(f);
      for (const auto& [name, term] : inner) {
        avoid.insert(name);
        if (term.is_var()) avoid.insert(term.name);
      }
      for (auto& b : binders) {
        if (incoming.count(b.name)) {
          std::string renamed = fresh_name(b.name, avoid);
          avoid.insert(renamed);
          inner[b.name] = Term::var(renamed, b.sort);
          b.name = renamed;
        }
      }
      std::vector<Formula> kids;
      for (const auto& c : f.children()) kids.push_back(substitute(c, inner));
      if (f.kind() == FormulaKind::FreqCmp)
        return Formula::freq_cmp(f.side(), f.offset(), kids[0], kids[1], kids[2], kids[3], binders);
      if (f.kind() == FormulaKind::Forall) return Formula::forall(binders[0], kids[0]);
      return Formula::exists(binders[0], kids[0]);
    }
  }
  return f;
}

inline Formula substitute(const Formula& f, const std::string& var, const Term& term) {
  return substitute(f, Substitution{{var, term}});
}

// Replaces each atom R(t...) by definition[args := t...].
inline Formula inline_relation(const Formula& f, const std::string& relation, const std::vector<Variable>& args,
                               const Formula& definition) {
  switch (f.kind()) {
    case FormulaKind::True:
    case FormulaKind::False:
      return f;
    case FormulaKind::Atom: {
      if (f.relation() != relation) return f;
      Substitution sub;
      for (size_t i = 0; i < args.size(); ++i) sub[args[i].name] = f.terms()[i];
      return substitute(definition, sub);
    }
    case FormulaKind::Not:
      return Formula::negation(inline_relation(f.child(0), relation, args, definition));
    case FormulaKind::And:
      return Formula::conj(inline_relation(f.child(0), relation, args, definition),
                           inline_relation(f.child(1), relation, args, definition));
    case FormulaKind::Or:
      return Formula::disj(inline_relation(f.child(0), relation, args, definition),
                           inline_relation(f.child(1), relation, args, definition));
    case FormulaKind::Implies:
      return Formula::implies(inline_relation(f.child(0), relation, args, definition),
                              inline_relation(f.child(1), relation, args, definition));
    case FormulaKind::Forall:
    case FormulaKind::Exists:
    case FormulaKind::FreqCmp: {
      // Rename binders that clash with free variables of the definition first.
      std::set<std::string> def_free;
      for (const auto& v : free_variables(definition)) def_free.insert(v.name);
      for (const auto& v : args) def_free.erase(v.name);
      std::vector<Variable> binders =
          f.kind() == FormulaKind::FreqCmp ? f.freq_vars() : std::vector<Variable>{f.bound()};
      Substitution rename;
      std::set<std::string> avoid = variable_names(f);
      avoid.insert(def_free.begin(), def_free.end());
      for (auto& b : binders) {
        if (def_free.count(b.name)) {
          std::string renamed = fresh_name(b.name, avoid);
          avoid.insert(renamed);
          rename[b.name] = Term::var(renamed, b.sort);
          b.name = renamed;
        }
      }
      std::vector<Formula> kids;
      for (const auto& c : f.children())
        kids.push_back(inline_relation(substitute(c, rename), relation, args, definition));
      if (f.kind() == FormulaKind::FreqCmp)
        return Formula::freq_cmp(f.side(), f.offset(), kids[0], kids[1], kids[2], kids[3], binders);
      if (f.kind() == FormulaKind::Forall) return Formula::forall(binders[0], kids[0]);
      return Formula::exists(binders[0], kids[0]);
    }
  }
  return f;
}

inline void mentioned_relations(const Formula& f, std::set<std::string>& out) {
  if (f.kind() == FormulaKind::Atom) out.insert(f.relation());
  for (const auto& c : f.children()) mentioned_relations(c, out);
}

inline std::set<std::string> mentioned_relations(const Formula& f) {
  std::set<std::string> out;
  mentioned_relations(f, out);
  return out;
}

inline bool has_quantifier(const Formula& f) {
  if (f.kind() == FormulaKind::Forall || f.kind() == FormulaKind::Exists || f.kind() == FormulaKind::FreqCmp)
    return true;
  for (const auto& c : f.children())
    if (has_quantifier(c)) return true;
  return false;
}

inline bool has_frequency(const Formula& f) {
  if (f.kind() == FormulaKind::FreqCmp) return true;
  for (const auto& c : f.children())
    if (has_frequency(c)) return true;
  return false;
}

inline bool has_constants(const Formula& f) {
  for (const auto& t : f.terms())
    if (!t.is_var()) return true;
  for (const auto& c : f.children())
    if (has_constants(c)) return true;
  return false;
}

// Checks atom arities and term sorts against the signature.
inline void check_sorts(const Formula& f, const Signature& sig) {
  if (f.kind() == FormulaKind::Atom) {
    auto r = sig.find_relation(f.relation());
    if (!r) throw ModelError("unknown relation '" + f.relation() + "'");
    const auto& rel = sig.relation(*r);
    if (rel.arity() != f.terms().size())
      throw ModelError("relation '" + rel.name + "' expects " + std::to_string(rel.arity()) + " arguments");
    for (size_t i = 0; i < rel.arity(); ++i)
      if (f.terms()[i].sort != rel.sorts[i])
        throw ModelError("argument " + std::to_string(i + 1) + " of '" + rel.name + "' must have sort '" +
                         rel.sorts[i] + "'");
  }
  for (const auto& c : f.children()) check_sorts(c, sig);
}

// Constant folding of truth values; leaves everything else intact.
inline Formula simplify(const Formula& f) {
  switch (f.kind()) {
    case FormulaKind::Not: {
      Formula c = simplify(f.child(0));
      if (c.is_true()) return Formula::bottom();
      if (c.is_false()) return Formula::top();
      if (c.kind() == FormulaKind::Not) return c.child(0);
      return Formula::negation(c);
    }
    case FormulaKind::And: {
      Formula a = simplify(f.child(0)), b = simplify(f.child(1));
      if (a.is_false() || b.is_false()) return Formula::bottom();
      if (a.is_true()) return b;
      if (b.is_true()) return a;
      return Formula::conj(a, b);
    }
    case FormulaKind::Or: {
      Formula a = simplify(f.child(0)), b = simplify(f.child(1));
      if (a.is_true() || b.is_true()) return Formula::top();
      if (a.is_false()) return b;
      if (b.is_false()) return a;
      return Formula::disj(a, b);
    }
    case FormulaKind::Implies: {
      Formula a = simplify(f.child(0)), b = simplify(f.child(1));
      if (a.is_false() || b.is_true()) return Formula::top();
      if (a.is_true()) return b;
      if (b.is_false()) return simplify(Formula::negation(a));
      return Formula::implies(a, b);
    }
    case FormulaKind::Forall:
    case FormulaKind::Exists: {
      Formula body = simplify(f.child(0));
      if (body.is_true() || body.is_false()) return body;
      return f.kind() == FormulaKind::Forall ? Formula::forall(f.bound(), body) : Formula::exists(f.bound(), body);
    }
    default:
      return f;
  }
}

}  // namespace freqnet
