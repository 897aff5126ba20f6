#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freqnet/errors.hpp"
#include "freqnet/formula.hpp"
#include "freqnet/signature.hpp"

namespace freqnet {

// Atom over positional variables: relation index plus variable indices.
struct SymAtom {
  size_t rel = 0;
  std::vector<int> args;

  friend bool operator==(const SymAtom&, const SymAtom&) = default;
  friend auto operator<=>(const SymAtom&, const SymAtom&) = default;
};

// Complete atomic diagram: a truth value for every sort-appropriate atom over `vars`.
struct AtomicDiagram {
  std::vector<Variable> vars;
  std::vector<SymAtom> atoms;
  std::vector<bool> values;

  Formula atom_formula(const Signature& sig, size_t i) const {
    std::vector<Term> terms;
    for (int a : atoms[i].args) terms.push_back(Term::var(vars[static_cast<size_t>(a)]));
    return Formula::atom(sig.relation(atoms[i].rel).name, std::move(terms));
  }

  // Conjunction of literals; `true` for the empty diagram.
  Formula to_formula(const Signature& sig) const {
    std::vector<Formula> lits;
    for (size_t i = 0; i < atoms.size(); ++i) {
      Formula a = atom_formula(sig, i);
      lits.push_back(values[i] ? a : Formula::negation(a));
    }
    return Formula::conj_all(lits);
  }
};

// All sort-appropriate atoms of the selected relations over `vars`, in
// relation order then lexicographic argument order.
inline std::vector<SymAtom> diagram_atoms(const Signature& sig, const std::vector<Variable>& vars,
                                          const std::vector<size_t>& relations) {
  std::vector<SymAtom> out;
  for (size_t r : relations) {
    const auto& rel = sig.relation(r);
    std::vector<std::vector<int>> choices(rel.arity());
    for (size_t i = 0; i < rel.arity(); ++i)
      for (size_t v = 0; v < vars.size(); ++v)
        if (vars[v].sort == rel.sorts[i]) choices[i].push_back(static_cast<int>(v));
    bool empty = false;
    for (const auto& c : choices) empty |= c.empty();
    if (empty) continue;
    std::vector<size_t> pos(rel.arity(), 0);
    while (true) {
      SymAtom a{r, {}};
      for (size_t i = 0; i < rel.arity(); ++i) a.args.push_back(choices[i][pos[i]]);
      out.push_back(std::move(a));
      bool done = true;
      for (size_t k = rel.arity(); k-- > 0;) {
        if (++pos[k] < choices[k].size()) {
          done = false;
          break;
        }
        pos[k] = 0;
      }
      if (done) break;
    }
  }
  return out;
}

inline std::vector<AtomicDiagram> enumerate_diagrams(const Signature& sig, const std::vector<Variable>& vars,
                                                     size_t cap = 20) {
  if (vars.empty()) throw ModelError("diagram enumeration needs at least one variable");
  for (const auto& v : vars)
    if (!sig.has_sort(v.sort)) throw ModelError("unknown sort '" + v.sort + "'");
  std::vector<size_t> rels;
  for (size_t r = 0; r < sig.relations().size(); ++r) rels.push_back(r);
  auto atoms = diagram_atoms(sig, vars, rels);
  if (atoms.size() > cap)
    throw CapExceeded(std::to_string(atoms.size()) + " atoms over the diagram variables exceed the cap of " +
                      std::to_string(cap));
  std::vector<AtomicDiagram> out;
  const std::uint64_t total = std::uint64_t{1} << atoms.size();
  out.reserve(total);
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    AtomicDiagram d{vars, atoms, std::vector<bool>(atoms.size())};
    for (size_t i = 0; i < atoms.size(); ++i) d.values[i] = (mask >> i) & 1U;
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace freqnet
