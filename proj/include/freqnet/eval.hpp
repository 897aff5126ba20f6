#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "freqnet/formula.hpp"
#include "freqnet/signature.hpp"

namespace freqnet {

// Formula lowered to slot-indexed nodes; variables become positions in an
// environment vector. Free variables occupy the leading slots in the order
// given at construction, bound variables get fresh slots after them.
class CompiledFormula {
 public:
  struct Node {
    FormulaKind kind = FormulaKind::True;
    int relation = -1;
    std::vector<int> arg_slots;   // -1 for constants
    std::vector<int> arg_consts;
    int kids[4] = {-1, -1, -1, -1};
    int slot = -1;                // quantifier variable
    int sort = -1;
    std::vector<int> freq_slots;
    std::vector<int> freq_sorts;
    Rational offset;
    OffsetSide side = OffsetSide::Right;
    std::vector<int> free_slots;  // slots a FreqCmp value depends on (memo key)
    int memo = -1;
  };

  CompiledFormula() = default;

  CompiledFormula(const Formula& f, const Signature& sig, const std::vector<Variable>& free_slots) {
    check_sorts(f, sig);
    std::map<std::string, std::vector<int>> scope;
    for (const auto& v : free_slots) {
      if (scope.count(v.name)) throw ModelError("duplicate variable '" + v.name + "' in slot list");
      scope[v.name].push_back(static_cast<int>(slot_vars_.size()));
      slot_vars_.push_back(v);
    }
    for (const auto& v : free_variables(f)) {
      auto it = scope.find(v.name);
      if (it == scope.end()) throw ModelError("unbound free variable '" + v.name + "'");
      if (slot_vars_[it->second.back()].sort != v.sort)
        throw ModelError("variable '" + v.name + "' bound with sort '" + slot_vars_[it->second.back()].sort +
                         "' but used with sort '" + v.sort + "'");
    }
    root_ = lower(f, sig, scope);
  }

  int root() const { return root_; }
  size_t slot_count() const { return slot_vars_.size(); }
  const std::vector<Variable>& slot_vars() const { return slot_vars_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  int memo_count() const { return memo_count_; }

 private:
  int lower(const Formula& f, const Signature& sig, std::map<std::string, std::vector<int>>& scope) {
    Node n;
    n.kind = f.kind();
    auto sort_id = [&](const std::string& s) {
      const auto& sorts = sig.sorts();
      for (size_t i = 0; i < sorts.size(); ++i)
        if (sorts[i] == s) return static_cast<int>(i);
      throw ModelError("unknown sort '" + s + "'");
    };
    auto bind = [&](const Variable& v) {
      int slot = static_cast<int>(slot_vars_.size());
      slot_vars_.push_back(v);
      scope[v.name].push_back(slot);
      return slot;
    };
    auto unbind = [&](const Variable& v) {
      auto& stack = scope[v.name];
      stack.pop_back();
      if (stack.empty()) scope.erase(v.name);
    };
    switch (f.kind()) {
      case FormulaKind::True:
      case FormulaKind::False:
        break;
      case FormulaKind::Atom:
        n.relation = static_cast<int>(sig.relation_index(f.relation()));
        for (const auto& t : f.terms()) {
          if (t.is_var()) {
            n.arg_slots.push_back(scope.at(t.name).back());
            n.arg_consts.push_back(0);
          } else {
            n.arg_slots.push_back(-1);
            n.arg_consts.push_back(t.value);
          }
        }
        break;
      case FormulaKind::Forall:
      case FormulaKind::Exists:
        n.sort = sort_id(f.bound().sort);
        n.slot = bind(f.bound());
        n.kids[0] = lower(f.child(0), sig, scope);
        unbind(f.bound());
        break;
      case FormulaKind::FreqCmp: {
        for (const auto& y : f.freq_vars()) {
          n.freq_sorts.push_back(sort_id(y.sort));
          n.freq_slots.push_back(bind(y));
        }
        for (int i = 0; i < 4; ++i) n.kids[i] = lower(f.child(static_cast<size_t>(i)), sig, scope);
        for (auto it = f.freq_vars().rbegin(); it != f.freq_vars().rend(); ++it) unbind(*it);
        n.offset = f.offset();
        n.side = f.side();
        for (const auto& v : free_variables(f)) n.free_slots.push_back(scope.at(v.name).back());
        n.memo = memo_count_++;
        break;
      }
      default:
        for (size_t i = 0; i < f.children().size(); ++i) n.kids[i] = lower(f.child(i), sig, scope);
    }
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<Variable> slot_vars_;
  int root_ = -1;
  int memo_count_ = 0;
};

// Evaluates compiled formulas against one fixed structure. Frequency
// comparison results are memoized per (node, values of its free slots); the
// memo is only valid while the structure is unchanged, call reset() otherwise.
class Evaluator {
 public:
  explicit Evaluator(const Structure& s) : s_(&s) {
    for (const auto& sort : s.signature().sorts()) sort_sizes_.push_back(s.size_of(sort));
  }

  void reset() { memo_.clear(); }

  bool eval(const CompiledFormula& cf, std::vector<int>& env) { return eval_node(cf, cf.root(), env); }

  bool eval_node(const CompiledFormula& cf, int id, std::vector<int>& env) {
    const auto& n = cf.nodes()[static_cast<size_t>(id)];
    switch (n.kind) {
      case FormulaKind::True:
        return true;
      case FormulaKind::False:
        return false;
      case FormulaKind::Atom: {
        const auto& rad = s_->radix(static_cast<size_t>(n.relation));
        std::uint64_t idx = 0;
        for (size_t i = 0; i < n.arg_slots.size(); ++i) {
          int v = n.arg_slots[i] >= 0 ? env[static_cast<size_t>(n.arg_slots[i])] : n.arg_consts[i];
          if (v < 0 || v >= rad[i]) throw ModelError("element " + std::to_string(v) + " out of range");
          idx = idx * static_cast<std::uint64_t>(rad[i]) + static_cast<std::uint64_t>(v);
        }
        return s_->holds_index(static_cast<size_t>(n.relation), idx);
      }
      case FormulaKind::Not:
        return !eval_node(cf, n.kids[0], env);
      case FormulaKind::And:
        return eval_node(cf, n.kids[0], env) && eval_node(cf, n.kids[1], env);
      case FormulaKind::Or:
        return eval_node(cf, n.kids[0], env) || eval_node(cf, n.kids[1], env);
      case FormulaKind::Implies:
        return !eval_node(cf, n.kids[0], env) || eval_node(cf, n.kids[1], env);
      case FormulaKind::Forall:
      case FormulaKind::Exists: {
        const bool is_exists = n.kind == FormulaKind::Exists;
        const auto range = sort_sizes_[static_cast<size_t>(n.sort)];
        auto& slot = env[static_cast<size_t>(n.slot)];
        const int saved = slot;
        bool result = !is_exists;
        for (std::int64_t v = 0; v < range; ++v) {
          slot = static_cast<int>(v);
          if (eval_node(cf, n.kids[0], env) == is_exists) {
            result = is_exists;
            break;
          }
        }
        slot = saved;
        return result;
      }
      case FormulaKind::FreqCmp:
        return eval_freq(cf, n, env);
    }
    return false;
  }

  // Number of assignments to `slots` (full product of their sort domains)
  // under which node `id` holds; other slots are taken from env.
  std::int64_t count_node(const CompiledFormula& cf, int id, std::vector<int>& env, std::span<const int> slots,
                          std::span<const int> sorts) {
    std::vector<int> saved;
    for (int s : slots) saved.push_back(env[static_cast<size_t>(s)]);
    for (int s : slots) env[static_cast<size_t>(s)] = 0;
    std::int64_t total = 0;
    while (true) {
      if (eval_node(cf, id, env)) ++total;
      bool done = true;
      for (size_t k = slots.size(); k-- > 0;) {
        auto& v = env[static_cast<size_t>(slots[k])];
        if (++v < sort_sizes_[static_cast<size_t>(sorts[k])]) {
          done = false;
          break;
        }
        v = 0;
      }
      if (done) break;
    }
    for (size_t i = 0; i < slots.size(); ++i) env[static_cast<size_t>(slots[i])] = saved[i];
    return total;
  }

  std::int64_t sort_size(int sort) const { return sort_sizes_[static_cast<size_t>(sort)]; }

 private:
  bool eval_freq(const CompiledFormula& cf, const CompiledFormula::Node& n, std::vector<int>& env) {
    if (n.free_slots.size() > 3) return compare_frequencies(cf, n, env);
    std::uint64_t key = 0;
    for (int s : n.free_slots) key = key * 1000003ULL + static_cast<std::uint64_t>(env[static_cast<size_t>(s)]);
    auto& table = memo_[{&cf, n.memo}];
    // Injective for at most three slots with values below the multiplier.
    if (auto it = table.find(key); it != table.end()) return it->second;
    bool result = compare_frequencies(cf, n, env);
    table.emplace(key, result);
    return result;
  }

  bool compare_frequencies(const CompiledFormula& cf, const CompiledFormula::Node& n, std::vector<int>& env) {
    auto both = [&](int a, int b) -> std::int64_t {
      // count of a & b over the frequency variables
      std::int64_t total = 0;
      const auto& slots = n.freq_slots;
      std::vector<int> saved;
      for (int s : slots) saved.push_back(env[static_cast<size_t>(s)]);
      for (int s : slots) env[static_cast<size_t>(s)] = 0;
      while (true) {
        if (eval_node(cf, b, env) && (a < 0 || eval_node(cf, a, env))) ++total;
        size_t k = slots.size();
        bool done = true;
        while (k > 0) {
          --k;
          auto& v = env[static_cast<size_t>(slots[k])];
          if (++v < sort_sizes_[static_cast<size_t>(n.freq_sorts[k])]) {
            done = false;
            break;
          }
          v = 0;
        }
        if (done) break;
      }
      for (size_t i = 0; i < slots.size(); ++i) env[static_cast<size_t>(slots[i])] = saved[i];
      return total;
    };
    const std::int64_t psi = both(-1, n.kids[1]);
    if (psi == 0) return false;
    const std::int64_t tau = both(-1, n.kids[3]);
    if (tau == 0) return false;
    const std::int64_t phi_psi = both(n.kids[0], n.kids[1]);
    const std::int64_t theta_tau = both(n.kids[2], n.kids[3]);
    // Exact: compare a/b (+r) against c/d (+r) with r = p/q, cross-multiplied.
    const __int128 a = phi_psi, b = psi, c = theta_tau, d = tau;
    const __int128 p = n.offset.num, q = n.offset.den;
    if (n.side == OffsetSide::Left) return a * d * q + p * b * d >= c * b * q;
    return a * d * q >= c * b * q + p * b * d;
  }

  struct KeyHash {
    size_t operator()(const std::pair<const CompiledFormula*, int>& k) const {
      return std::hash<const void*>()(k.first) ^ (static_cast<size_t>(k.second) * 0x9e3779b97f4a7c15ULL);
    }
  };

  const Structure* s_;
  std::vector<std::int64_t> sort_sizes_;
  std::unordered_map<std::pair<const CompiledFormula*, int>, std::unordered_map<std::uint64_t, bool>, KeyHash> memo_;
};

// Sort-respecting interpretation of variables.
class VarBinding {
 public:
  VarBinding() = default;
  VarBinding(std::initializer_list<std::pair<Variable, int>> init) : entries_(init) {}

  void bind(const Variable& v, int value) {
    for (auto& [var, val] : entries_)
      if (var.name == v.name) {
        var = v;
        val = value;
        return;
      }
    entries_.emplace_back(v, value);
  }

  const std::vector<std::pair<Variable, int>>& entries() const { return entries_; }

  void check(const Structure& s) const {
    for (const auto& [v, val] : entries_)
      if (val < 0 || val >= s.size_of(v.sort))
        throw ModelError("variable '" + v.name + "' bound to " + std::to_string(val) + " outside sort '" + v.sort +
                         "'");
  }

 private:
  std::vector<std::pair<Variable, int>> entries_;
};

namespace detail {

inline std::vector<Variable> binding_slots(const VarBinding& b, const std::vector<Variable>& extra) {
  std::vector<Variable> slots;
  for (const auto& y : extra) slots.push_back(y);
  for (const auto& [v, val] : b.entries()) {
    bool shadowed = false;
    for (const auto& y : extra) shadowed |= y.name == v.name;
    if (!shadowed) slots.push_back(v);
  }
  return slots;
}

inline std::vector<int> binding_env(const CompiledFormula& cf, const VarBinding& b) {
  std::vector<int> env(cf.slot_count(), 0);
  for (size_t i = 0; i < cf.slot_count(); ++i)
    for (const auto& [v, val] : b.entries())
      if (v.name == cf.slot_vars()[i].name) env[i] = val;
  return env;
}

}  // namespace detail

inline bool evaluate(const Structure& s, const VarBinding& binding, const Formula& f) {
  binding.check(s);
  CompiledFormula cf(f, s.signature(), detail::binding_slots(binding, {}));
  auto env = detail::binding_env(cf, binding);
  Evaluator ev(s);
  return ev.eval(cf, env);
}

// |f|_{ys, binding}: number of tuples over the product of the ys' sort domains satisfying f.
inline std::int64_t count(const Structure& s, const VarBinding& binding, const Formula& f,
                          const std::vector<Variable>& ys) {
  binding.check(s);
  CompiledFormula cf(f, s.signature(), detail::binding_slots(binding, ys));
  auto env = detail::binding_env(cf, binding);
  std::vector<int> slots, sorts;
  for (size_t i = 0; i < ys.size(); ++i) {
    slots.push_back(static_cast<int>(i));
    const auto& all = s.signature().sorts();
    sorts.push_back(static_cast<int>(std::find(all.begin(), all.end(), ys[i].sort) - all.begin()));
  }
  Evaluator ev(s);
  return ev.count_node(cf, cf.root(), env, slots, sorts);
}

// ||phi | psi||_ys; absent when psi is never satisfied.
inline std::optional<Rational> frequency(const Structure& s, const VarBinding& binding, const Formula& phi,
                                         const Formula& psi, const std::vector<Variable>& ys) {
  const std::int64_t den = count(s, binding, psi, ys);
  if (den == 0) return std::nullopt;
  return Rational(count(s, binding, Formula::conj(phi, psi), ys), den);
}

}  // namespace freqnet
