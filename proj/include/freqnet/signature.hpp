#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "freqnet/errors.hpp"

namespace freqnet {

struct RelationSymbol {
  std::string name;
  std::vector<std::string> sorts;

  size_t arity() const { return sorts.size(); }
};

// Multi-sorted relational signature without equality.
class Signature {
 public:
  void add_sort(const std::string& name) {
    if (sort_index_.count(name)) throw ModelError("duplicate sort '" + name + "'");
    sort_index_[name] = sorts_.size();
    sorts_.push_back(name);
  }

  size_t add_relation(const std::string& name, std::vector<std::string> sorts) {
    if (relation_index_.count(name)) throw ModelError("duplicate relation '" + name + "'");
    for (const auto& s : sorts)
      if (!sort_index_.count(s)) throw ModelError("relation '" + name + "' uses undeclared sort '" + s + "'");
    relation_index_[name] = relations_.size();
    relations_.push_back({name, std::move(sorts)});
    return relations_.size() - 1;
  }

  const std::vector<std::string>& sorts() const { return sorts_; }
  const std::vector<RelationSymbol>& relations() const { return relations_; }
  const RelationSymbol& relation(size_t i) const { return relations_.at(i); }

  bool has_sort(const std::string& s) const { return sort_index_.count(s) > 0; }

  std::optional<size_t> find_relation(const std::string& name) const {
    auto it = relation_index_.find(name);
    if (it == relation_index_.end()) return std::nullopt;
    return it->second;
  }

  size_t relation_index(const std::string& name) const {
    auto r = find_relation(name);
    if (!r) throw ModelError("unknown relation '" + name + "'");
    return *r;
  }

  size_t max_arity() const {
    size_t m = 0;
    for (const auto& r : relations_) m = std::max(m, r.arity());
    return m;
  }

  friend bool operator==(const Signature& a, const Signature& b) {
    if (a.sorts_ != b.sorts_ || a.relations_.size() != b.relations_.size()) return false;
    for (size_t i = 0; i < a.relations_.size(); ++i)
      if (a.relations_[i].name != b.relations_[i].name || a.relations_[i].sorts != b.relations_[i].sorts)
        return false;
    return true;
  }

 private:
  std::vector<std::string> sorts_;
  std::vector<RelationSymbol> relations_;
  std::map<std::string, size_t> sort_index_;
  std::map<std::string, size_t> relation_index_;
};

using SignaturePtr = std::shared_ptr<const Signature>;

// Cardinality per sort; elements of a sort of size n are 0..n-1.
class DomainSizes {
 public:
  DomainSizes() = default;
  DomainSizes(std::initializer_list<std::pair<const std::string, std::int64_t>> init) : sizes_(init) {}

  void set(const std::string& sort, std::int64_t n) {
    if (n < 1) throw ModelError("domain size of sort '" + sort + "' must be at least 1");
    sizes_[sort] = n;
  }

  std::int64_t at(const std::string& sort) const {
    auto it = sizes_.find(sort);
    if (it == sizes_.end()) throw ModelError("no domain size given for sort '" + sort + "'");
    return it->second;
  }

  bool contains(const std::string& sort) const { return sizes_.count(sort) > 0; }
  const std::map<std::string, std::int64_t>& map() const { return sizes_; }

  void check_covers(const Signature& sig) const {
    for (const auto& s : sig.sorts()) {
      std::int64_t n = at(s);
      if (n < 1) throw ModelError("domain size of sort '" + s + "' must be at least 1");
    }
  }

  // Same size for every sort of the signature.
  static DomainSizes uniform(const Signature& sig, std::int64_t n) {
    DomainSizes d;
    for (const auto& s : sig.sorts()) d.set(s, n);
    return d;
  }

  friend bool operator==(const DomainSizes&, const DomainSizes&) = default;

 private:
  std::map<std::string, std::int64_t> sizes_;
};

// Finite structure: one dense truth table per relation, indexed in mixed radix
// over the relation's sort sizes (first argument most significant).
class Structure {
 public:
  Structure() = default;
  Structure(SignaturePtr sig, DomainSizes sizes) : sig_(std::move(sig)), sizes_(std::move(sizes)) {
    sizes_.check_covers(*sig_);
    const auto& rels = sig_->relations();
    radix_.resize(rels.size());
    bits_.resize(rels.size());
    for (size_t r = 0; r < rels.size(); ++r) {
      std::uint64_t total = 1;
      for (const auto& s : rels[r].sorts) {
        auto n = static_cast<std::uint64_t>(sizes_.at(s));
        radix_[r].push_back(static_cast<std::int64_t>(n));
        if (total > (std::uint64_t{1} << 40) / n) throw CapExceeded("relation '" + rels[r].name + "' too large");
        total *= n;
      }
      bits_[r].assign(total, 0);
    }
  }

  const Signature& signature() const { return *sig_; }
  const SignaturePtr& signature_ptr() const { return sig_; }
  const DomainSizes& sizes() const { return sizes_; }
  std::int64_t size_of(const std::string& sort) const { return sizes_.at(sort); }

  size_t atom_count(size_t rel) const { return bits_[rel].size(); }
  const std::vector<std::int64_t>& radix(size_t rel) const { return radix_[rel]; }

  std::uint64_t index_of(size_t rel, std::span<const int> tuple) const {
    const auto& rad = radix_[rel];
    if (tuple.size() != rad.size())
      throw ModelError("arity mismatch for relation '" + sig_->relation(rel).name + "'");
    std::uint64_t idx = 0;
    for (size_t i = 0; i < rad.size(); ++i) {
      if (tuple[i] < 0 || tuple[i] >= rad[i])
        throw ModelError("element " + std::to_string(tuple[i]) + " out of range for relation '" +
                         sig_->relation(rel).name + "'");
      idx = idx * static_cast<std::uint64_t>(rad[i]) + static_cast<std::uint64_t>(tuple[i]);
    }
    return idx;
  }

  std::vector<int> tuple_of(size_t rel, std::uint64_t index) const {
    const auto& rad = radix_[rel];
    std::vector<int> t(rad.size());
    for (size_t i = rad.size(); i-- > 0;) {
      t[i] = static_cast<int>(index % static_cast<std::uint64_t>(rad[i]));
      index /= static_cast<std::uint64_t>(rad[i]);
    }
    return t;
  }

  bool holds(size_t rel, std::span<const int> tuple) const { return bits_[rel][index_of(rel, tuple)] != 0; }
  bool holds_index(size_t rel, std::uint64_t index) const { return bits_[rel][index] != 0; }
  void set(size_t rel, std::span<const int> tuple, bool value) { bits_[rel][index_of(rel, tuple)] = value; }
  void set_index(size_t rel, std::uint64_t index, bool value) { bits_[rel][index] = value; }

  bool holds(const std::string& rel, std::initializer_list<int> tuple) const {
    return holds(sig_->relation_index(rel), std::span<const int>(tuple.begin(), tuple.size()));
  }
  void set(const std::string& rel, std::initializer_list<int> tuple, bool value = true) {
    set(sig_->relation_index(rel), std::span<const int>(tuple.begin(), tuple.size()), value);
  }

  // True tuples of a relation in lexicographic order.
  std::vector<std::vector<int>> facts(size_t rel) const {
    std::vector<std::vector<int>> out;
    for (std::uint64_t i = 0; i < bits_[rel].size(); ++i)
      if (bits_[rel][i]) out.push_back(tuple_of(rel, i));
    return out;
  }

  size_t true_count(size_t rel) const {
    size_t c = 0;
    for (auto b : bits_[rel]) c += b;
    return c;
  }

  friend bool operator==(const Structure& a, const Structure& b) {
    return *a.sig_ == *b.sig_ && a.sizes_ == b.sizes_ && a.bits_ == b.bits_;
  }

 private:
  SignaturePtr sig_;
  DomainSizes sizes_;
  std::vector<std::vector<std::int64_t>> radix_;
  std::vector<std::vector<std::uint8_t>> bits_;
};

}  // namespace freqnet

namespace freqnet {

struct GroundAtom {
  size_t rel = 0;
  std::vector<int> args;

  friend bool operator==(const GroundAtom&, const GroundAtom&) = default;
  friend auto operator<=>(const GroundAtom&, const GroundAtom&) = default;
};

struct GroundLiteral {
  GroundAtom atom;
  bool positive = true;

  friend bool operator==(const GroundLiteral&, const GroundLiteral&) = default;
};

}  // namespace freqnet
