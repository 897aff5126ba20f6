#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "freqnet/functions.hpp"
#include "freqnet/model.hpp"
#include "freqnet/syntax.hpp"

namespace freqnet {

namespace detail {

inline const std::set<std::string>& reserved_words() {
  static const std::set<std::string> words = {"forall", "exists", "freq", "true", "false", "sort", "relation",
                                              "node", "case", "feature", "function", "parents", "domain", "fact"};
  return words;
}

inline std::vector<double> parse_weight_list(FormulaParser& p) {
  std::vector<double> w;
  p.expect("w");
  p.expect("=");
  p.expect("[");
  if (!p.is("]")) {
    do w.push_back(p.expect_number("weight").value());
    while (p.accept(","));
  }
  p.expect("]");
  return w;
}

inline FunctionFamily parse_function(FormulaParser& p, size_t arity) {
  const Token at = p.peek();
  const std::string kind = p.expect_ident("function kind");
  p.expect("(");
  FunctionFamily fam;
  try {
    if (kind == "constant") {
      fam = FunctionFamily::constant(p.expect_number("probability").value(), arity);
    } else if (kind == "linear" || kind == "logistic" || kind == "probit" || kind == "cloglog") {
      auto w = parse_weight_list(p);
      p.expect(",");
      p.expect("c");
      p.expect("=");
      double c = p.expect_number("intercept").value();
      FamilyKind k = kind == "linear"     ? FamilyKind::Linear
                     : kind == "logistic" ? FamilyKind::Logistic
                     : kind == "probit"   ? FamilyKind::Probit
                                          : FamilyKind::Cloglog;
      if (w.size() != arity)
        FormulaParser::fail_at(at, kind + " has " + std::to_string(w.size()) + " weights but the node has " +
                                       std::to_string(arity) + " features");
      fam = FunctionFamily::affine(k, std::move(w), c);
    } else if (kind == "bump") {
      double v[3];
      const char* names[] = {"alpha", "beta", "p"};
      for (int i = 0; i < 3; ++i) {
        if (i) p.expect(",");
        p.expect(names[i]);
        p.expect("=");
        v[i] = p.expect_number(names[i]).value();
      }
      if (arity != 1) FormulaParser::fail_at(at, "bump takes exactly one feature");
      fam = FunctionFamily::bump(v[0], v[1], v[2]);
    } else if (kind == "table") {
      std::vector<double> values(size_t{1} << std::min<size_t>(arity, 20), -1.0);
      if (arity > 20) FormulaParser::fail_at(at, "table over too many features");
      size_t seen = 0;
      do {
        const Token& bt = p.peek();
        if (bt.kind != Token::Kind::Number || bt.text.size() != arity ||
            bt.text.find_first_not_of("01") != std::string::npos)
          p.fail("table key must be a pattern of " + std::to_string(arity) + " binary digits");
        size_t idx = 0;
        for (size_t i = 0; i < arity; ++i)
          if (bt.text[i] == '1') idx |= size_t{1} << i;
        p.next();
        p.expect("=>");
        if (values[idx] >= 0) FormulaParser::fail_at(bt, "duplicate table key '" + bt.text + "'");
        values[idx] = p.expect_number("probability").value();
        ++seen;
      } while (p.accept(","));
      if (seen != values.size()) FormulaParser::fail_at(at, "table must list all " + std::to_string(values.size()) + " patterns");
      fam = FunctionFamily::table(arity, std::move(values));
    } else {
      FormulaParser::fail_at(at, "unknown function kind '" + kind + "'");
    }
  } catch (const SourceError&) {
    throw;
  } catch (const ModelError& e) {
    FormulaParser::fail_at(at, e.what());
  }
  p.expect(")");
  return fam;
}

}  // namespace detail

// Reads a `.cplm` model. Declarations must precede their use.
inline Model parse_model(std::string_view text) {
  auto tokens = tokenize(text);
  auto sig = std::make_shared<Signature>();
  struct PendingNode {
    Token at;
    size_t rel;
    NodeSpec spec;
  };
  std::vector<PendingNode> nodes;
  std::set<size_t> defined;
  FormulaParser p(tokens, *sig);

  auto check_name = [&](const Token& t) {
    if (detail::reserved_words().count(t.text)) FormulaParser::fail_at(t, "'" + t.text + "' is a reserved word");
  };

  while (!p.at_end()) {
    const Token at = p.peek();
    if (p.accept("sort")) {
      const Token nt = p.peek();
      std::string name = p.expect_ident("sort name");
      check_name(nt);
      if (sig->has_sort(name)) FormulaParser::fail_at(nt, "duplicate sort '" + name + "'");
      sig->add_sort(name);
      p.expect(";");
    } else if (p.accept("relation")) {
      const Token nt = p.peek();
      std::string name = p.expect_ident("relation name");
      check_name(nt);
      if (sig->find_relation(name)) FormulaParser::fail_at(nt, "duplicate relation '" + name + "'");
      p.expect("(");
      std::vector<std::string> sorts;
      if (!p.is(")")) {
        do {
          const Token st = p.peek();
          std::string s = p.expect_ident("sort");
          if (!sig->has_sort(s)) FormulaParser::fail_at(st, "undeclared sort '" + s + "'");
          sorts.push_back(s);
        } while (p.accept(","));
      }
      p.expect(")");
      p.expect(";");
      sig->add_relation(name, sorts);
    } else if (p.accept("node")) {
      const Token nt = p.peek();
      std::string name = p.expect_ident("relation name");
      auto r = sig->find_relation(name);
      if (!r) FormulaParser::fail_at(nt, "node for undeclared relation '" + name + "'");
      if (!defined.insert(*r).second) FormulaParser::fail_at(nt, "second node for relation '" + name + "'");
      const auto& rel = sig->relation(*r);
      NodeSpec spec;
      spec.args = default_args(rel);
      if (p.accept("(")) {
        spec.args.clear();
        if (!p.is(")")) {
          do {
            const Token vt = p.peek();
            std::string v = p.expect_ident("variable");
            if (spec.args.size() >= rel.arity())
              FormulaParser::fail_at(vt, "relation '" + name + "' has arity " + std::to_string(rel.arity()));
            for (const auto& a : spec.args)
              if (a.name == v) FormulaParser::fail_at(vt, "repeated argument variable '" + v + "'");
            spec.args.push_back({v, rel.sorts[spec.args.size()]});
          } while (p.accept(","));
        }
        if (spec.args.size() != rel.arity())
          p.fail("relation '" + name + "' has arity " + std::to_string(rel.arity()));
        p.expect(")");
      }
      p.expect("{");
      if (p.accept("parents")) {
        p.expect(":");
        if (!p.is(";")) {
          do {
            const Token pt = p.peek();
            std::string parent = p.expect_ident("relation name");
            if (!sig->find_relation(parent)) FormulaParser::fail_at(pt, "unknown parent '" + parent + "'");
            spec.declared_parents.insert(parent);
          } while (p.accept(",") || p.peek().kind == Token::Kind::Ident);
        }
        p.expect(";");
      }
      if (p.is("case")) {
        spec.kind = NodeSpec::Kind::Partition;
        while (p.accept("case")) {
          p.set_free_scope(spec.args, false);
          Formula chi = p.parse_formula();
          p.expect("=>");
          const Token mt = p.peek();
          double mu = p.expect_number("probability").value();
          if (!(mu >= 0.0 && mu <= 1.0)) FormulaParser::fail_at(mt, "case probability must lie in [0,1]");
          p.expect(";");
          spec.cases.push_back({chi, mu});
        }
      } else {
        spec.kind = NodeSpec::Kind::Functional;
        std::set<std::string> feature_names;
        while (p.accept("feature")) {
          const Token ft = p.peek();
          Feature f;
          f.name = p.expect_ident("feature name");
          if (!feature_names.insert(f.name).second) FormulaParser::fail_at(ft, "duplicate feature '" + f.name + "'");
          p.expect("=");
          p.set_free_scope(spec.args, false);
          auto term = p.parse_freq_term();
          f.phi = term.phi;
          f.psi = term.psi;
          f.ys = term.ys;
          for (const auto& y : f.ys)
            for (const auto& a : spec.args)
              if (a.name == y.name) FormulaParser::fail_at(term.at, "feature binds the node argument '" + y.name + "'");
          p.expect(";");
          spec.features.push_back(std::move(f));
        }
        if (!p.is("function")) p.fail("unexpected " + FormulaParser::describe(p.peek()), {"case", "feature", "function"});
        p.next();
        p.expect(":");
        spec.function = detail::parse_function(p, spec.features.size());
        p.expect(";");
      }
      p.expect("}");
      nodes.push_back({at, *r, std::move(spec)});
    } else {
      p.fail("unexpected " + FormulaParser::describe(p.peek()), {"sort", "relation", "node"});
    }
  }

  Model m(sig);
  for (auto& n : nodes) m.set_node(n.rel, std::move(n.spec));
  for (size_t r = 0; r < sig->relations().size(); ++r)
    if (!defined.count(r)) throw ModelError("relation '" + sig->relation(r).name + "' has no node");
  auto diags = m.validate();
  if (!diags.empty()) {
    for (const auto& n : nodes)
      if (diags.front().find("'" + sig->relation(n.rel).name + "'") != std::string::npos)
        throw SourceError(n.at.line, n.at.col, diags.front());
    throw ModelError(diags.front());
  }
  return m;
}

inline std::string print_function(const FunctionFamily& f) {
  const auto& p = f.params();
  std::string out = family_name(f.kind());
  out += "(";
  switch (f.kind()) {
    case FamilyKind::Constant:
      out += format_double(p[0]);
      break;
    case FamilyKind::Bump:
      out += "alpha=" + format_double(p[0]) + ", beta=" + format_double(p[1]) + ", p=" + format_double(p[2]);
      break;
    case FamilyKind::Table:
      for (size_t idx = 0; idx < p.size(); ++idx) {
        std::string key;
        for (size_t i = 0; i < f.arity(); ++i) key += ((idx >> i) & 1U) ? '1' : '0';
        out += (idx ? ", " : "") + key + " => " + format_double(p[idx]);
      }
      break;
    default:
      out += "w=[";
      for (size_t i = 0; i < f.arity(); ++i) out += (i ? ", " : "") + format_double(p[i]);
      out += "], c=" + format_double(p[f.arity()]);
  }
  return out + ")";
}

inline std::string print_model(const Model& m) {
  const auto& sig = m.signature();
  std::string out;
  for (const auto& s : sig.sorts()) out += "sort " + s + ";\n";
  for (const auto& r : sig.relations()) {
    out += "relation " + r.name + "(";
    for (size_t i = 0; i < r.sorts.size(); ++i) out += (i ? ", " : "") + r.sorts[i];
    out += ");\n";
  }
  for (size_t r = 0; r < sig.relations().size(); ++r) {
    const auto& n = m.node(r);
    out += "\nnode " + sig.relation(r).name;
    if (!n.args.empty()) {
      out += "(";
      for (size_t i = 0; i < n.args.size(); ++i) out += (i ? ", " : "") + n.args[i].name;
      out += ")";
    }
    out += " {\n";
    if (!n.declared_parents.empty()) {
      out += "  parents: ";
      size_t i = 0;
      for (const auto& p : n.declared_parents) out += (i++ ? ", " : "") + p;
      out += ";\n";
    }
    if (n.is_partition()) {
      for (const auto& c : n.cases) out += "  case " + print_formula(c.chi) + " => " + format_double(c.mu) + ";\n";
    } else {
      for (const auto& f : n.features) {
        out += "  feature " + f.name + " = ";
        std::string term;
        detail::print_freq(f.phi, f.psi, f.ys, term);
        out += term + ";\n";
      }
      out += "  function: " + print_function(n.function) + ";\n";
    }
    out += "}\n";
  }
  return out;
}

// Reads a `.cpls` structure over a known signature.
inline Structure parse_structure(std::string_view text, SignaturePtr sig) {
  FormulaParser p(tokenize(text), *sig);
  DomainSizes sizes;
  struct Fact {
    Token at;
    size_t rel;
    std::vector<int> args;
  };
  std::vector<Fact> facts;
  auto parse_int = [&](const std::string& what) {
    const Token t = p.peek();
    if (t.kind != Token::Kind::Number || t.text.find_first_not_of("0123456789") != std::string::npos)
      p.fail("unexpected " + FormulaParser::describe(t), {what});
    p.next();
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || ptr != t.text.data() + t.text.size() || v > (std::int64_t{1} << 30))
      FormulaParser::fail_at(t, "integer out of range");
    return v;
  };
  while (!p.at_end()) {
    if (p.accept("domain")) {
      const Token st = p.peek();
      std::string sort = p.expect_ident("sort");
      if (!sig->has_sort(sort)) FormulaParser::fail_at(st, "unknown sort '" + sort + "'");
      if (sizes.contains(sort)) FormulaParser::fail_at(st, "duplicate domain for sort '" + sort + "'");
      p.expect("=");
      const Token nt = p.peek();
      auto n = parse_int("domain size");
      if (n < 1) FormulaParser::fail_at(nt, "domain size must be at least 1");
      sizes.set(sort, n);
      p.expect(";");
    } else if (p.accept("fact")) {
      const Token rt = p.peek();
      std::string name = p.expect_ident("relation");
      auto r = sig->find_relation(name);
      if (!r) FormulaParser::fail_at(rt, "unknown relation '" + name + "'");
      p.expect("(");
      std::vector<int> args;
      if (!p.is(")")) {
        do args.push_back(static_cast<int>(parse_int("element")));
        while (p.accept(","));
      }
      p.expect(")");
      p.expect(";");
      if (args.size() != sig->relation(*r).arity())
        FormulaParser::fail_at(rt, "relation '" + name + "' expects " + std::to_string(sig->relation(*r).arity()) +
                                       " arguments");
      facts.push_back({rt, *r, std::move(args)});
    } else {
      p.fail("unexpected " + FormulaParser::describe(p.peek()), {"domain", "fact"});
    }
  }
  for (const auto& s : sig->sorts())
    if (!sizes.contains(s)) throw SourceError(p.peek().line, p.peek().col, "no domain given for sort '" + s + "'");
  Structure st(sig, sizes);
  for (const auto& f : facts) {
    try {
      st.set(f.rel, f.args, true);
    } catch (const ModelError& e) {
      FormulaParser::fail_at(f.at, e.what());
    }
  }
  return st;
}

inline std::string print_structure(const Structure& s) {
  const auto& sig = s.signature();
  std::string out;
  for (const auto& sort : sig.sorts()) out += "domain " + sort + " = " + std::to_string(s.size_of(sort)) + ";\n";
  for (size_t r = 0; r < sig.relations().size(); ++r)
    for (const auto& t : s.facts(r)) {
      out += "fact " + sig.relation(r).name + "(";
      for (size_t i = 0; i < t.size(); ++i) out += (i ? ", " : "") + std::to_string(t[i]);
      out += ");\n";
    }
  return out;
}

// Comma-separated ground literals such as "R(0), ~Q(1)".
inline std::vector<GroundLiteral> parse_literals(std::string_view text, const Signature& sig) {
  FormulaParser p(tokenize(text), sig);
  std::vector<GroundLiteral> out;
  if (p.at_end()) return out;
  do {
    GroundLiteral lit;
    lit.positive = !p.accept("~");
    const Token rt = p.peek();
    std::string name = p.expect_ident("relation");
    auto r = sig.find_relation(name);
    if (!r) FormulaParser::fail_at(rt, "unknown relation '" + name + "'");
    lit.atom.rel = *r;
    p.expect("(");
    if (!p.is(")")) {
      do {
        const Token t = p.peek();
        if (t.kind != Token::Kind::Number || t.text.find_first_not_of("0123456789") != std::string::npos ||
            t.text.size() > 9)
          p.fail("unexpected " + FormulaParser::describe(t), {"element"});
        p.next();
        lit.atom.args.push_back(std::stoi(t.text));
      } while (p.accept(","));
    }
    p.expect(")");
    if (lit.atom.args.size() != sig.relation(*r).arity())
      FormulaParser::fail_at(rt, "relation '" + name + "' expects " + std::to_string(sig.relation(*r).arity()) +
                                     " arguments");
    out.push_back(std::move(lit));
  } while (p.accept(","));
  if (!p.at_end()) p.fail("unexpected " + FormulaParser::describe(p.peek()), {",", "end of input"});
  return out;
}

inline std::string print_literal(const GroundLiteral& l, const Signature& sig) {
  std::string out = (l.positive ? "" : "~") + sig.relation(l.atom.rel).name + "(";
  for (size_t i = 0; i < l.atom.args.size(); ++i) out += (i ? ", " : "") + std::to_string(l.atom.args[i]);
  return out + ")";
}

}  // namespace freqnet
