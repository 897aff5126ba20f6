#pragma once

#include <cctype>
#include <charconv>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "freqnet/errors.hpp"
#include "freqnet/formula.hpp"
#include "freqnet/signature.hpp"

namespace freqnet {

// Syntax or scoping error with a 1-based source position.
class SourceError : public ModelError {
 public:
  SourceError(int line, int column, const std::string& message, std::vector<std::string> expected = {})
      : ModelError(format(line, column, message, expected)),
        line_(line),
        column_(column),
        message_(message),
        expected_(std::move(expected)) {}

  int line() const { return line_; }
  int column() const { return column_; }
  const std::string& message() const { return message_; }
  const std::vector<std::string>& expected() const { return expected_; }

 private:
  static std::string format(int line, int column, const std::string& message, const std::vector<std::string>& exp) {
    std::string s = std::to_string(line) + ":" + std::to_string(column) + ": " + message;
    if (!exp.empty()) {
      s += " (expected ";
      for (size_t i = 0; i < exp.size(); ++i) s += (i ? ", '" : "'") + exp[i] + "'";
      s += ")";
    }
    return s;
  }

  int line_;
  int column_;
  std::string message_;
  std::vector<std::string> expected_;
};

struct Token {
  enum class Kind { Ident, Number, Punct, End };
  Kind kind = Kind::End;
  std::string text;
  int line = 1;
  int col = 1;
};

inline std::vector<Token> tokenize(std::string_view src) {
  std::vector<Token> out;
  int line = 1, col = 1;
  size_t i = 0;
  auto advance = [&](size_t n) {
    for (size_t k = 0; k < n && i < src.size(); ++k, ++i) {
      if (src[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
  };
  auto is_digit = [&](size_t k) { return k < src.size() && std::isdigit(static_cast<unsigned char>(src[k])); };
  while (i < src.size()) {
    const char c = src[i];
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      advance(1);
      continue;
    }
    if (c == '#' || (c == '/' && i + 1 < src.size() && src[i + 1] == '/')) {
      while (i < src.size() && src[i] != '\n') advance(1);
      continue;
    }
    Token t;
    t.line = line;
    t.col = col;
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t j = i;
      while (j < src.size() && (std::isalnum(static_cast<unsigned char>(src[j])) || src[j] == '_')) ++j;
      t.kind = Token::Kind::Ident;
      t.text = std::string(src.substr(i, j - i));
      advance(j - i);
    } else if (std::isdigit(static_cast<unsigned char>(c)) || (c == '-' && is_digit(i + 1)) ||
               (c == '.' && is_digit(i + 1) && (out.empty() || out.back().kind != Token::Kind::Ident))) {
      size_t j = i;
      if (src[j] == '-') ++j;
      while (is_digit(j)) ++j;
      if (j < src.size() && src[j] == '.' && is_digit(j + 1)) {
        ++j;
        while (is_digit(j)) ++j;
      }
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (is_digit(k)) {
          j = k;
          while (is_digit(j)) ++j;
        }
      }
      t.kind = Token::Kind::Number;
      t.text = std::string(src.substr(i, j - i));
      advance(j - i);
    } else {
      static const char* two[] = {"=>", "->", ">="};
      t.kind = Token::Kind::Punct;
      for (const char* p : two)
        if (src.substr(i, 2) == p) t.text = p;
      if (t.text.empty()) {
        if (std::string_view("()[]{},;:.=~&|+").find(c) == std::string_view::npos) {
          std::string shown = std::isprint(static_cast<unsigned char>(c)) ? std::string(1, c)
                                                                          : "\\x" + std::to_string(int(c) & 0xff);
          throw SourceError(line, col, "unexpected character '" + shown + "'");
        }
        t.text = std::string(1, c);
      }
      advance(t.text.size());
    }
    out.push_back(std::move(t));
  }
  Token end;
  end.line = line;
  end.col = col;
  out.push_back(end);
  return out;
}

// Recursive-descent parser for formulas; the model and structure readers
// build on its token cursor.
class FormulaParser {
 public:
  FormulaParser(std::vector<Token> tokens, const Signature& sig) : toks_(std::move(tokens)), sig_(&sig) {}

  // Variables visible as free variables of the next formula. When `open` is
  // true unknown free variables are admitted and their sorts inferred.
  void set_free_scope(std::vector<Variable> vars, bool open) {
    free_scope_ = std::move(vars);
    open_free_ = open;
  }
  const std::vector<Variable>& free_scope() const { return free_scope_; }

  const Token& peek(size_t k = 0) const { return toks_[std::min(pos_ + k, toks_.size() - 1)]; }
  const Token& next() {
    const Token& t = peek();
    if (pos_ < toks_.size() - 1) ++pos_;
    return t;
  }
  bool at_end() const { return peek().kind == Token::Kind::End; }
  bool is(std::string_view text) const {
    return peek().kind != Token::Kind::End && peek().kind != Token::Kind::Number && peek().text == text;
  }
  bool accept(std::string_view text) {
    if (!is(text)) return false;
    next();
    return true;
  }
  void expect(std::string_view text) {
    if (!accept(text)) fail("unexpected " + describe(peek()), {std::string(text)});
  }
  std::string expect_ident(const std::string& what) {
    if (peek().kind != Token::Kind::Ident) fail("unexpected " + describe(peek()), {what});
    return next().text;
  }
  Rational expect_number(const std::string& what) {
    if (peek().kind != Token::Kind::Number) fail("unexpected " + describe(peek()), {what});
    const Token& t = next();
    try {
      return Rational::parse_decimal(t.text);
    } catch (const ModelError& e) {
      throw SourceError(t.line, t.col, e.what());
    }
  }
  [[noreturn]] void fail(const std::string& message, std::vector<std::string> expected = {}) const {
    throw SourceError(peek().line, peek().col, message, std::move(expected));
  }
  [[noreturn]] static void fail_at(const Token& t, const std::string& message) {
    throw SourceError(t.line, t.col, message);
  }

  static std::string describe(const Token& t) {
    switch (t.kind) {
      case Token::Kind::End: return "end of input";
      case Token::Kind::Number: return "number '" + t.text + "'";
      default: return "'" + t.text + "'";
    }
  }

  Formula parse_formula() {
    frames_.clear();
    Formula f = formula(false);
    return f;
  }

  // freq( phi (| psi)? (; binds)? ) as used by features.
  struct FreqTerm {
    Formula phi;
    Formula psi = Formula::top();
    std::vector<Variable> ys;
    Token at;
  };

  FreqTerm parse_freq_term() {
    frames_.clear();
    return freq_term();
  }

 private:
  struct Occurrence {
    std::string name;
    std::string sort;
    Token at;
  };
  struct Frame {
    bool is_freq = false;
    Variable var;                          // quantifier frame
    std::vector<Occurrence> pending;       // frequency frame
  };

  struct DepthGuard {
    explicit DepthGuard(FormulaParser& p) : p_(p) {
      if (++p_.depth_ > 400) p_.fail("formula nested too deeply");
    }
    ~DepthGuard() { --p_.depth_; }
    FormulaParser& p_;
  };

  // Resolves a variable occurrence starting at frame index `from` (exclusive upper bound).
  void resolve(const Occurrence& occ, size_t from) {
    for (size_t k = from; k-- > 0;) {
      Frame& fr = frames_[k];
      if (fr.is_freq) {
        fr.pending.push_back(occ);
        return;
      }
      if (fr.var.name == occ.name) {
        if (fr.var.sort != occ.sort)
          fail_at(occ.at, "variable '" + occ.name + "' has sort '" + fr.var.sort + "' but is used at sort '" +
                              occ.sort + "'");
        return;
      }
    }
    for (const auto& v : free_scope_)
      if (v.name == occ.name) {
        if (v.sort != occ.sort)
          fail_at(occ.at, "variable '" + occ.name + "' has sort '" + v.sort + "' but is used at sort '" +
                              occ.sort + "'");
        return;
      }
    if (!open_free_) fail_at(occ.at, "variable '" + occ.name + "' is not in scope");
    free_scope_.push_back({occ.name, occ.sort});
  }

  Formula formula(bool no_bar) {
    DepthGuard g(*this);
    if (is("forall") || is("exists")) return quantified(no_bar);
    return implication(no_bar);
  }

  Formula quantified(bool no_bar) {
    const bool universal = next().text == "forall";
    std::vector<Variable> vars;
    do {
      const Token& at = peek();
      std::string name = expect_ident("variable");
      std::string sort;
      if (accept(":")) {
        const Token& st = peek();
        sort = expect_ident("sort");
        if (!sig_->has_sort(sort)) fail_at(st, "unknown sort '" + sort + "'");
      } else if (sig_->sorts().size() == 1) {
        sort = sig_->sorts()[0];
      } else {
        fail_at(at, "quantified variable '" + name + "' needs a sort annotation");
      }
      vars.push_back({name, sort});
    } while (accept(","));
    expect(".");
    for (const auto& v : vars) frames_.push_back({false, v, {}});
    Formula body = formula(no_bar);
    for (size_t i = vars.size(); i-- > 0;) {
      frames_.pop_back();
      body = universal ? Formula::forall(vars[i], body) : Formula::exists(vars[i], body);
    }
    return body;
  }

  Formula implication(bool no_bar) {
    Formula lhs = disjunction(no_bar);
    if (accept("->")) {
      DepthGuard g(*this);
      Formula rhs = is("forall") || is("exists") ? quantified(no_bar) : implication(no_bar);
      return Formula::implies(lhs, rhs);
    }
    return lhs;
  }

  Formula disjunction(bool no_bar) {
    Formula lhs = conjunction(no_bar);
    while (!no_bar && is("|")) {
      next();
      lhs = Formula::disj(lhs, conjunction(no_bar));
    }
    return lhs;
  }

  Formula conjunction(bool no_bar) {
    Formula lhs = unary(no_bar);
    while (accept("&")) lhs = Formula::conj(lhs, unary(no_bar));
    return lhs;
  }

  Formula unary(bool no_bar) {
    DepthGuard g(*this);
    if (accept("~")) return Formula::negation(unary(no_bar));
    return primary(no_bar);
  }

  Formula primary(bool no_bar) {
    const Token& t = peek();
    if (is("(")) {
      next();
      Formula f = formula(false);
      expect(")");
      return f;
    }
    if (is("forall") || is("exists")) return quantified(no_bar);
    if (is("true")) {
      next();
      return Formula::top();
    }
    if (is("false")) {
      next();
      return Formula::bottom();
    }
    if (is("freq") || t.kind == Token::Kind::Number) return comparison();
    if (t.kind == Token::Kind::Ident) return atom();
    fail("unexpected " + describe(t), {"formula"});
  }

  Formula atom() {
    const Token at = next();
    auto r = sig_->find_relation(at.text);
    if (!r) fail_at(at, "unknown relation '" + at.text + "'");
    const auto& rel = sig_->relation(*r);
    expect("(");
    std::vector<Term> terms;
    if (!is(")")) {
      do {
        const Token& tt = peek();
        if (terms.size() >= rel.arity())
          fail_at(tt, "relation '" + rel.name + "' expects " + std::to_string(rel.arity()) + " arguments");
        const std::string& sort = rel.sorts[terms.size()];
        if (tt.kind == Token::Kind::Number) {
          int v = 0;
          auto [p, ec] = std::from_chars(tt.text.data(), tt.text.data() + tt.text.size(), v);
          if (ec != std::errc() || p != tt.text.data() + tt.text.size() || v < 0)
            fail_at(tt, "constant must be a non-negative integer");
          next();
          terms.push_back(Term::constant(v, sort));
        } else {
          Token vt = peek();
          std::string name = expect_ident("term");
          resolve({name, sort, vt}, frames_.size());
          terms.push_back(Term::var(name, sort));
        }
      } while (accept(","));
    }
    if (terms.size() != rel.arity())
      fail("relation '" + rel.name + "' expects " + std::to_string(rel.arity()) + " arguments");
    expect(")");
    return Formula::atom(rel.name, std::move(terms));
  }

  FreqTerm freq_term() {
    FreqTerm ft;
    ft.at = peek();
    expect("freq");
    expect("(");
    frames_.push_back({true, {}, {}});
    const size_t frame = frames_.size() - 1;
    ft.phi = formula(true);
    if (accept("|")) ft.psi = formula(false);
    if (accept(";")) {
      if (!is(")")) {
        do {
          const Token& vt = peek();
          std::string name = expect_ident("variable");
          std::string sort;
          if (accept(":")) {
            const Token& st = peek();
            sort = expect_ident("sort");
            if (!sig_->has_sort(sort)) fail_at(st, "unknown sort '" + sort + "'");
          }
          for (const auto& y : ft.ys)
            if (y.name == name) fail_at(vt, "repeated frequency variable '" + name + "'");
          ft.ys.push_back({name, sort});
        } while (accept(","));
      }
    }
    expect(")");
    std::vector<Occurrence> pending = std::move(frames_[frame].pending);
    frames_.pop_back();
    // Bare binders take the sort of their first use, or the only sort.
    for (auto& y : ft.ys) {
      if (!y.sort.empty()) continue;
      for (const auto& o : pending)
        if (o.name == y.name) {
          y.sort = o.sort;
          break;
        }
      if (y.sort.empty()) {
        if (sig_->sorts().size() != 1) fail_at(ft.at, "cannot infer the sort of frequency variable '" + y.name + "'");
        y.sort = sig_->sorts()[0];
      }
    }
    for (const auto& o : pending) {
      bool bound = false;
      for (const auto& y : ft.ys)
        if (y.name == o.name) {
          bound = true;
          if (y.sort != o.sort)
            fail_at(o.at, "variable '" + o.name + "' has sort '" + y.sort + "' but is used at sort '" + o.sort + "'");
        }
      if (!bound) resolve(o, frames_.size());
    }
    return ft;
  }

  Formula comparison() {
    const Token at = peek();
    auto make = [&](auto&& build) -> Formula {
      try {
        return build();
      } catch (const SourceError&) {
        throw;
      } catch (const ModelError& e) {
        fail_at(at, e.what());
      }
    };
    if (peek().kind == Token::Kind::Number) {
      Rational r = expect_number("number");
      if (accept("+")) {
        FreqTerm lhs = freq_term();
        expect(">=");
        FreqTerm rhs = freq_term();
        check_same_binders(lhs, rhs);
        return make([&] {
          return Formula::freq_cmp(OffsetSide::Left, r, lhs.phi, lhs.psi, rhs.phi, rhs.psi, lhs.ys);
        });
      }
      expect(">=");
      FreqTerm rhs = freq_term();
      return make([&] { return Formula::freq_at_most(rhs.phi, rhs.psi, rhs.ys, r); });
    }
    FreqTerm lhs = freq_term();
    expect(">=");
    if (peek().kind == Token::Kind::Number) {
      Rational r = expect_number("number");
      return make([&] { return Formula::freq_at_least(lhs.phi, lhs.psi, lhs.ys, r); });
    }
    FreqTerm rhs = freq_term();
    check_same_binders(lhs, rhs);
    Rational r;
    if (accept("+")) r = expect_number("number");
    return make([&] { return Formula::freq_cmp(OffsetSide::Right, r, lhs.phi, lhs.psi, rhs.phi, rhs.psi, lhs.ys); });
  }

  static void check_same_binders(const FreqTerm& a, const FreqTerm& b) {
    if (a.ys != b.ys) fail_at(b.at, "both frequency terms of a comparison must bind the same variables");
  }

  std::vector<Token> toks_;
  size_t pos_ = 0;
  const Signature* sig_;
  std::vector<Frame> frames_;
  std::vector<Variable> free_scope_;
  bool open_free_ = true;
  int depth_ = 0;
};

// Parses a standalone formula; free variables take the sorts of their positions.
inline Formula parse_formula(std::string_view text, const Signature& sig) {
  FormulaParser p(tokenize(text), sig);
  Formula f = p.parse_formula();
  if (!p.at_end()) p.fail("unexpected " + FormulaParser::describe(p.peek()), {"end of input"});
  return f;
}

// Shortest decimal that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

namespace detail {

inline int precedence(const Formula& f) {
  switch (f.kind()) {
    case FormulaKind::Forall:
    case FormulaKind::Exists: return 0;
    case FormulaKind::Implies: return 1;
    case FormulaKind::Or: return 2;
    case FormulaKind::And: return 3;
    case FormulaKind::Not: return 4;
    default: return 5;
  }
}

inline void print(const Formula& f, int min_prec, std::string& out);

inline void print_binders(const std::vector<Variable>& ys, std::string& out) {
  for (size_t i = 0; i < ys.size(); ++i) out += (i ? ", " : "") + ys[i].name + ":" + ys[i].sort;
}

inline void print_freq(const Formula& phi, const Formula& psi, const std::vector<Variable>& ys, std::string& out) {
  out += "freq(";
  print(phi, 3, out);
  if (!psi.is_true()) {
    out += " | ";
    print(psi, 0, out);
  }
  if (!ys.empty()) {
    out += " ; ";
    print_binders(ys, out);
  }
  out += ")";
}

inline void print(const Formula& f, int min_prec, std::string& out) {
  const int prec = precedence(f);
  const bool parens = prec < min_prec;
  if (parens) out += "(";
  switch (f.kind()) {
    case FormulaKind::True: out += "true"; break;
    case FormulaKind::False: out += "false"; break;
    case FormulaKind::Atom:
      out += f.relation() + "(";
      for (size_t i = 0; i < f.terms().size(); ++i) {
        const auto& t = f.terms()[i];
        out += (i ? ", " : "") + (t.is_var() ? t.name : std::to_string(t.value));
      }
      out += ")";
      break;
    case FormulaKind::Not:
      out += "~";
      print(f.child(0), 4, out);
      break;
    case FormulaKind::And:
      print(f.child(0), 3, out);
      out += " & ";
      print(f.child(1), 4, out);
      break;
    case FormulaKind::Or:
      print(f.child(0), 2, out);
      out += " | ";
      print(f.child(1), 3, out);
      break;
    case FormulaKind::Implies:
      print(f.child(0), 2, out);
      out += " -> ";
      print(f.child(1), 1, out);
      break;
    case FormulaKind::Forall:
    case FormulaKind::Exists:
      out += f.kind() == FormulaKind::Forall ? "forall " : "exists ";
      out += f.bound().name + ":" + f.bound().sort + ". ";
      print(f.child(0), 0, out);
      break;
    case FormulaKind::FreqCmp: {
      const auto& k = f.children();
      const std::string r = f.offset().to_string();
      if (f.side() == OffsetSide::Right && k[2].is_false() && k[3].is_true()) {
        print_freq(k[0], k[1], f.freq_vars(), out);
        out += " >= " + r;
      } else if (f.side() == OffsetSide::Left && k[0].is_false() && k[1].is_true()) {
        out += r + " >= ";
        print_freq(k[2], k[3], f.freq_vars(), out);
      } else if (f.side() == OffsetSide::Left) {
        out += r + " + ";
        print_freq(k[0], k[1], f.freq_vars(), out);
        out += " >= ";
        print_freq(k[2], k[3], f.freq_vars(), out);
      } else {
        print_freq(k[0], k[1], f.freq_vars(), out);
        out += " >= ";
        print_freq(k[2], k[3], f.freq_vars(), out);
        if (f.offset().num != 0) out += " + " + r;
      }
      break;
    }
  }
  if (parens) out += ")";
}

}  // namespace detail

inline std::string print_formula(const Formula& f) {
  std::string out;
  detail::print(f, 0, out);
  return out;
}

}  // namespace freqnet
