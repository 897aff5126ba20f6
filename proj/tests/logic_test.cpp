#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <numeric>
#include <set>

#include "freqnet/diagram.hpp"
#include "freqnet/eval.hpp"
#include "freqnet/rng.hpp"
#include "freqnet/syntax.hpp"

using namespace freqnet;

namespace {

SignaturePtr unary_sig() {
  auto s = std::make_shared<Signature>();
  s->add_sort("person");
  s->add_relation("Q", {"person"});
  s->add_relation("P", {"person"});
  s->add_relation("E", {"person", "person"});
  return s;
}

Structure five_with_q01() {
  Structure s(unary_sig(), DomainSizes{{"person", 5}});
  s.set("Q", {0});
  s.set("Q", {1});
  return s;
}

const Variable y{"y", "person"};
const Variable x{"x", "person"};

Formula Q(const std::string& v) { return Formula::atom("Q", {Term::var(v, "person")}); }
Formula P(const std::string& v) { return Formula::atom("P", {Term::var(v, "person")}); }
Formula E(const std::string& a, const std::string& b) {
  return Formula::atom("E", {Term::var(a, "person"), Term::var(b, "person")});
}

}  // namespace

TEST(Evaluate, UnconditionalFrequencyThreshold) {
  auto s = five_with_q01();
  auto f = Formula::freq_at_least(Q("y"), Formula::top(), {y}, Rational::parse_decimal("0.01"));
  EXPECT_TRUE(evaluate(s, {}, f));
  auto g = Formula::freq_at_least(Q("y"), Formula::top(), {y}, Rational::parse_decimal("0.4"));
  EXPECT_TRUE(evaluate(s, {}, g));
  auto h = Formula::freq_at_least(Q("y"), Formula::top(), {y}, Rational::parse_decimal("0.41"));
  EXPECT_FALSE(evaluate(s, {}, h));
}

TEST(Evaluate, ZeroDenominatorIsFalse) {
  auto s = five_with_q01();
  auto f = Formula::freq_at_least(Q("y"), Formula::bottom(), {y}, Rational(0, 1));
  EXPECT_FALSE(evaluate(s, {}, f));
  // P is empty, so conditioning on it also yields false.
  auto g = Formula::freq_at_least(Q("y"), P("y"), {y}, Rational(0, 1));
  EXPECT_FALSE(evaluate(s, {}, g));
  auto h = Formula::freq_at_most(Q("y"), P("y"), {y}, Rational(1, 1));
  EXPECT_FALSE(evaluate(s, {}, h));
}

TEST(Evaluate, ContradictionUnderExistsIsFalse) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Structure s(unary_sig(), DomainSizes{{"person", 1 + static_cast<int>(rng.below(5))}});
    for (int i = 0; i < s.size_of("person"); ++i) s.set("Q", {i}, rng.bernoulli(0.5));
    EXPECT_FALSE(evaluate(s, {}, Formula::exists(y, Formula::conj(Q("y"), Formula::negation(Q("y"))))));
  }
}

TEST(Evaluate, UnboundAndSortErrors) {
  auto s = five_with_q01();
  EXPECT_THROW(evaluate(s, {}, Q("x")), ModelError);
  auto bad = Formula::atom("Q", {Term::var("x", "place")});
  EXPECT_THROW(evaluate(s, VarBinding{{Variable{"x", "place"}, 0}}, bad), ModelError);
  EXPECT_THROW(evaluate(s, VarBinding{{x, 7}}, Q("x")), ModelError);
}

TEST(Count, Examples) {
  auto s = five_with_q01();
  EXPECT_EQ(count(s, {}, Q("y"), {y}), 2);
  EXPECT_EQ(count(s, {}, Formula::top(), {Variable{"y1", "person"}, Variable{"y2", "person"}}), 25);

  auto two = std::make_shared<Signature>();
  two->add_sort("a");
  two->add_sort("b");
  Structure t(two, DomainSizes{{"a", 3}, {"b", 4}});
  EXPECT_EQ(count(t, {}, Formula::top(), {Variable{"u", "a"}, Variable{"v", "b"}}), 12);
}

TEST(Count, ComplementSumsToProduct) {
  Rng rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(5));
    Structure s(unary_sig(), DomainSizes{{"person", n}});
    for (int i = 0; i < n; ++i) {
      s.set("Q", {i}, rng.bernoulli(0.4));
      s.set("P", {i}, rng.bernoulli(0.6));
      for (int j = 0; j < n; ++j) s.set("E", {i, j}, rng.bernoulli(0.5));
    }
    Formula f = Formula::disj(Formula::conj(Q("a"), E("a", "b")), Formula::negation(P("b")));
    std::vector<Variable> ys{{"a", "person"}, {"b", "person"}};
    EXPECT_EQ(count(s, {}, f, ys) + count(s, {}, Formula::negation(f), ys), n * n);
  }
}

TEST(Frequency, Examples) {
  Structure s(unary_sig(), DomainSizes{{"person", 5}});
  s.set("Q", {0});
  s.set("Q", {1});
  s.set("P", {0});
  s.set("P", {2});
  EXPECT_EQ(frequency(s, {}, Q("x"), P("x"), {x}), Rational(1, 2));
  EXPECT_FALSE(frequency(s, {}, Q("x"), Formula::bottom(), {x}).has_value());
  EXPECT_EQ(frequency(s, {}, P("x"), P("x"), {x}), Rational(1, 1));
}

TEST(Frequency, ConditionalWithBoundOuterVariable) {
  Structure s(unary_sig(), DomainSizes{{"person", 4}});
  s.set("E", {0, 1});
  s.set("E", {0, 2});
  s.set("Q", {1});
  // ||Q(y) | E(x,y)||_y at x = 0 is 1/2.
  EXPECT_EQ(frequency(s, VarBinding{{x, 0}}, Q("y"), E("x", "y"), {y}), Rational(1, 2));
  EXPECT_FALSE(frequency(s, VarBinding{{x, 3}}, Q("y"), E("x", "y"), {y}).has_value());
}

TEST(Frequency, IsomorphismInvariance) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(4));
    Structure s(unary_sig(), DomainSizes{{"person", n}});
    for (int i = 0; i < n; ++i) {
      s.set("Q", {i}, rng.bernoulli(0.5));
      for (int j = 0; j < n; ++j) s.set("E", {i, j}, rng.bernoulli(0.5));
    }
    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) std::swap(perm[static_cast<size_t>(i)], perm[rng.below(static_cast<std::uint64_t>(i + 1))]);
    Structure t(unary_sig(), DomainSizes{{"person", n}});
    for (int i = 0; i < n; ++i) {
      t.set("Q", {perm[static_cast<size_t>(i)]}, s.holds("Q", {i}));
      for (int j = 0; j < n; ++j) t.set("E", {perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]}, s.holds("E", {i, j}));
    }
    for (int a = 0; a < n; ++a) {
      auto f1 = frequency(s, VarBinding{{x, a}}, Q("y"), E("x", "y"), {y});
      auto f2 = frequency(t, VarBinding{{x, perm[static_cast<size_t>(a)]}}, Q("y"), E("x", "y"), {y});
      EXPECT_EQ(f1.has_value(), f2.has_value());
      if (f1 && f2) {
        EXPECT_EQ(*f1, *f2);
      }
    }
  }
}

TEST(Evaluate, QuantifierFreeAgreesWithTruthTable) {
  // Random formulas over Q(x), P(x), E(x,x) evaluated against a direct truth-table oracle.
  Rng rng(17);
  std::vector<Formula> atoms = {Q("x"), P("x"), E("x", "x")};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Formula> pool = atoms;
    for (int k = 0; k < 6; ++k) {
      const auto& a = pool[rng.below(pool.size())];
      const auto& b = pool[rng.below(pool.size())];
      switch (rng.below(4)) {
        case 0: pool.push_back(Formula::negation(a)); break;
        case 1: pool.push_back(Formula::conj(a, b)); break;
        case 2: pool.push_back(Formula::disj(a, b)); break;
        default: pool.push_back(Formula::implies(a, b)); break;
      }
    }
    const Formula f = pool.back();
    for (unsigned mask = 0; mask < 8; ++mask) {
      Structure s(unary_sig(), DomainSizes{{"person", 1}});
      s.set("Q", {0}, mask & 1U);
      s.set("P", {0}, mask & 2U);
      s.set("E", {0, 0}, mask & 4U);
      std::function<bool(const Formula&)> oracle = [&](const Formula& g) -> bool {
        switch (g.kind()) {
          case FormulaKind::Atom:
            return g.relation() == "Q" ? (mask & 1U) : g.relation() == "P" ? (mask & 2U) : (mask & 4U);
          case FormulaKind::Not: return !oracle(g.child(0));
          case FormulaKind::And: return oracle(g.child(0)) && oracle(g.child(1));
          case FormulaKind::Or: return oracle(g.child(0)) || oracle(g.child(1));
          case FormulaKind::Implies: return !oracle(g.child(0)) || oracle(g.child(1));
          default: return g.is_true();
        }
      };
      EXPECT_EQ(evaluate(s, VarBinding{{x, 0}}, f), oracle(f));
    }
  }
}

TEST(Evaluate, MemoizedFrequencyMatchesFreshEvaluation) {
  // forall x. ||Q(y) | E(x,y)||_y >= 0.5 evaluated with and without shared memo.
  Rng rng(23);
  Structure s(unary_sig(), DomainSizes{{"person", 6}});
  for (int i = 0; i < 6; ++i) {
    s.set("Q", {i}, rng.bernoulli(0.5));
    for (int j = 0; j < 6; ++j) s.set("E", {i, j}, rng.bernoulli(0.5));
  }
  auto inner = Formula::freq_at_least(Q("y"), E("x", "y"), {y}, Rational(1, 2));
  for (int a = 0; a < 6; ++a) {
    bool direct = evaluate(s, VarBinding{{x, a}}, inner);
    auto f = frequency(s, VarBinding{{x, a}}, Q("y"), E("x", "y"), {y});
    EXPECT_EQ(direct, f.has_value() && f->num * 2 >= f->den);
  }
  CompiledFormula cf(Formula::forall(x, inner), s.signature(), {});
  Evaluator ev(s);
  std::vector<int> env(cf.slot_count(), 0);
  bool all = ev.eval(cf, env);
  bool expect = true;
  for (int a = 0; a < 6; ++a) expect &= evaluate(s, VarBinding{{x, a}}, inner);
  EXPECT_EQ(all, expect);
}

TEST(Diagrams, Counts) {
  auto q = std::make_shared<Signature>();
  q->add_sort("person");
  q->add_relation("Q", {"person"});
  EXPECT_EQ(enumerate_diagrams(*q, {{"x", "person"}}).size(), 2u);
  EXPECT_EQ(enumerate_diagrams(*q, {{"x1", "person"}, {"x2", "person"}, {"x3", "person"}}).size(), 8u);
  auto qe = std::make_shared<Signature>(*q);
  qe->add_relation("E", {"person", "person"});
  auto ds = enumerate_diagrams(*qe, {{"x1", "person"}, {"x2", "person"}});
  EXPECT_EQ(ds.size(), 64u);
  EXPECT_EQ(ds[0].atoms.size(), 6u);
  EXPECT_THROW(enumerate_diagrams(*qe, {{"x1", "person"}, {"x2", "person"}}, 5), CapExceeded);
  EXPECT_THROW(enumerate_diagrams(*qe, {}), ModelError);
}

TEST(Diagrams, DeterministicOrderAndDistinct) {
  auto sig = unary_sig();
  auto a = enumerate_diagrams(*sig, {{"x1", "person"}, {"x2", "person"}});
  auto b = enumerate_diagrams(*sig, {{"x1", "person"}, {"x2", "person"}});
  ASSERT_EQ(a.size(), b.size());
  std::set<std::vector<bool>> seen;
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].values, b[i].values);
    seen.insert(a[i].values);
  }
  EXPECT_EQ(seen.size(), a.size());
}

TEST(Substitution, FreeVariablesAndSubstitute) {
  auto f = Formula::freq_at_least(Q("y"), Formula::top(), {y}, Rational(1, 2));
  EXPECT_TRUE(free_variables(f).empty());
  auto g = substitute(Q("x"), "x", Term::constant(3, "person"));
  EXPECT_EQ(g, Formula::atom("Q", {Term::constant(3, "person")}));
  auto h = Formula::exists(y, E("x", "y"));
  ASSERT_EQ(free_variables(h).size(), 1u);
  EXPECT_EQ(free_variables(h)[0], x);
}

TEST(Substitution, CaptureAvoiding) {
  // (exists y. E(x,y))[x := y] must not capture.
  auto h = Formula::exists(y, E("x", "y"));
  auto g = substitute(h, "x", Term::var("y", "person"));
  auto fv = free_variables(g);
  ASSERT_EQ(fv.size(), 1u);
  EXPECT_EQ(fv[0].name, "y");
  EXPECT_NE(g.bound().name, "y");
  EXPECT_THROW(substitute(Q("x"), "x", Term::var("z", "place")), ModelError);
}

TEST(Substitution, SemanticsPreserved) {
  Rng rng(29);
  Structure s(unary_sig(), DomainSizes{{"person", 4}});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) s.set("E", {i, j}, rng.bernoulli(0.5));
  auto h = Formula::forall(y, Formula::implies(E("x", "y"), E("y", "x")));
  auto g = substitute(h, "x", Term::var("y", "person"));
  for (int a = 0; a < 4; ++a)
    EXPECT_EQ(evaluate(s, VarBinding{{x, a}}, h), evaluate(s, VarBinding{{y, a}}, g));
}

TEST(Rationals, ParseAndPrint) {
  EXPECT_EQ(Rational::parse_decimal("0.05"), Rational(1, 20));
  EXPECT_EQ(Rational::parse_decimal("1e-3"), Rational(1, 1000));
  EXPECT_EQ(Rational::parse_decimal("2.50"), Rational(5, 2));
  EXPECT_EQ(Rational(1, 20).to_string(), "0.05");
  EXPECT_EQ(Rational(3, 1).to_string(), "3");
  EXPECT_THROW(Rational::parse_decimal("1.2.3"), ModelError);
  EXPECT_THROW(Rational::parse_decimal(""), ModelError);
}

TEST(Rng, DeterministicAndSeedDerivation) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_EQ(derive_seed(9, 4), derive_seed(9, 4));
  Rng c(1);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(c.below(7), 7u);
}
