#include <gtest/gtest.h>

#include <cmath>

#include "freqnet/eval.hpp"
#include "freqnet/functions.hpp"
#include "freqnet/projective.hpp"
#include "random_models.hpp"
#include "test_util.hpp"

using namespace freqnet;
using testutil::load;

namespace {

Query query(const Signature& sig, const std::string& target, const std::string& evidence = "") {
  Query q;
  q.target = parse_literals(target, sig).at(0);
  if (!evidence.empty()) q.evidence = parse_literals(evidence, sig);
  return q;
}

Model qe_model(double q_prob, double e_prob) {
  return parse_model("sort s; relation Q(s); relation E(s, s); relation P1(s, s);\n"
                     "node Q { case true => " + format_double(q_prob) + "; }\n"
                     "node E { case true => " + format_double(e_prob) + "; }\n"
                     "node P1 { case true => 0.4; }\n");
}

AtomicDiagram diagram(const Signature& sig, std::vector<Variable> vars,
                      std::vector<std::pair<std::string, std::vector<int>>> atoms, std::vector<bool> values) {
  AtomicDiagram d;
  d.vars = std::move(vars);
  for (auto& [name, args] : atoms) d.atoms.push_back({sig.relation_index(name), args});
  d.values = std::move(values);
  return d;
}

// Largest difference in limit probability over complete diagrams on `k` variables.
double distance(const QfLbn& a, const QfLbn& b, int k) {
  std::vector<Variable> vars;
  for (int i = 0; i < k; ++i) vars.push_back({"v" + std::to_string(i), a.signature().sorts().front()});
  double worst = 0.0;
  for (const auto& d : enumerate_diagrams(a.signature(), vars, 16))
    worst = std::max(worst, std::abs(diagram_prob(a, d) - diagram_prob(b, d)));
  return worst;
}

}  // namespace

TEST(Projective, DiagramProbExamples) {
  auto m = parse_model("sort s; relation Q(s); node Q { case true => 0.3; }");
  auto qf = compile_limit(m);
  const auto& sig = qf.signature();
  Variable x1{"x1", "s"}, x2{"x2", "s"};
  EXPECT_NEAR(diagram_prob(qf, diagram(sig, {x1, x2}, {{"Q", {0}}, {"Q", {1}}}, {true, false})), 0.21, 1e-15);

  auto chain = compile_limit(load("chain.cplm"));
  const auto& cs = chain.signature();
  EXPECT_NEAR(diagram_prob(chain, diagram(cs, {{"x", "person"}}, {{"Q", {0}}, {"R", {0}}}, {true, true})), 0.21,
              1e-15);
  EXPECT_NEAR(diagram_prob(chain, diagram(cs, {{"x", "person"}}, {{"R", {0}}}, {true})), 0.35, 1e-15);
}

TEST(Projective, DiagramProbNormalized) {
  for (const char* name : {"chain.cplm", "noisy_or.cplm", "noisy_or_root.cplm", "threshold_r02.cplm",
                           "logistic.cplm", "bump.cplm"}) {
    auto qf = compile_limit(load(name));
    for (int k = 1; k <= 2; ++k) {
      std::vector<Variable> vars;
      for (int i = 0; i < k; ++i) vars.push_back({"v" + std::to_string(i), "person"});
      double total = 0.0;
      for (const auto& d : enumerate_diagrams(qf.signature(), vars, 16)) total += diagram_prob(qf, d);
      EXPECT_NEAR(total, 1.0, 1e-12) << name << " k=" << k;
    }
  }
}

TEST(Projective, QeExamples) {
  auto qf = compile_limit(qe_model(0.3, 0.5));
  const auto& sig = qf.signature();
  EXPECT_TRUE(qe(qf, parse_formula("exists y:s. Q(y) & E(x, y)", sig)).is_true());
  EXPECT_TRUE(qe(qf, parse_formula("exists y:s. Q(y) & ~Q(y)", sig)).is_false());
  EXPECT_TRUE(qe(qf, parse_formula("forall y:s. Q(y) | E(x, y)", sig)).is_false());
  // Universal statements about x alone survive as quantifier-free formulas.
  auto f = qe(qf, parse_formula("Q(x) & exists y:s. E(y, y)", sig));
  EXPECT_EQ(print_formula(f), "Q(x)");

  auto zero = compile_limit(qe_model(0.0, 0.5));
  const auto& zs = zero.signature();
  EXPECT_TRUE(qe(zero, parse_formula("exists y:s. P1(x, y) & Q(y)", zs)).is_false());
  // The substitution instance y := x remains possible in principle, but Q is
  // almost surely empty so it folds away as well.
  EXPECT_TRUE(qe(zero, parse_formula("exists y:s. ~Q(y) & P1(x, y)", zs)).is_true());
  EXPECT_THROW(qe(qf, parse_formula("Q(3)", sig)), ModelError);
}

TEST(Projective, QeDependsOnDeterministicDiagrams) {
  // Influences is impossible without Contact: existence of an influencing
  // element is generic, but a universal one fails.
  auto qf = compile_limit(load("noisy_or.cplm"));
  const auto& sig = qf.signature();
  EXPECT_TRUE(qe(qf, parse_formula("exists y:person. Influences(x, y) & Infectious(y)", sig)).is_true());
  EXPECT_TRUE(qe(qf, parse_formula("exists y:person. Influences(x, y) & ~Contact(x, y)", sig)).is_false());
  auto f = qe(qf, parse_formula("exists y:person. Influences(x, y) & ~Contact(y, x) & Contact(x, x)", sig));
  EXPECT_EQ(print_formula(f), "Contact(x, x)");
}

TEST(Projective, FreqLimitExamples) {
  auto qf = compile_limit(qe_model(0.3, 0.5));
  const auto& sig = qf.signature();
  Variable x{"x", "s"}, y{"y", "s"};
  AtomicDiagram none{{x}, {}, {}};
  EXPECT_NEAR(freq_limit(qf, parse_formula("Q(y)", sig), none, {y}), 0.3, 1e-15);
  EXPECT_NEAR(freq_limit(qf, parse_formula("Q(y) & E(x, y)", sig), none, {y}), 0.15, 1e-15);
  EXPECT_NEAR(freq_limit(qf, Formula::top(), none, {y}), 1.0, 1e-15);
  auto ctx = diagram(sig, {x}, {{"Q", {0}}}, {true});
  EXPECT_NEAR(freq_limit(qf, parse_formula("Q(y) & E(x, y)", sig), ctx, {y}), 0.15, 1e-15);

  auto chain = compile_limit(load("chain.cplm"));
  Variable px{"x", "person"}, py{"y", "person"};
  AtomicDiagram c{{px}, {}, {}};
  EXPECT_NEAR(freq_limit(chain, parse_formula("R(y)", chain.signature()), c, {py}), 0.35, 1e-15);
  EXPECT_NEAR(freq_limit(chain, parse_formula("R(y) | Q(y)", chain.signature()), c, {py}), 0.3 + 0.7 * 0.2,
              1e-15);
}

TEST(Projective, CompileLogistic) {
  auto qf = compile_limit(load("logistic.cplm"));
  const size_t r = qf.signature().relation_index("R");
  const auto& t = qf.table(r, {0});
  EXPECT_TRUE(t.context.empty());
  ASSERT_EQ(t.q.size(), 1u);
  EXPECT_NEAR(t.q[0], sigmoid(2 * 0.3 - 1), 1e-15);
  EXPECT_NEAR(t.q[0], 0.40131, 1e-5);
  EXPECT_NEAR(limit_query(qf, query(qf.signature(), "R(0)")), 0.401312, 1e-6);
  EXPECT_NEAR(limit_query(qf, query(qf.signature(), "R(0)", "Q(0), Q(1)")), 0.401312, 1e-6);
}

TEST(Projective, CompileNoisyOrRoot) {
  auto qf = compile_limit(load("noisy_or_root.cplm"));
  const size_t r = qf.signature().relation_index("R");
  const auto& t = qf.table(r, {0});
  EXPECT_TRUE(t.context.empty());
  EXPECT_EQ(t.q.at(0), 1.0);
  EXPECT_EQ(qf.constant(r), std::optional<bool>(true));
  auto plain = compile_limit(load("noisy_or.cplm"));
  EXPECT_EQ(plain.constant(plain.signature().relation_index("Infected")), std::optional<bool>(true));
}

TEST(Projective, CompileThresholds) {
  auto r02 = compile_threshold_limit(load("threshold_r02.cplm"));
  const size_t r = r02.signature().relation_index("R");
  EXPECT_TRUE(r02.table(r, {0}).context.empty());
  EXPECT_DOUBLE_EQ(r02.table(r, {0}).q.at(0), 0.8);
  auto r04 = compile_threshold_limit(load("threshold_r04.cplm"));
  EXPECT_DOUBLE_EQ(r04.table(r, {0}).q.at(0), 0.1);
  try {
    compile_threshold_limit(load("critical.cplm"));
    FAIL() << "critical threshold compiled";
  } catch (const CriticalThreshold& e) {
    EXPECT_NE(std::string(e.what()).find("freq(Q(y) ; y:person) >= 0.3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(compile_threshold_limit(load("logistic.cplm")), ModelError);
}

TEST(Projective, ThresholdWithFreeVariable) {
  // The share of E-neighbours of x decides R(x); the limit is 0.5 either way.
  auto m = parse_model(R"(
    sort s;
    relation Q(s);
    relation E(s, s);
    relation R(s);
    node Q { case true => 0.5; }
    node E(x, y) { case Q(x) => 0.8; case ~Q(x) => 0.2; }
    node R(x) { case freq(E(x, y) ; y:s) >= 0.5 => 0.9; case ~(freq(E(x, y) ; y:s) >= 0.5) => 0.3; }
  )");
  auto qf = compile_threshold_limit(m);
  const auto& t = qf.table(qf.signature().relation_index("R"), {0});
  ASSERT_EQ(t.context.size(), 1u);
  EXPECT_EQ(qf.signature().relation(t.context[0].rel).name, "Q");
  EXPECT_DOUBLE_EQ(t.q[1], 0.9);
  EXPECT_DOUBLE_EQ(t.q[0], 0.3);
  EXPECT_NEAR(limit_query(qf, query(qf.signature(), "R(0)")), 0.6, 1e-15);
}

TEST(Projective, PartitionViolationInTheLimit) {
  auto m = parse_model(R"(
    sort s;
    relation Q(s);
    relation R(s);
    node Q { case true => 0.5; }
    node R(x) { case exists y:s. Q(y) => 0.9; case Q(x) => 0.3; case ~Q(x) & ~(exists y:s. Q(y)) => 0.1; }
  )");
  EXPECT_THROW(compile_limit(m), PartitionViolation);
}

TEST(Projective, InteriorPreservationRequired) {
  auto m = parse_model(R"(
    sort s;
    relation Q(s);
    relation R(s);
    node Q { case true => 0.5; }
    node R(x) { feature f = freq(Q(y) ; y:s); function: bump(alpha=1, beta=2, p=0.5); }
  )");
  EXPECT_THROW(compile_limit(m), ModelError);
  auto qf = compile_limit(m, {true});
  EXPECT_DOUBLE_EQ(qf.table(qf.signature().relation_index("R"), {0}).q.at(0), 1.0);
}

TEST(Projective, QuantifierFreeFixedPoint) {
  auto m = load("chain.cplm");
  auto qf = compile_limit(m);
  const auto& sig = qf.signature();
  const auto& t = qf.table(sig.relation_index("R"), {0});
  ASSERT_EQ(t.context.size(), 1u);
  EXPECT_DOUBLE_EQ(t.q[1], 0.7);
  EXPECT_DOUBLE_EQ(t.q[0], 0.2);
  for (const char* name : {"chain.cplm", "noisy_or.cplm", "noisy_or_root.cplm", "threshold_r02.cplm",
                           "logistic.cplm", "bump.cplm"}) {
    auto once = compile_limit(load(name));
    auto model = to_model(once);
    EXPECT_TRUE(model.validate().empty()) << name;
    auto twice = compile_limit(model);
    EXPECT_LE(distance(once, twice, 2), 1e-12) << name;
    // The emitted model parses back.
    auto reparsed = parse_model(print_model(model));
    EXPECT_LE(distance(once, compile_limit(reparsed), 2), 1e-12) << name;
  }
}

TEST(Projective, LimitQueryExamples) {
  auto chain = compile_limit(load("chain.cplm"));
  const auto& sig = chain.signature();
  EXPECT_NEAR(limit_query(chain, query(sig, "R(0)", "Q(0)")), 0.7, 1e-15);
  EXPECT_NEAR(limit_query(chain, query(sig, "R(0)")), 0.35, 1e-15);
  // Unary-only model: elements are independent.
  EXPECT_NEAR(limit_query(chain, query(sig, "R(0)", "Q(1)")), 0.35, 1e-15);
  EXPECT_NEAR(limit_query(chain, query(sig, "R(0)", "R(1), ~Q(2)")), 0.35, 1e-15);
  AtomicDiagram both = diagram(sig, {{"a", "person"}, {"b", "person"}}, {{"R", {0}}, {"R", {1}}}, {true, true});
  EXPECT_NEAR(diagram_prob(chain, both), 0.35 * 0.35, 1e-15);
  EXPECT_THROW(limit_query(chain, query(sig, "R(0)", "Q(0), ~Q(0)")), ModelError);
  auto noisy = compile_limit(load("noisy_or.cplm"));
  EXPECT_THROW(limit_query(noisy, query(noisy.signature(), "Infected(0)", "Influences(0,1), ~Contact(0,1)")),
               ZeroProbabilityEvidence);
  EXPECT_NEAR(limit_query(noisy, query(noisy.signature(), "Influences(0,1)", "Contact(0,1)")), 0.1, 1e-15);
}

TEST(Projective, CheckProjectivity) {
  auto m = load("chain.cplm");
  const auto& sig = m.signature();
  auto rep = check_projectivity(m, {3, 4, 5, 6, 7, 8}, {query(sig, "R(0)"), query(sig, "R(0)", "Q(0)")});
  EXPECT_TRUE(rep.projective);
  EXPECT_LE(rep.max_deviation, 1e-12);
  for (double v : rep.values[0]) EXPECT_NEAR(v, 0.35, 1e-12);
  for (double v : rep.values[1]) EXPECT_NEAR(v, 0.7, 1e-12);
  EXPECT_THROW(check_projectivity(load("noisy_or.cplm"), {2, 3}, {}), ModelError);
  EXPECT_THROW(check_projectivity(load("logistic.cplm"), {2, 3}, {}), ModelError);
}

TEST(Projective, NonProjectiveModelIsReported) {
  // The share of Q shifts R at small sizes; the check is only legal for
  // quantifier-free models, so confirm the non-constancy directly.
  auto m = load("threshold_r02.cplm");
  const auto& sig = m.signature();
  auto q = query(sig, "R(0)");
  const double a = exact_query(m, DomainSizes::uniform(sig, 2), q);
  const double b = exact_query(m, DomainSizes::uniform(sig, 6), q);
  EXPECT_GT(std::abs(a - b), 1e-3);
}

TEST(Projective, ExtensionAxiomExactValues) {
  auto m = parse_model("sort s; relation Q(s); node Q { case true => 0.5; }");
  const auto& sig = m.signature();
  const size_t qrel = sig.relation_index("Q");
  ExtensionAxiom a0{0, "s", {qrel}, {{qrel, {0}}}};
  ExtensionAxiom a1{1, "s", {qrel}, {{qrel, {1}}}};
  ASSERT_EQ(a1.delta(sig).size(), 1u);
  // Exact violation probabilities by enumeration at small sizes.
  for (int n = 1; n <= 6; ++n) {
    double v0 = 0.0, v1 = 0.0;
    for (const auto& [w, p] : enumerate_worlds(m, DomainSizes::uniform(sig, n))) {
      if (!a0.holds(w)) v0 += p;
      if (!a1.holds(w)) v1 += p;
    }
    EXPECT_NEAR(v0, std::pow(0.5, n), 1e-12);
    EXPECT_NEAR(v1, (n + 1) * std::pow(0.5, n), 1e-12);
  }
  auto rates = extension_axiom_rate(m, a0, {4, 8, 100}, 4000, 17);
  ASSERT_EQ(rates.size(), 3u);
  EXPECT_LE(std::abs(rates[0].violation - 1.0 / 16), 3 * std::sqrt(1.0 / 16 * 15 / 16 / 4000));
  EXPECT_LE(std::abs(rates[1].violation - 1.0 / 256), 3 * std::sqrt(1.0 / 256 * 255 / 256 / 4000) + 1e-12);
  EXPECT_LT(rates[2].violation, 0.01);

  auto never = parse_model("sort s; relation Q(s); node Q { case true => 0; }");
  auto bad = extension_axiom_rate(never, a0, {20}, 200, 3);
  EXPECT_DOUBLE_EQ(bad[0].violation, 1.0);
  ExtensionAxiom wrong{1, "s", {qrel}, {{qrel, {0}}}};
  EXPECT_THROW(wrong.check(sig), ModelError);
}

TEST(Projective, ExtensionAxiomBinary) {
  auto m = parse_model("sort s; relation E(s, s); node E { case true => 0.5; }");
  const auto& sig = m.signature();
  const size_t e = sig.relation_index("E");
  // Every element has a fresh neighbour in both directions without a loop.
  ExtensionAxiom ax{1, "s", {e}, {{e, {0, 1}}, {e, {1, 0}}}};
  ASSERT_EQ(ax.delta(sig).size(), 3u);
  auto rates = extension_axiom_rate(m, ax, {5, 100}, 400, 1);
  EXPECT_GT(rates[0].violation, rates[1].violation);
  EXPECT_LT(rates[1].violation, 0.01);
}

TEST(Projective, QeAgreesOnSampledStructures) {
  freqnet::Rng rng(4242);
  int pairs = 0;
  double worst = 1.0;
  for (int t = 0; t < 12; ++t) {
    auto m = testutil::random_qf_model(rng);
    const int depth = 1 + static_cast<int>(rng.below(2));
    std::vector<Variable> free = {{"x", "s"}};
    if (depth == 1 && rng.bernoulli(0.5)) free.push_back({"w", "s"});
    auto f = testutil::random_fo_formula(rng, free, depth);
    auto res = testutil::qe_agreement(m, f, 300, 300, 1000 + t);
    ++pairs;
    worst = std::min(worst, res.rate());
    EXPECT_GE(res.rate(), 0.99) << print_formula(f) << "\n" << print_model(m);
  }
  EXPECT_EQ(pairs, 12);
}

TEST(Projective, FreqLimitMatchesSampledFrequencies) {
  freqnet::Rng rng(777);
  int outside = 0;
  for (int t = 0; t < 8; ++t) {
    auto m = testutil::random_qf_model(rng);
    auto chi = testutil::random_qf_pair_formula(rng);
    auto o = testutil::freq_oracle(m, chi, 200, 12, 50 + t);
    if (std::abs(o.mean - o.limit) > 3 * o.std_error + 1e-9) ++outside;
  }
  EXPECT_LE(outside, 1);
}

TEST(Projective, SchoolModelCompiles) {
  auto m = load("school_workplace.cplm");
  auto qf = compile_limit(m);
  const auto& sig = qf.signature();
  // Someone attending is almost surely diagnosed, so every place closes.
  EXPECT_EQ(qf.constant(sig.relation_index("Is_open")), std::optional<bool>(false));
  EXPECT_NEAR(limit_query(qf, query(sig, "Contact(0, 1)")), 0.05, 1e-15);
  EXPECT_NEAR(limit_query(qf, query(sig, "Is_infected(0)")), 1.0, 1e-15);
}
