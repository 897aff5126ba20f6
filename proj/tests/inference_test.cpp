#include <gtest/gtest.h>

#include <cmath>

#include "freqnet/inference.hpp"
#include "freqnet/parse.hpp"
#include "freqnet/rng.hpp"
#include "test_util.hpp"

using namespace freqnet;
using testutil::load;

namespace {

Query query(const Model& m, const std::string& target, const std::string& evidence = "") {
  Query q;
  q.target = parse_literals(target, m.signature()).at(0);
  if (!evidence.empty()) q.evidence = parse_literals(evidence, m.signature());
  return q;
}

// Random all-partition model over A(s), B(s,s), C(s) with frequency and
// quantifier cases.
Model random_model(Rng& rng) {
  auto p = [&] { return std::round(rng.uniform() * 100) / 100; };
  std::string text = "sort s; relation A(s); relation B(s, s); relation C(s);\n";
  text += "node A { case true => " + format_double(p()) + "; }\n";
  text += "node B(x, y) { case A(x) => " + format_double(p()) + "; case ~A(x) & A(y) => " + format_double(p()) +
          "; case ~A(x) & ~A(y) => " + format_double(p()) + "; }\n";
  const double r = std::round(rng.uniform() * 10) / 10;
  text += "node C(x) { case freq(B(x, y) ; y:s) >= " + format_double(r) + " => " + format_double(p()) +
          "; case ~(freq(B(x, y) ; y:s) >= " + format_double(r) + ") & exists y:s. A(y) => " + format_double(p()) +
          "; case ~(freq(B(x, y) ; y:s) >= " + format_double(r) + ") & ~(exists y:s. A(y)) => " +
          format_double(p()) + "; }\n";
  return parse_model(text);
}

}  // namespace

TEST(Inference, ExactExamples) {
  auto m = load("chain.cplm");
  auto sizes = DomainSizes::uniform(m.signature(), 3);
  EXPECT_NEAR(exact_query(m, sizes, query(m, "Q(0)")), 0.3, 1e-12);
  EXPECT_NEAR(exact_query(m, sizes, query(m, "R(0)")), 0.35, 1e-12);
  EXPECT_NEAR(exact_query(m, sizes, query(m, "R(0)", "Q(0)")), 0.7, 1e-12);
  EXPECT_NEAR(exact_query(m, sizes, query(m, "~R(0)", "~Q(0)")), 0.8, 1e-12);
  EXPECT_NEAR(exact_query(m, sizes, query(m, "Q(0)", "R(0)")), 0.21 / 0.35, 1e-12);
}

TEST(Inference, ExactMatchesEnumeration) {
  auto m = load("threshold_r02.cplm");
  auto sizes = DomainSizes::uniform(m.signature(), 4);
  double joint = 0.0, ev = 0.0;
  for (const auto& [w, p] : enumerate_worlds(m, sizes)) {
    if (!w.holds("R", {2})) continue;
    ev += p;
    if (w.holds("R", {0})) joint += p;
  }
  EXPECT_NEAR(exact_query(m, sizes, query(m, "R(0)", "R(2)")), joint / ev, 1e-12);
}

TEST(Inference, ExactErrors) {
  auto m = load("noisy_or.cplm");
  auto sizes = DomainSizes::uniform(m.signature(), 2);
  EXPECT_THROW(exact_query(m, sizes, query(m, "Infected(0)", "Influences(0,1), ~Contact(0,1)")),
               ZeroProbabilityEvidence);
  EXPECT_THROW(exact_query(m, DomainSizes::uniform(m.signature(), 10), query(m, "Infected(0)")), CapExceeded);
  EXPECT_THROW(exact_query(m, sizes, query(m, "Infected(5)")), ModelError);
  EXPECT_THROW(exact_query(m, sizes, query(m, "Infected(0)", "Contact(0,1), ~Contact(0,1)")), ModelError);
  // A root query only needs its own atom, whatever the domain size.
  EXPECT_NEAR(exact_query(m, DomainSizes::uniform(m.signature(), 100), query(m, "Infectious(7)")), 0.3, 1e-12);
}

TEST(Inference, NoisyOrClosedForm) {
  auto m = load("noisy_or.cplm");
  auto sizes = DomainSizes::uniform(m.signature(), 3);
  // Each of the 3 candidates y infects x independently with 0.2 * 0.1 * 0.3.
  const double expect = 1.0 - std::pow(1.0 - 0.2 * 0.1 * 0.3, 3);
  EXPECT_NEAR(exact_query(m, sizes, query(m, "Infected(0)")), expect, 1e-12);
}

TEST(Inference, ForwardSampleExtremes) {
  auto one = parse_model("sort s; relation Q(s); node Q { case true => 1; }");
  auto zero = parse_model("sort s; relation Q(s); node Q { case true => 0; }");
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_EQ(forward_sample(one, DomainSizes::uniform(one.signature(), 7), seed).true_count(0), 7u);
    EXPECT_EQ(forward_sample(zero, DomainSizes::uniform(zero.signature(), 7), seed).true_count(0), 0u);
  }
}

TEST(Inference, ForwardSampleDeterministic) {
  auto m = load("school_workplace.cplm");
  DomainSizes sizes{{"person", 10}, {"place", 3}};
  auto a = forward_sample(m, sizes, 42), b = forward_sample(m, sizes, 42), c = forward_sample(m, sizes, 43);
  EXPECT_EQ(print_structure(a), print_structure(b));
  EXPECT_NE(print_structure(a), print_structure(c));
}

TEST(Inference, EstimateRootQuery) {
  auto m = load("chain.cplm");
  auto est = estimate_query(m, DomainSizes::uniform(m.signature(), 5), query(m, "Q(0)"), 100000, 1);
  EXPECT_LE(std::abs(est.value - 0.3), 3 * est.std_error);
  EXPECT_NEAR(est.std_error, std::sqrt(0.21 / 100000), 2e-4);
  EXPECT_DOUBLE_EQ(est.effective_samples, 100000.0);
  EXPECT_EQ(est.seed, 1u);
  EXPECT_EQ(est.samples, 100000u);
  EXPECT_THROW(estimate_query(m, DomainSizes::uniform(m.signature(), 5), query(m, "Q(0)"), 0, 1), ModelError);
}

TEST(Inference, EstimateZeroWeights) {
  auto m = load("noisy_or.cplm");
  EXPECT_THROW(estimate_query(m, DomainSizes::uniform(m.signature(), 2),
                              query(m, "Infected(0)", "Influences(0,1), ~Contact(0,1)"), 100, 1),
               ZeroProbabilityEvidence);
}

TEST(Inference, DeterministicAcrossThreads) {
  auto m = load("noisy_or.cplm");
  auto sizes = DomainSizes::uniform(m.signature(), 6);
  auto q = query(m, "Infected(0)", "Contact(0,1), Infectious(1)");
  auto a = estimate_query(m, sizes, q, 5000, 9, {1, false});
  for (unsigned t : {2u, 3u, 8u}) {
    auto b = estimate_query(m, sizes, q, 5000, 9, {t, false});
    EXPECT_EQ(a.value, b.value);
    EXPECT_EQ(a.std_error, b.std_error);
    EXPECT_EQ(a.effective_samples, b.effective_samples);
  }
}

TEST(Inference, LikelihoodWeightingAgreesWithExact) {
  Rng rng(2024);
  int outside = 0, total = 0;
  for (int t = 0; t < 15; ++t) {
    auto m = random_model(rng);
    auto sizes = DomainSizes::uniform(m.signature(), 3);
    for (const auto& [target, evidence] :
         std::vector<std::pair<std::string, std::string>>{{"C(0)", ""}, {"C(0)", "A(1), ~B(0,2)"},
                                                          {"A(0)", "C(1)"}, {"~B(1,0)", "C(0), ~C(2)"}}) {
      auto q = query(m, target, evidence);
      double exact;
      try {
        exact = exact_query(m, sizes, q);
      } catch (const ZeroProbabilityEvidence&) {
        continue;
      }
      auto est = estimate_query(m, sizes, q, 20000, 100 + t, {2, false});
      ++total;
      if (std::abs(est.value - exact) > 3 * est.std_error + 1e-12) ++outside;
    }
  }
  ASSERT_GT(total, 40);
  // Each comparison fails with probability about 0.3% under the normal approximation.
  EXPECT_LE(outside, 2) << outside << " of " << total;
}

TEST(Inference, RaoBlackwellAgreesWithPlain) {
  auto m = load("logistic.cplm");
  auto sizes = DomainSizes::uniform(m.signature(), 20);
  auto q = query(m, "R(0)");
  auto plain = estimate_query(m, sizes, q, 20000, 5);
  auto rb = estimate_query(m, sizes, q, 20000, 5, {1, true});
  EXPECT_LT(rb.std_error, plain.std_error);
  EXPECT_LE(std::abs(rb.value - plain.value), 3 * (rb.std_error + plain.std_error));
}

TEST(Inference, StandardErrorScaling) {
  auto m = load("chain.cplm");
  auto sizes = DomainSizes::uniform(m.signature(), 3);
  auto q = query(m, "R(0)", "Q(1)");
  auto small = estimate_query(m, sizes, q, 4000, 3);
  auto large = estimate_query(m, sizes, q, 64000, 3);
  const double ratio = small.std_error / large.std_error;
  EXPECT_NEAR(ratio, 4.0, 0.4);
}
