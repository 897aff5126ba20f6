// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "freqnet/freqnet.hpp"
#include "random_models.hpp"
#include "test_util.hpp"

using namespace freqnet;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b)));
}

Outcome rlr() {
  Outcome o;
  auto r = run_rlr_mismatch();
  o.detail << "w_small=" << r.w_small << " w_large=" << r.w_large << " transfer=" << r.transfer;
  o.require(std::abs(r.w_small + 0.21972) <= 1e-4, "w_small");
  o.require(std::abs(r.w_large + 0.021972) <= 1e-5, "w_large");
  o.require(r.transfer < 1e-9, "transfer prediction");
  return o;
}

Outcome logistic_limit() {
  Outcome o;
  ConvergenceSpec spec{testutil::load("logistic.cplm"), "R", {50, 200, 1000}, 20000, 2024};
  auto rows = run_convergence(spec);
  const double expected = sigmoid(2 * 0.3 - 1);
  o.detail << "limit=" << rows[0].limit;
  o.require(std::abs(rows[0].limit - expected) <= 1e-6 && std::abs(rows[0].limit - 0.40131) <= 1e-5, "limit");
  for (const auto& r : rows) o.detail << " gap(" << r.n << ")=" << r.gap << "+-" << r.stderr_;
  o.require(rows.back().gap < 0.02, "gap at n=1000");
  for (size_t i = 1; i < rows.size(); ++i)
    o.require(rows[i].gap <= rows[i - 1].gap + 3 * std::hypot(rows[i].stderr_, rows[i - 1].stderr_),
              "gap increased beyond 3 sigma at n=" + std::to_string(rows[i].n));
  return o;
}

Outcome noisy_or() {
  Outcome o;
  ConvergenceSpec spec{testutil::load("noisy_or_root.cplm"), "R", {100}, 20000, 33};
  auto rows = run_convergence(spec);
  const double p = 1.0 - std::pow(0.9, 100);
  const double sigma = std::sqrt(p * (1 - p) / static_cast<double>(spec.samples));
  o.detail << "estimate=" << rows[0].estimate << " closed=" << p << " sigma=" << sigma << " limit=" << rows[0].limit;
  o.require(std::abs(rows[0].estimate - p) <= 3 * sigma, "estimate within 3 sigma");
  o.require(rows[0].limit == 1.0, "compiled limit is 1");
  return o;
}

Outcome thresholds() {
  Outcome o;
  auto constant_q = [](const QfLbn& qf, size_t r, double& value) {
    bool first = true, same = true;
    for (const auto& [pat, t] : qf.tables(r))
      for (size_t i = 0; i < t.q.size(); ++i) {
        if (!t.defined[i]) continue;
        if (first) value = t.q[i];
        same &= t.q[i] == value;
        first = false;
      }
    return same && !first;
  };
  for (auto [file, expected] : {std::pair{"threshold_r02.cplm", 0.8}, std::pair{"threshold_r04.cplm", 0.1}}) {
    auto m = testutil::load(file);
    auto qf = compile_threshold_limit(m);
    double v = -1;
    const bool constant = constant_q(qf, m.signature().relation_index("R"), v);
    o.detail << file << ": R=" << v;
    o.require(constant && v == expected, std::string(file) + " compiles to the case probability");
    ConvergenceSpec spec{m, "R", {1000}, 20000, 71};
    auto rows = run_convergence(spec);
    o.detail << " gap(1000)=" << rows[0].gap << "; ";
    o.require(rows[0].gap < 0.02, std::string(file) + " gap at n=1000");
  }
  bool critical = false;
  try {
    compile_threshold_limit(testutil::load("critical.cplm"));
  } catch (const CriticalThreshold&) {
    critical = true;
  }
  o.detail << "critical refused=" << critical;
  o.require(critical, "r = mu(Q) refused as critical");
  return o;
}

Outcome projectivity() {
  Outcome o;
  auto m = testutil::load("chain.cplm");
  const auto& sig = m.signature();
  Rng rng(5);
  std::vector<Query> queries;
  for (int i = 0; i < 10; ++i) {
    auto literal = [&] {
      return GroundLiteral{{rng.below(2), {static_cast<int>(rng.below(3))}}, rng.bernoulli(0.5)};
    };
    Query q{literal(), {}};
    if (i % 2 == 1) {
      const auto count = 1 + rng.below(3);
      while (q.evidence.size() < count) {
        auto e = literal();
        bool clash = e.atom == q.target.atom;
        for (const auto& prev : q.evidence) clash |= prev.atom == e.atom;
        if (!clash) q.evidence.push_back(e);
      }
    }
    queries.push_back(q);
  }
  auto rep = check_projectivity(m, {3, 4, 5, 6, 7, 8}, queries);
  o.detail << "queries=" << queries.size() << " max deviation=" << rep.max_deviation;
  (void)sig;
  o.require(rep.max_deviation <= 1e-12, "exact answers vary with domain size");
  return o;
}

Outcome qe_oracle() {
  Outcome o;
  Rng rng(6060);
  double worst = 1.0;
  int pairs = 0;
  for (int t = 0; t < 50; ++t) {
    auto m = testutil::random_qf_model(rng);
    const int depth = 1 + static_cast<int>(rng.below(2));
    std::vector<Variable> free = {{"x", "s"}};
    if (depth == 1 && rng.bernoulli(0.5)) free.push_back({"w", "s"});
    auto f = testutil::random_fo_formula(rng, free, depth);
    auto res = testutil::qe_agreement(m, f, 300, 1000, 9000 + static_cast<std::uint64_t>(t));
    worst = std::min(worst, res.rate());
    ++pairs;
    if (res.rate() < 0.99) o.require(false, "pair " + std::to_string(t) + ": " + print_formula(f));
  }
  o.detail << "pairs=" << pairs << " worst agreement=" << worst;
  return o;
}

Outcome extension_and_frequencies() {
  Outcome o;
  auto m = parse_model("sort s; relation Q(s); node Q { case true => 0.5; }");
  const size_t qrel = m.signature().relation_index("Q");
  ExtensionAxiom axiom{0, "s", {qrel}, {{qrel, {0}}}};
  auto rates = extension_axiom_rate(m, axiom, {25, 50, 100}, 20000, 404);
  for (const auto& r : rates) o.detail << "viol(" << r.n << ")=" << r.violation << " ";
  o.require(rates.back().violation < 0.01, "violation at n=100");
  for (size_t i = 1; i < rates.size(); ++i)
    o.require(rates[i].violation <= rates[i - 1].violation, "violation not decreasing");
  // 1-extension closed form 0.5^n.
  o.require(std::abs(rates[0].violation - std::pow(0.5, 25)) <= 3 * std::sqrt(std::pow(0.5, 25) / 20000) + 1e-12,
            "closed form at n=25");

  // A binary axiom whose violation is visible at these sizes: every element
  // has a fresh two-way neighbour.
  auto g = parse_model("sort s; relation E(s, s); node E { case true => 0.5; }");
  const size_t e = g.signature().relation_index("E");
  ExtensionAxiom binary{1, "s", {e}, {{e, {0, 1}}, {e, {1, 0}}}};
  auto brates = extension_axiom_rate(g, binary, {25, 50, 100}, 2000, 405);
  o.detail << "| binary ";
  for (const auto& r : brates) o.detail << "viol(" << r.n << ")=" << r.violation << "+-" << r.std_error << " ";
  o.require(brates.back().violation < 0.01, "binary violation at n=100");
  for (size_t i = 1; i < brates.size(); ++i)
    o.require(brates[i - 1].violation - brates[i].violation > 3 * std::hypot(brates[i - 1].std_error, brates[i].std_error),
              "binary violation not decreasing at n=" + std::to_string(brates[i].n));

  Rng rng(2020);
  int outside = 0;
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    auto model = testutil::random_qf_model(rng);
    auto chi = testutil::random_qf_pair_formula(rng);
    auto fo = testutil::freq_oracle(model, chi, 500, 20, 700 + static_cast<std::uint64_t>(t));
    const double z = fo.std_error > 0 ? std::abs(fo.mean - fo.limit) / fo.std_error : 0.0;
    if (std::abs(fo.mean - fo.limit) > 3 * fo.std_error + 1e-12) ++outside;
    worst = std::max(worst, z);
  }
  o.detail << "| freq formulas=20 outside 3 sigma=" << outside << " worst z=" << worst;
  o.require(outside == 0, "freq_limit outside 3 sigma");
  return o;
}

Outcome gradients() {
  Outcome o;
  Rng rng(88);
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
  double worst_all = 0.0;
  for (auto kind : {FamilyKind::Constant, FamilyKind::Linear, FamilyKind::Logistic, FamilyKind::Probit,
                    FamilyKind::Cloglog, FamilyKind::Bump}) {
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
      FunctionFamily f;
      switch (kind) {
        case FamilyKind::Constant: f = FunctionFamily::constant(u(0.05, 0.95), 2); break;
        case FamilyKind::Linear: f = FunctionFamily::affine(kind, {u(-0.4, 0.4), u(-0.4, 0.4)}, u(0.4, 0.6)); break;
        case FamilyKind::Bump: f = FunctionFamily::bump(u(0.05, 1), u(0, 10), u(0, 1)); break;
        default: f = FunctionFamily::affine(kind, {u(-3, 3), u(-3, 3)}, u(-3, 3)); break;
      }
      std::vector<double> x(f.arity());
      for (auto& v : x) v = rng.uniform();
      auto g = detail::family_gradient(f, x);
      for (size_t i = 0; i < g.size(); ++i) {
        const double h = 1e-6;
        auto plus = f, minus = f;
        plus.set_param(i, f.params()[i] + h);
        minus.set_param(i, f.params()[i] - h);
        worst = std::max(worst, relative_error(g[i], (plus.eval(x) - minus.eval(x)) / (2 * h)));
      }
    }
    o.detail << family_name(kind) << "=" << worst << " ";
    worst_all = std::max(worst_all, worst);
  }
  o.require(worst_all <= 1e-4, "relative error above 1e-4");
  return o;
}

Outcome uniform_convergence() {
  Outcome o;
  SweepSpec spec{testutil::load("logistic.cplm"), "R", 0, -3.0, 3.0, 0.5, {50, 200, 800}, 20000, 909};
  auto res = run_uniform_sweep(spec);
  std::vector<SweepRow> maxima;
  for (const auto& r : res.rows)
    if (r.kind == "max") maxima.push_back(r);
  for (const auto& r : maxima)
    o.detail << "max gap(" << r.n << ")=" << r.gap << "+-" << r.stderr_ << " ref=" << r.reference_gap << " ";
  for (size_t i = 1; i < maxima.size(); ++i) {
    o.require(maxima[i - 1].gap - maxima[i].gap > 3 * std::hypot(maxima[i - 1].stderr_, maxima[i].stderr_),
              "max gap not strictly decreasing beyond 3 sigma at n=" + std::to_string(maxima[i].n));
    o.require(maxima[i].reference_gap >= maxima[i - 1].reference_gap, "reference max gap decreased");
  }
  o.detail << "continuous=" << res.continuous;
  o.require(res.continuous, "limit jump above Lipschitz bound");
  return o;
}

Outcome transfer() {
  Outcome o;
  auto gen = testutil::load("logistic.cplm");
  auto start = with_params(gen, std::vector<double>{0.5, 0.0, 0.0});
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TransferSpec spec{gen, start, "R", 1000, 50, 50, seed};
    auto rep = run_transfer(spec);
    o.detail << "seed " << seed << ": " << rep.fitted_limit << " (gap " << rep.gap << ") ";
    o.require(rep.gap < 0.05, "seed " + std::to_string(seed));
  }
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"count-based weight mismatch", rlr},
      {"logistic limit and convergence", logistic_limit},
      {"noisy-or limit", noisy_or},
      {"threshold limits and critical case", thresholds},
      {"projectivity of the quantifier-free chain", projectivity},
      {"quantifier elimination oracle", qe_oracle},
      {"extension axioms and limiting frequencies", extension_and_frequencies},
      {"gradient correctness", gradients},
      {"uniform convergence over the weight grid", uniform_convergence},
      {"transfer from substructures", transfer},
  };
  int failures = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %zu %s (%.1fs): %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, secs,
                o.detail.str().c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
