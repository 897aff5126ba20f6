#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "freqnet/freqnet.hpp"

using namespace freqnet;

namespace {

enum Exit { kOk = 0, kUsage = 1, kModelError = 2, kCritical = 3 };

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Model load_model(const std::string& path) {
  try {
    return parse_model(read_file(path));
  } catch (const SourceError& e) {
    throw ModelError(path + ":" + e.what());
  }
}

// "person=4" entries, or a single bare number applied to every sort.
DomainSizes parse_sizes(const std::vector<std::string>& items, const Signature& sig) {
  DomainSizes out;
  for (const auto& item : items) {
    auto eq = item.find('=');
    try {
      if (eq == std::string::npos) {
        const auto n = std::stoll(item);
        for (const auto& s : sig.sorts()) out.set(s, n);
      } else {
        const std::string sort = item.substr(0, eq);
        if (!sig.has_sort(sort)) throw ModelError("unknown sort '" + sort + "' in --size");
        out.set(sort, std::stoll(item.substr(eq + 1)));
      }
    } catch (const std::invalid_argument&) {
      throw ModelError("bad --size entry '" + item + "'");
    }
  }
  out.check_covers(sig);
  return out;
}

Query parse_query(const std::string& target, const std::string& evidence, const Signature& sig) {
  auto t = parse_literals(target, sig);
  if (t.size() != 1) throw ModelError("--query must be a single ground literal");
  return Query{t.front(), parse_literals(evidence, sig)};
}

struct Globals {
  std::uint64_t seed = 0;
  std::uint64_t samples = 10000;
  size_t cap = default_cap();
  std::string out;
  bool force = false;
  unsigned threads = default_threads();
};

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_ = std::make_unique<std::ofstream>(path);
      if (!*file_) throw ModelError("cannot write '" + path + "'");
    }
  }
  std::ostream& operator*() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

std::string describe_limit(const QfLbn& qf) {
  try {
    return print_model(to_model(qf));
  } catch (const ModelError&) {
    // Diagonal patterns differ from the generic one: list every table.
  }
  const auto& sig = qf.signature();
  std::string out;
  for (size_t r : qf.order())
    for (const auto& [pattern, t] : qf.tables(r))
      for (std::uint64_t row = 0; row < t.q.size(); ++row) {
        if (!t.defined[row]) continue;
        std::vector<char> v(t.context.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = (row >> i) & 1U;
        std::string head = sig.relation(r).name + "(";
        for (size_t j = 0; j < pattern.size(); ++j)
          head += (j ? ", " : "") + t.vars[static_cast<size_t>(pattern[j])].name;
        out += head + ") | " + detail::describe_row(sig, t.vars, t.context, v) + " => " + format_double(t.q[row]) +
               "\n";
      }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lifted Bayesian networks with frequency-based semantics"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Master random seed");
  app.add_option("--samples", g.samples, "Monte Carlo samples");
  app.add_option("--cap", g.cap, "Enumeration cap in ground atoms");
  app.add_option("--out", g.out, "Write output to this file instead of stdout");
  app.add_flag("--force", g.force, "Compile limits of functions that are not interior-preserving");
  app.add_option("--threads", g.threads, "Sampling threads");

  std::string model_path, structure_path, formula, query, evidence, relation, generator, skeleton;
  std::vector<std::string> sizes, bindings, data_paths;
  std::vector<std::int64_t> schedule;

  auto* eval = app.add_subcommand("eval", "Evaluate a formula on a structure");
  eval->add_option("--model", model_path, "Model file (.cplm) providing the signature")->required();
  eval->add_option("--structure", structure_path, "Structure file (.cpls)")->required();
  eval->add_option("--formula", formula, "Formula")->required();
  eval->add_option("--bind", bindings, "Free variable binding var=element");

  auto* ground_cmd = app.add_subcommand("ground", "Show the induced ground network");
  bool list_atoms = false;
  ground_cmd->add_option("--model", model_path)->required();
  ground_cmd->add_option("--size", sizes, "Domain sizes: sort=n or n")->required();
  ground_cmd->add_flag("--list", list_atoms, "List every ground atom");

  auto* infer = app.add_subcommand("infer", "Query probability");
  bool exact = false, lw = false;
  infer->add_option("--model", model_path)->required();
  infer->add_option("--size", sizes)->required();
  infer->add_option("--query", query, "Ground literal, e.g. R(0)")->required();
  infer->add_option("--evidence", evidence, "Comma-separated ground literals");
  auto* ex = infer->add_flag("--exact", exact, "Exact enumeration");
  infer->add_flag("--lw", lw, "Likelihood weighting")->excludes(ex);

  auto* sample = app.add_subcommand("sample", "Forward-sample a world");
  sample->add_option("--model", model_path)->required();
  sample->add_option("--size", sizes)->required();

  auto* compile = app.add_subcommand("compile-limit", "Compile the asymptotic quantifier-free limit");
  compile->add_option("--model", model_path)->required();

  auto* projective = app.add_subcommand("check-projective", "Compare exact query answers across domain sizes");
  projective->add_option("--model", model_path)->required();
  projective->add_option("--sizes", schedule, "Domain sizes")->required()->delimiter(',');
  projective->add_option("--query", query)->required();
  projective->add_option("--evidence", evidence);

  auto* converge = app.add_subcommand("converge", "Estimates against the limit over domain sizes (CSV)");
  converge->add_option("--model", model_path)->required();
  converge->add_option("--relation", relation, "Query relation")->required();
  converge->add_option("--sizes", schedule)->required()->delimiter(',');

  auto* sweep = app.add_subcommand("sweep-uniform", "Gap to the limit over a parameter grid (CSV)");
  size_t param_index = 0;
  double lo = -3, hi = 3, step = 0.5;
  sweep->add_option("--model", model_path)->required();
  sweep->add_option("--relation", relation)->required();
  sweep->add_option("--param", param_index, "Index of the swept parameter");
  sweep->add_option("--lo", lo);
  sweep->add_option("--hi", hi);
  sweep->add_option("--step", step);
  sweep->add_option("--sizes", schedule)->delimiter(',');

  auto* learn = app.add_subcommand("learn", "Fit parameters on observed structures");
  FitConfig fit_cfg;
  bool frequencies = false, finite_diff = false;
  learn->add_option("--model", model_path)->required();
  learn->add_option("--data", data_paths, "Structure files (.cpls)")->required();
  learn->add_flag("--frequencies", frequencies, "Partition models: set case probabilities to relative frequencies");
  learn->add_option("--rate", fit_cfg.learning_rate);
  learn->add_option("--max-iter", fit_cfg.max_iterations);
  learn->add_option("--tolerance", fit_cfg.tolerance);
  learn->add_flag("--finite-difference", finite_diff);

  auto* transfer = app.add_subcommand("transfer", "Fit on substructures of a generated world");
  std::int64_t tn = 1000, tm = 50;
  int tk = 50;
  transfer->add_option("--generator", generator)->required();
  transfer->add_option("--skeleton", skeleton, "Starting model (defaults to the generator)");
  transfer->add_option("--relation", relation)->required();
  transfer->add_option("-n,--n", tn, "Generated domain size");
  transfer->add_option("-k,--k", tk, "Number of substructures");
  transfer->add_option("-m,--m", tm, "Substructure size");

  app.add_subcommand("rlr-mismatch", "Count-based logistic weights at 10 and 100 related objects");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    Output out(g.out);
    const CompileOptions copt{g.force, kDiagramCap};
    auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();

    if (name == "eval") {
      Model m = load_model(model_path);
      Structure s = parse_structure(read_file(structure_path), m.signature_ptr());
      Formula f = parse_formula(formula, m.signature());
      VarBinding b;
      const auto free = free_variables(f);
      for (const auto& item : bindings) {
        auto eq = item.find('=');
        if (eq == std::string::npos) throw ModelError("bad --bind entry '" + item + "'");
        const std::string var = item.substr(0, eq);
        auto it = std::find_if(free.begin(), free.end(), [&](const Variable& v) { return v.name == var; });
        if (it == free.end()) throw ModelError("'" + var + "' is not a free variable of the formula");
        b.bind(*it, std::stoi(item.substr(eq + 1)));
      }
      for (const auto& v : free)
        if (std::none_of(b.entries().begin(), b.entries().end(), [&](const auto& e) { return e.first.name == v.name; }))
          throw ModelError("free variable '" + v.name + "' needs --bind");
      *out << (evaluate(s, b, f) ? "true" : "false") << '\n';
    } else if (name == "ground") {
      Model m = load_model(model_path);
      auto net = freqnet::ground(m, parse_sizes(sizes, m.signature()));
      for (const auto& l : net.layers()) *out << m.signature().relation(l.rel).name << ' ' << l.count << '\n';
      *out << "total " << net.atom_count() << '\n';
      if (list_atoms)
        for (const auto& a : net.atoms()) *out << atom_name(m.signature(), a.rel, a.args) << '\n';
    } else if (name == "infer") {
      Model m = load_model(model_path);
      const auto ds = parse_sizes(sizes, m.signature());
      const Query q = parse_query(query, evidence, m.signature());
      if (lw) {
        auto est = estimate_query(m, ds, q, g.samples, g.seed, {g.threads, false});
        *out << std::setprecision(10) << est.value << " +- " << est.std_error << '\n';
      } else {
        *out << std::setprecision(10) << exact_query(m, ds, q, g.cap) << '\n';
      }
    } else if (name == "sample") {
      Model m = load_model(model_path);
      *out << print_structure(forward_sample(m, parse_sizes(sizes, m.signature()), g.seed));
    } else if (name == "compile-limit") {
      Model m = load_model(model_path);
      *out << describe_limit(compile_any(m, copt));
    } else if (name == "check-projective") {
      Model m = load_model(model_path);
      auto rep = check_projectivity(m, schedule, {parse_query(query, evidence, m.signature())}, g.cap);
      *out << "n,probability\n" << std::setprecision(15);
      for (size_t i = 0; i < rep.sizes.size(); ++i) *out << rep.sizes[i] << ',' << rep.values[0][i] << '\n';
      *out << "# max deviation " << rep.max_deviation << (rep.projective ? " (projective)" : " (not projective)")
           << '\n';
    } else if (name == "converge") {
      ConvergenceSpec spec{load_model(model_path), relation, schedule, g.samples, g.seed, g.threads, true, copt};
      write_convergence_csv(*out, run_convergence(spec));
    } else if (name == "sweep-uniform") {
      SweepSpec spec{load_model(model_path), relation, param_index, lo, hi, step};
      if (!schedule.empty()) spec.sizes = schedule;
      spec.samples = g.samples;
      spec.seed = g.seed;
      spec.threads = g.threads;
      spec.compile = copt;
      auto res = run_uniform_sweep(spec);
      write_sweep_csv(*out, res);
      if (!res.continuous) std::cerr << "warning: limit jumps exceed the Lipschitz bound\n";
    } else if (name == "learn") {
      Model m = load_model(model_path);
      std::vector<Structure> data;
      for (const auto& p : data_paths) data.push_back(parse_structure(read_file(p), m.signature_ptr()));
      if (frequencies) {
        if (data.size() != 1) throw ModelError("--frequencies expects exactly one --data structure");
        auto fit = fit_partition_frequencies(m, data.front());
        for (const auto& d : fit.diagnostics) std::cerr << "note: " << d << '\n';
        *out << print_model(fit.model);
      } else {
        fit_cfg.seed = g.seed;
        fit_cfg.gradient = finite_diff ? GradientMode::FiniteDifference : GradientMode::Analytic;
        fit_cfg.compile = copt;
        auto fit = fit_params(m, data, fit_cfg);
        for (const auto& d : fit.diagnostics) std::cerr << "note: " << d << '\n';
        write_fit_csv(*out, m, fit);
      }
    } else if (name == "transfer") {
      Model gen = load_model(generator);
      Model start = skeleton.empty() ? gen : load_model(skeleton);
      TransferSpec spec{gen, start, relation, tn, tk, tm, g.seed};
      spec.fit.compile = copt;
      auto rep = run_transfer(spec);
      *out << std::setprecision(10) << "true_limit,fitted_limit,gap\n"
           << rep.true_limit << ',' << rep.fitted_limit << ',' << rep.gap << '\n';
      write_fit_csv(*out, start, rep.fit);
    } else if (name == "rlr-mismatch") {
      auto r = run_rlr_mismatch();
      *out << std::setprecision(10) << "w_small,w_large,transfer\n"
           << r.w_small << ',' << r.w_large << ',' << r.transfer << '\n';
    }
    return kOk;
  } catch (const CriticalThreshold& e) {
    std::cerr << "CRITICAL: " << e.what() << '\n';
    return kCritical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kModelError;
  }
}
