// Command-line driver: plan, prune, metrics, ap, arch.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "epruner/epruner.hpp"

namespace {

using namespace epruner;

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

/// A descriptor path, or a built-in name (optionally with a .json suffix).
ArchitectureGraph resolve_architecture(const std::string& arg) {
  namespace fs = std::filesystem;
  if (fs::exists(arg)) return load_architecture(arg);
  std::string stem = fs::path(arg).filename().string();
  if (stem.size() > 5 && stem.ends_with(".json")) stem.resize(stem.size() - 5);
  if (auto g = builtin_architecture(stem)) return *g;
  std::string names;
  for (const auto& n : builtin_architecture_names()) names += " " + n;
  throw DescriptorError(arg + ": no such descriptor file or built-in architecture (built-ins:" + names + ")");
}

std::vector<std::vector<double>> read_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(path + ": cannot open matrix file");
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::vector<double> row;
    std::string tok;
    while (ss >> tok) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw Error(path + ":" + std::to_string(lineno) + ": not a number: '" + tok + "'");
      }
    }
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DimensionError(path + ":" + std::to_string(lineno) + ": expected " + std::to_string(rows.front().size()) +
                           " values, got " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DimensionError(path + ": matrix is empty");
  return rows;
}

void print_plan_summary(const ArchitectureGraph& arch, const PruningPlan& p, double seconds) {
  std::printf("%-24s %10s %10s\n", "layer", "baseline", "kept");
  for (std::size_t i = 0; i < arch.size(); ++i) {
    if (!arch.layer(i).prunable) continue;
    std::printf("%-24s %10zu %10zu\n", arch.layer(i).name.c_str(), arch.shape(i).channels,
                p.layers[i].kept_filters.size());
  }
  std::printf("channels kept %zu / %zu (beta %.4g, %.2fs)\n", p.channels_kept, p.channels_baseline, p.beta, seconds);
}

struct ApFlags {
  double damping = 0.5;
  std::size_t iterations = 200;
  bool early_exit = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--lambda", damping, "Damping factor in [0, 1]")->capture_default_str();
    cmd->add_option("--iterations", iterations, "Message-passing rounds")->capture_default_str();
    cmd->add_flag("--early-exit", early_exit, "Stop once assignments are stable for 20 rounds");
  }
  [[nodiscard]] ApOptions options() const {
    ApOptions o;
    o.damping = damping;
    o.iterations = iterations;
    o.early_exit = early_exit;
    return o;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exemplar-based filter pruning for CNN weight bundles"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");
  app.footer("Environment: EPRUNER_THREADS caps worker threads.");

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "Select exemplar filters and write a pruning plan");
  std::string arch_path, bundle_path, out_path, plan_path, out_arch, out_plan, init_name = "exemplar";
  double beta = 0.0;
  std::size_t threads = 0;
  std::uint64_t seed = 0;
  double sparsity = 0.0;
  ApFlags ap_flags;
  plan_cmd->add_option("--arch", arch_path, "Architecture descriptor (JSON) or built-in name")->required();
  plan_cmd->add_option("--bundle", bundle_path, "Weight bundle")->required()->check(CLI::ExistingFile);
  plan_cmd->add_option("--beta", beta, "Preference scale in (0, 1]")->required();
  plan_cmd->add_option("--out", out_path, "Plan file to write")->required();
  plan_cmd->add_option("--threads", threads, "Worker threads (0 = all cores)");
  ap_flags.attach(plan_cmd);

  // prune
  auto* prune_cmd = app.add_subcommand("prune", "Write a pruned weight bundle");
  prune_cmd->add_option("--arch", arch_path, "Architecture descriptor (JSON) or built-in name")->required();
  prune_cmd->add_option("--bundle", bundle_path, "Weight bundle")->required()->check(CLI::ExistingFile);
  auto* plan_opt = prune_cmd->add_option("--plan", plan_path, "Existing plan file")->check(CLI::ExistingFile);
  auto* beta_opt = prune_cmd->add_option("--beta", beta, "Plan on the fly with this beta");
  plan_opt->excludes(beta_opt);
  prune_cmd->add_option("--init", init_name, "Initialization: exemplar | proj | l1 | random")
      ->check(CLI::IsMember({"exemplar", "proj", "l1", "random"}))
      ->capture_default_str();
  prune_cmd->add_option("--seed", seed, "Seed for proj/random initialization")->capture_default_str();
  prune_cmd->add_option("--sparsity", sparsity, "Random-projection sparsity s (0 = sqrt of source dim)");
  prune_cmd->add_option("--out", out_path, "Pruned bundle to write")->required();
  prune_cmd->add_option("--out-arch", out_arch, "Also write the pruned architecture descriptor");
  prune_cmd->add_option("--out-plan", out_plan, "Also write the plan used");
  prune_cmd->add_option("--threads", threads, "Worker threads (0 = all cores)");
  ap_flags.attach(prune_cmd);

  // metrics
  auto* metrics_cmd = app.add_subcommand("metrics", "Count channels, FLOPs and parameters");
  std::string format = "both";
  metrics_cmd->add_option("--arch", arch_path, "Architecture descriptor (JSON) or built-in name")->required();
  metrics_cmd->add_option("--plan", plan_path, "Plan to apply")->check(CLI::ExistingFile);
  metrics_cmd->add_option("--format", format, "table | json | both")
      ->check(CLI::IsMember({"table", "json", "both"}))
      ->capture_default_str();

  // ap
  auto* ap_cmd = app.add_subcommand("ap", "Run exemplar selection on a plain-text matrix");
  std::string matrix_path;
  bool filters = false;
  ap_cmd->add_option("matrix", matrix_path, "Square similarity matrix (rows of whitespace-separated numbers)")
      ->required()
      ->check(CLI::ExistingFile);
  ap_cmd->add_flag("--filters", filters, "Treat rows as filters and build similarities with --beta");
  ap_cmd->add_option("--beta", beta, "Preference scale for --filters");
  ap_flags.attach(ap_cmd);

  // arch
  auto* arch_cmd = app.add_subcommand("arch", "Print a descriptor (built-in or file) in normalized form");
  std::string arch_name;
  arch_cmd->add_option("name", arch_name, "Descriptor path or built-in name")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*plan_cmd) {
      const ArchitectureGraph arch = resolve_architecture(arch_path);
      const ModelBundle bundle = read_bundle(bundle_path);
      const auto start = std::chrono::steady_clock::now();
      const PruningPlan p = plan(arch, bundle, beta, {ap_flags.options(), threads});
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      save_plan(p, out_path);
      print_plan_summary(arch, p, secs);
    } else if (*prune_cmd) {
      if (plan_path.empty() && beta_opt->count() == 0) {
        std::cerr << "prune: one of --plan or --beta is required\n" << prune_cmd->help();
        return kUsageError;
      }
      const ArchitectureGraph arch = resolve_architecture(arch_path);
      const ModelBundle bundle = read_bundle(bundle_path);
      const PruningPlan p =
          plan_path.empty() ? plan(arch, bundle, beta, {ap_flags.options(), threads}) : load_plan(plan_path);
      InitOptions init;
      init.strategy = *parse_init_strategy(init_name);
      init.seed = seed;
      init.projection.sparsity = sparsity;
      write_bundle(prune_bundle(arch, bundle, p, init), out_path);
      if (!out_plan.empty()) save_plan(p, out_plan);
      if (!out_arch.empty()) {
        std::ofstream f(out_arch, std::ios::binary | std::ios::trunc);
        if (!f) throw Error(out_arch + ": cannot open for writing");
        f << to_json(prune_architecture(arch, p)).dump(2) << '\n';
      }
      const PruningReport r = compare(arch, p);
      std::cout << format_table(r.baseline, r.pruned);
    } else if (*metrics_cmd) {
      const ArchitectureGraph arch = resolve_architecture(arch_path);
      const ComplexityReport base = count(arch);
      std::optional<ComplexityReport> pruned;
      nlohmann::ordered_json doc;
      if (!plan_path.empty()) {
        const PruningPlan p = load_plan(plan_path);
        pruned = count(arch, &p);
        doc = to_json(PruningReport{base, *pruned});
      } else {
        doc = to_json(base);
      }
      if (format != "json") std::cout << format_table(base, pruned);
      if (format == "both") std::cout << '\n';
      if (format != "table") std::cout << doc.dump(2) << '\n';
    } else if (*ap_cmd) {
      const auto rows = read_matrix(matrix_path);
      ExemplarResult result;
      if (filters) {
        std::vector<double> flat;
        for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
        result = select_exemplars(FilterMatrix(rows.size(), rows.front().size(), false, std::move(flat)), beta,
                                  ap_flags.options());
      } else {
        if (rows.size() != rows.front().size()) {
          throw DimensionError(matrix_path + ": similarity matrix must be square (" + std::to_string(rows.size()) +
                               " rows, " + std::to_string(rows.front().size()) + " columns)");
        }
        std::vector<double> flat;
        for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
        result = run_ap(SimilarityMatrix(rows.size(), std::move(flat)), ap_flags.options());
      }
      for (std::size_t e : result.exemplars) std::cout << e << '\n';
    } else if (*arch_cmd) {
      std::cout << to_json(resolve_architecture(arch_name)).dump(2) << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return 0;
}
