// SPDX-License-Identifier: Apache-2.0
//
// coremerge: merge, analyze, benchmark, and tune low-rank adapter bundles.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coremerge/analysis.hpp"
#include "coremerge/baseline_spaces.hpp"
#include "coremerge/core_space.hpp"
#include "coremerge/mergers.hpp"
#include "coremerge/reports.hpp"
#include "coremerge/tuning.hpp"

namespace fs = std::filesystem;
using namespace coremerge;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitScorer = 4;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::numerical: return kExitNumerical;
    case ErrorKind::scorer: return kExitScorer;
    default: return kExitValidation;
  }
}

struct RecipeFlags {
  std::string space = "core";
  std::string method = "ta";
  bool iso_c = false;
  double alpha = 1.0;
  double topk = 100.0;
  double dare_p = 0.1;
  std::int64_t tsv_k = 0;  // 0 = default budget
  double cart_rank = 1.0;
  double cart_lambda = 1.0;
  std::uint64_t seed = 0;
  bool knots_sigma_weighted = false;

  MergeRecipe to_recipe() const {
    MergeRecipe recipe;
    recipe.space = space_from_string(space);
    recipe.method = method_from_string(method);
    recipe.iso_c = iso_c;
    recipe.alpha = alpha;
    recipe.top_k_percent = topk;
    recipe.dare_p = dare_p;
    if (tsv_k > 0) recipe.tsv_k = tsv_k;
    recipe.cart_rank_fraction = cart_rank;
    recipe.cart_lambda = cart_lambda;
    recipe.seed = seed;
    recipe.knots_sigma_weighted = knots_sigma_weighted;
    recipe.validate();
    return recipe;
  }
};

void add_recipe_flags(CLI::App* cmd, RecipeFlags& flags) {
  cmd->add_option("--space", flags.space, "Merging space: full|knots|core")
      ->check(CLI::IsMember({"full", "knots", "core"}));
  cmd->add_option("--method", flags.method, "Merge method: ta|ties|dare-ties|tsv|cart")
      ->check(CLI::IsMember({"ta", "ties", "dare-ties", "tsv", "cart"}));
  cmd->add_flag("--iso-c", flags.iso_c, "Flatten the merged spectrum in-space");
  cmd->add_option("--alpha", flags.alpha, "Scaling factor applied by the merge");
  cmd->add_option("--topk", flags.topk, "TIES: percent of entries kept per task");
  cmd->add_option("--dare-p", flags.dare_p, "DARE: per-entry drop probability");
  cmd->add_option("--tsv-k", flags.tsv_k, "TSV: per-task rank budget (0 = min(m,n)/T)");
  cmd->add_option("--cart-rank", flags.cart_rank, "CART: rank fraction of min(m,n)");
  cmd->add_option("--cart-lambda", flags.cart_lambda, "CART: centered-sum scaling");
  cmd->add_option("--seed", flags.seed, "Random seed (DARE streams)")
      ->envname("CORE_MERGE_SEED");
  cmd->add_flag("--knots-sigma-weighted", flags.knots_sigma_weighted,
                "KnOTS: fold singular values into the V blocks before merging");
}

TaskAdapterSet load_bundles(const std::vector<std::string>& paths) {
  if (paths.empty()) throw ArgumentError("no input bundle given");
  TaskAdapterSet set = load_bundle(paths.front());
  for (std::size_t i = 1; i < paths.size(); ++i) {
    TaskAdapterSet extra = load_bundle(paths[i]);
    if (extra.layer_schema.size() != set.layer_schema.size())
      throw SchemaError("bundle '" + paths[i] + "' has a different layer schema");
    for (const auto& [id, shape] : extra.layer_schema) {
      const auto it = set.layer_schema.find(id);
      if (it == set.layer_schema.end() || it->second.rows != shape.rows ||
          it->second.cols != shape.cols)
        throw SchemaError("bundle '" + paths[i] + "' layer '" + id + "' does not match");
    }
    for (auto& task : extra.tasks) {
      for (const auto& existing : set.tasks)
        if (existing.name == task.name)
          throw SchemaError("duplicate task name '" + task.name + "' across bundles");
      set.tasks.push_back(std::move(task));
    }
  }
  set.validate();
  return set;
}

void write_text(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  const fs::path path(out_path);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + out_path);
  out << text;
  if (!out) throw IoError("short write to " + out_path);
}

void emit_report(const std::string& csv, const Json& json, const std::string& format,
                 const std::string& out_path) {
  write_text(format == "json" ? json.dump(2) + "\n" : csv, out_path);
}

// ---- merge -------------------------------------------------------------------

int cmd_merge(const std::vector<std::string>& bundles, const RecipeFlags& flags,
              const std::string& out_dir, int workers) {
  if (out_dir.empty()) throw ArgumentError("merge requires --out");
  const TaskAdapterSet set = load_bundles(bundles);
  const MergeRecipe recipe = flags.to_recipe();
  const MergedUpdate merged = run_recipe(set, recipe, workers);

  save_bundle(to_adapter_set(merged), out_dir);
  const Json provenance = provenance_json(merged);
  {
    std::ofstream out(fs::path(out_dir) / "provenance.json");
    if (!out) throw IoError("cannot write " + out_dir + "/provenance.json");
    out << provenance.dump(2) << "\n";
  }
  double rank_sum = 0.0;
  for (const auto& layer : provenance.at("layers")) rank_sum += layer.at("rank").get<double>();
  std::cout << "merged " << merged.layers.size() << " layer(s) from " << set.task_count()
            << " task(s) -> " << out_dir << "\n"
            << "average rank " << (merged.layers.empty() ? 0.0 : rank_sum / merged.layers.size())
            << "\n";
  return kExitOk;
}

// ---- analyze ------------------------------------------------------------------

int cmd_analyze_error(const std::vector<std::string>& bundles, const std::string& format,
                      const std::string& out_path) {
  const TaskAdapterSet set = load_bundles(bundles);
  const AlignmentErrorReport report = alignment_error_report(set);
  emit_report(to_csv(report), to_json(report), format, out_path);
  std::cerr << "avg eps_u " << report.avg_eps_u << ", avg eps_v " << report.avg_eps_v << "\n";
  return kExitOk;
}

int cmd_analyze_sar(const std::vector<std::string>& bundles, const std::string& layer,
                    const std::string& space, std::int64_t k, const std::string& format,
                    const std::string& out_path) {
  const TaskAdapterSet set = load_bundles(bundles);
  std::vector<std::string> layers =
      layer.empty() ? set.layer_ids() : std::vector<std::string>{layer};
  std::string csv;
  Json json = Json::array();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const SarReport report = sar(set, layers[i], space_from_string(space), k);
    const std::string layer_csv = to_csv(report);
    csv += i == 0 ? layer_csv : layer_csv.substr(layer_csv.find('\n') + 1);
    json.push_back(to_json(report));
  }
  emit_report(csv, json, format, out_path);
  return kExitOk;
}

int cmd_analyze_rank(const std::vector<std::string>& bundles, const RecipeFlags& flags,
                     int workers, const std::string& format, const std::string& out_path) {
  const TaskAdapterSet set = load_bundles(bundles);
  const MergedUpdate merged = run_recipe(set, flags.to_recipe(), workers);
  const RankReport report = rank_report(merged);
  emit_report(to_csv(report), to_json(report), format, out_path);
  std::cerr << "average rank " << report.average << "\n";
  return kExitOk;
}

int cmd_analyze_truncate(const std::vector<std::string>& bundles, const RecipeFlags& flags,
                         double p, int workers, const std::string& format,
                         const std::string& out_path) {
  const TaskAdapterSet set = load_bundles(bundles);
  const MergedUpdate merged = run_recipe(set, flags.to_recipe(), workers);
  std::string csv = "layer,p,energy_ratio\n";
  Json rows = Json::array();
  for (const MergedLayer& layer : merged.layers) {
    const TruncationResult res = truncate_merged(layer.space_object, p);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s,%.12g,%.12g\n", layer.layer_id.c_str(), p,
                  res.energy_ratio);
    csv += buf;
    rows.push_back({{"layer", layer.layer_id}, {"p", p}, {"energy_ratio", res.energy_ratio}});
  }
  emit_report(csv, rows, format, out_path);
  return kExitOk;
}

int cmd_analyze_ablation(const std::vector<std::string>& bundles, const std::string& variant,
                         std::uint64_t seed, const std::string& format,
                         const std::string& out_path) {
  const TaskAdapterSet set = load_bundles(bundles);
  const BasisVariant basis = basis_variant_from_string(variant);
  AlignmentErrorReport combined;
  double sum_u = 0.0, sum_v = 0.0;
  for (const std::string& layer_id : set.layer_ids()) {
    const AlignmentErrorReport report = reference_basis_ablation(set, layer_id, basis, seed);
    for (const AlignmentErrorRow& row : report.rows) {
      combined.rows.push_back(row);
      sum_u += row.eps_u;
      sum_v += row.eps_v;
    }
  }
  const auto count = static_cast<double>(combined.rows.size());
  combined.avg_eps_u = count > 0 ? sum_u / count : 0.0;
  combined.avg_eps_v = count > 0 ? sum_v / count : 0.0;
  emit_report(to_csv(combined), to_json(combined), format, out_path);
  std::cerr << "variant " << variant << ": avg eps_u " << combined.avg_eps_u << ", avg eps_v "
            << combined.avg_eps_v << "\n";
  return kExitOk;
}

// ---- bench --------------------------------------------------------------------

std::vector<BenchCombo> parse_combos(const std::string& spec) {
  std::vector<BenchCombo> combos;
  std::size_t begin = 0;
  while (begin <= spec.size()) {
    const std::size_t end = std::min(spec.find(',', begin), spec.size());
    std::string token = spec.substr(begin, end - begin);
    begin = end + 1;
    if (token.empty()) continue;
    const std::size_t colon = token.find(':');
    if (colon == std::string::npos)
      throw ArgumentError("combo '" + token + "' must look like space:method");
    BenchCombo combo;
    combo.space = space_from_string(token.substr(0, colon));
    std::string method = token.substr(colon + 1);
    if (method == "iso-c" || method == "iso_c") {
      combo.method = Method::ta;
      combo.iso_c = true;
    } else {
      const std::size_t plus = method.find("+iso-c");
      if (plus != std::string::npos) {
        combo.iso_c = true;
        method = method.substr(0, plus);
      }
      combo.method = method_from_string(method);
    }
    combos.push_back(combo);
  }
  if (combos.empty()) throw ArgumentError("no combos given");
  return combos;
}

int cmd_bench(const std::string& n_list, int tasks, std::int64_t rank,
              const std::string& combo_spec, int reps, std::uint64_t seed,
              const std::string& format, const std::string& out_path) {
  std::vector<Index> ns;
  std::size_t begin = 0;
  while (begin <= n_list.size()) {
    const std::size_t end = std::min(n_list.find(',', begin), n_list.size());
    const std::string token = n_list.substr(begin, end - begin);
    begin = end + 1;
    if (!token.empty()) ns.push_back(static_cast<Index>(std::stoll(token)));
  }
  const std::vector<BenchCombo> combos = parse_combos(combo_spec);
  // timing contract: single worker, one layer per bundle
  const auto records = run_benchmark(ns, tasks, rank, combos, reps, seed);
  const auto exponents = fit_benchmark_exponents(records);
  emit_report(bench_csv(records, exponents), bench_json(records, exponents), format, out_path);
  for (const auto& [label, exponent] : exponents)
    std::cerr << "exponent " << label << " = " << exponent << "\n";
  return kExitOk;
}

// ---- search -------------------------------------------------------------------

SearchSpec parse_search_param(const std::string& token) {
  SearchSpec spec;
  const std::size_t eq = token.find('=');
  if (eq != std::string::npos) {
    spec.param = token.substr(0, eq);
    std::size_t begin = eq + 1;
    while (begin <= token.size()) {
      const std::size_t end = std::min(token.find(',', begin), token.size());
      const std::string value = token.substr(begin, end - begin);
      begin = end + 1;
      if (!value.empty()) spec.discrete.push_back(std::stod(value));
    }
    if (spec.discrete.empty())
      throw ArgumentError("discrete parameter '" + token + "' has no values");
    return spec;
  }
  const std::size_t c1 = token.find(':');
  const std::size_t c2 = c1 == std::string::npos ? std::string::npos : token.find(':', c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos)
    throw ArgumentError("parameter '" + token + "' must look like name:start:step or name=v1,v2");
  spec.param = token.substr(0, c1);
  spec.start = std::stod(token.substr(c1 + 1, c2 - c1 - 1));
  spec.step = std::stod(token.substr(c2 + 1));
  return spec;
}

int cmd_search(const std::vector<std::string>& bundles, const RecipeFlags& flags,
               const std::string& scorer_cmd, const std::vector<std::string>& params,
               const std::string& out_dir) {
  if (out_dir.empty()) throw ArgumentError("search requires --out");
  if (params.empty()) throw ArgumentError("search requires at least one --param");
  const TaskAdapterSet set = load_bundles(bundles);
  std::vector<SearchSpec> specs;
  for (const std::string& token : params) specs.push_back(parse_search_param(token));

  fs::create_directories(out_dir);
  std::ofstream trace(fs::path(out_dir) / "trace.csv");
  if (!trace) throw IoError("cannot write " + out_dir + "/trace.csv");

  SearchResult result;
  try {
    result = linear_search(set, flags.to_recipe(), specs, command_scorer(scorer_cmd),
                           fs::path(out_dir) / "evals", &trace);
  } catch (const Error&) {
    std::cerr << "partial trace retained at " << out_dir << "/trace.csv\n";
    throw;
  }

  Json best = {{"recipe", to_json(result.best)}, {"score", result.best_score}};
  {
    std::ofstream out(fs::path(out_dir) / "best.json");
    if (!out) throw IoError("cannot write " + out_dir + "/best.json");
    out << best.dump(2) << "\n";
  }
  std::cout << "best score " << result.best_score << " (" << result.trace.size()
            << " evaluations) -> " << out_dir << "/best.json\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Low-rank adapter merging in full, KnOTS, and core alignment spaces"};
  app.require_subcommand(1);

  std::vector<std::string> bundles;
  std::string out_path;
  std::string format = "csv";
  int workers = 1;

  RecipeFlags merge_flags;
  CLI::App* merge = app.add_subcommand("merge", "Merge a multi-task bundle");
  merge->add_option("bundle", bundles, "Input bundle directories")->required();
  add_recipe_flags(merge, merge_flags);
  merge->add_option("--out", out_path, "Output bundle directory")->required();
  merge->add_option("--workers", workers, "Layer-parallel worker threads");

  CLI::App* analyze = app.add_subcommand("analyze", "Weight-space reports");
  analyze->require_subcommand(1);

  CLI::App* an_error = analyze->add_subcommand("error", "Alignment error per task and layer");
  an_error->add_option("bundle", bundles)->required();
  an_error->add_option("--out", out_path, "Report path (default stdout)");
  an_error->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));

  std::string sar_layer, sar_space = "full";
  std::int64_t sar_k = 0;
  CLI::App* an_sar = analyze->add_subcommand("sar", "Pairwise subspace alignment ratio");
  an_sar->add_option("bundle", bundles)->required();
  an_sar->add_option("--layer", sar_layer, "Restrict to one layer");
  an_sar->add_option("--space", sar_space)->check(CLI::IsMember({"full", "core"}));
  an_sar->add_option("--k", sar_k, "Projector width (default: task rank)");
  an_sar->add_option("--out", out_path);
  an_sar->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));

  RecipeFlags rank_flags;
  CLI::App* an_rank = analyze->add_subcommand("rank", "Numerical rank of the merged update");
  an_rank->add_option("bundle", bundles)->required();
  add_recipe_flags(an_rank, rank_flags);
  an_rank->add_option("--workers", workers);
  an_rank->add_option("--out", out_path);
  an_rank->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));

  RecipeFlags trunc_flags;
  double trunc_p = 0.0;
  CLI::App* an_trunc =
      analyze->add_subcommand("truncate", "Spectral energy retained after truncation");
  an_trunc->add_option("bundle", bundles)->required();
  add_recipe_flags(an_trunc, trunc_flags);
  an_trunc->add_option("--p", trunc_p, "Fraction of singular values dropped")->required();
  an_trunc->add_option("--workers", workers);
  an_trunc->add_option("--out", out_path);
  an_trunc->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));

  std::string ablation_variant = "concatenation";
  std::uint64_t ablation_seed = 0;
  CLI::App* an_abl = analyze->add_subcommand("ablation", "Reference-basis ablation");
  an_abl->add_option("bundle", bundles)->required();
  an_abl->add_option("--variant", ablation_variant)
      ->check(CLI::IsMember({"first-task", "random", "concatenation"}));
  an_abl->add_option("--seed", ablation_seed)->envname("CORE_MERGE_SEED");
  an_abl->add_option("--out", out_path);
  an_abl->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));

  std::string bench_ns = "256,512";
  int bench_tasks = 6;
  std::int64_t bench_rank = 16;
  std::string bench_combos = "core:ta,core:iso-c,knots:iso-c";
  int bench_reps = 3;
  std::uint64_t bench_seed = 0;
  CLI::App* bench = app.add_subcommand("bench", "Wall-time scaling benchmark");
  bench->add_option("--n-list", bench_ns, "Comma-separated square sizes");
  bench->add_option("--tasks", bench_tasks, "Number of synthetic tasks");
  bench->add_option("--rank", bench_rank, "Adapter rank per task");
  bench->add_option("--combos", bench_combos, "space:method list, e.g. core:ta,knots:iso-c");
  bench->add_option("--reps", bench_reps, "Repetitions per cell");
  bench->add_option("--seed", bench_seed)->envname("CORE_MERGE_SEED");
  bench->add_option("--out", out_path);
  bench->add_option("--format", format)->check(CLI::IsMember({"csv", "json"}));

  RecipeFlags search_flags;
  std::string scorer_cmd;
  std::vector<std::string> search_params;
  CLI::App* search = app.add_subcommand("search", "Linear hyperparameter search");
  search->add_option("bundle", bundles)->required();
  add_recipe_flags(search, search_flags);
  search->add_option("--scorer", scorer_cmd, "Command invoked with the merged bundle path")
      ->required();
  search->add_option("--param", search_params,
                     "Search coordinate: name:start:step or name=v1,v2,... (order matters)")
      ->required();
  search->add_option("--out", out_path, "Directory for trace.csv and best.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return kExitValidation;
  }

  try {
    if (merge->parsed()) return cmd_merge(bundles, merge_flags, out_path, workers);
    if (an_error->parsed()) return cmd_analyze_error(bundles, format, out_path);
    if (an_sar->parsed()) {
      const TaskAdapterSet probe = load_bundles(bundles);
      if (sar_k <= 0) {
        Index max_rank = 1;
        for (std::size_t t = 0; t < probe.task_count(); ++t)
          for (const auto& [id, layer] : probe.tasks[t].layers)
            max_rank = std::max(max_rank, layer.rank());
        sar_k = max_rank;
      }
      return cmd_analyze_sar(bundles, sar_layer, sar_space, sar_k, format, out_path);
    }
    if (an_rank->parsed())
      return cmd_analyze_rank(bundles, rank_flags, workers, format, out_path);
    if (an_trunc->parsed())
      return cmd_analyze_truncate(bundles, trunc_flags, trunc_p, workers, format, out_path);
    if (an_abl->parsed())
      return cmd_analyze_ablation(bundles, ablation_variant, ablation_seed, format, out_path);
    if (bench->parsed())
      return cmd_bench(bench_ns, bench_tasks, bench_rank, bench_combos, bench_reps, bench_seed,
                       format, out_path);
    if (search->parsed())
      return cmd_search(bundles, search_flags, scorer_cmd, search_params, out_path);
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitValidation;
}
