// SPDX-License-Identifier: Apache-2.0
#include "coremerge/tuning.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>

#include "coremerge/reports.hpp"

namespace coremerge {

namespace fs = std::filesystem;

void SearchSpec::validate() const {
  if (param.empty()) throw ArgumentError("search spec: empty parameter name");
  if (discrete.empty() && !(step > 0.0))
    throw ArgumentError("search spec '" + param + "': step must be > 0 for linear sweeps");
  if (max_evals < 1) throw ArgumentError("search spec '" + param + "': max_evals must be >= 1");
}

void apply_search_param(MergeRecipe& recipe, const std::string& param, double value) {
  if (param == "alpha")
    recipe.alpha = value;
  else if (param == "topk")
    recipe.top_k_percent = value;
  else if (param == "dare_p")
    recipe.dare_p = value;
  else if (param == "cart_rank")
    recipe.cart_rank_fraction = value;
  else if (param == "cart_lambda")
    recipe.cart_lambda = value;
  else
    throw ArgumentError("unknown search parameter '" + param + "'");
}

BundleScorer command_scorer(const std::string& command) {
  if (command.empty()) throw ArgumentError("scorer command is empty");
  return [command](const MergeRecipe&, const fs::path& bundle_dir) -> double {
    std::string quoted = "'";
    for (const char c : bundle_dir.string()) {
      if (c == '\'')
        quoted += "'\\''";
      else
        quoted += c;
    }
    quoted += "'";
    const std::string full = command + " " + quoted;
    FILE* pipe = popen(full.c_str(), "r");
    if (!pipe) throw ScorerError("failed to launch scorer: " + command);
    std::string output;
    char buf[256];
    while (std::fgets(buf, sizeof(buf), pipe)) output += buf;
    const int status = pclose(pipe);
    if (status != 0)
      throw ScorerError("scorer exited with status " + std::to_string(status) + ": " + command);
    char* end = nullptr;
    const double score = std::strtod(output.c_str(), &end);
    if (end == output.c_str())
      throw ScorerError("scorer printed no number: '" + output + "'");
    return score;
  };
}

SearchResult linear_search(const TaskAdapterSet& set, const MergeRecipe& base,
                           const std::vector<SearchSpec>& specs, const BundleScorer& scorer,
                           const fs::path& work_dir, std::ostream* trace_out) {
  if (specs.empty()) throw ArgumentError("linear_search: no search specs");
  for (const SearchSpec& spec : specs) spec.validate();
  if (!scorer) throw ArgumentError("linear_search: scorer is empty");

  std::error_code ec;
  fs::create_directories(work_dir, ec);
  if (ec) throw IoError(work_dir.string() + ": " + ec.message());
  const fs::path eval_dir = work_dir / "eval";

  SearchResult result;
  result.trace.reserve(16);
  if (trace_out) {
    *trace_out << trace_csv_header();
    trace_out->flush();
  }

  MergeRecipe working = base;
  // Every searched parameter begins at its grid start; sweeps never evaluate
  // below it.
  for (const SearchSpec& spec : specs) {
    const double first = spec.discrete.empty() ? spec.start : spec.discrete.front();
    apply_search_param(working, spec.param, first);
  }

  auto evaluate = [&](const MergeRecipe& recipe) -> double {
    const auto t0 = std::chrono::steady_clock::now();
    const MergedUpdate merged = run_recipe(set, recipe, /*workers=*/1);
    save_bundle(to_adapter_set(merged), eval_dir);
    {
      std::ofstream prov(eval_dir / "provenance.json");
      if (!prov) throw IoError("cannot write " + (eval_dir / "provenance.json").string());
      prov << provenance_json(merged).dump(2) << "\n";
    }
    const double score = scorer(recipe, eval_dir);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.trace.push_back({"", 0.0, score, wall});  // param/value patched by caller
    return score;
  };

  double final_score = -std::numeric_limits<double>::infinity();
  for (const SearchSpec& spec : specs) {
    double best_score = -std::numeric_limits<double>::infinity();
    double best_value = spec.discrete.empty() ? spec.start : spec.discrete.front();
    const int grid_size = spec.discrete.empty()
                              ? spec.max_evals
                              : static_cast<int>(std::min<std::size_t>(
                                    spec.discrete.size(), static_cast<std::size_t>(spec.max_evals)));
    for (int i = 0; i < grid_size; ++i) {
      const double value = spec.discrete.empty()
                               ? spec.start + spec.step * static_cast<double>(i)
                               : spec.discrete[static_cast<std::size_t>(i)];
      MergeRecipe candidate = working;
      apply_search_param(candidate, spec.param, value);
      const double score = evaluate(candidate);
      TraceRow& row = result.trace.back();
      row.param = spec.param;
      row.value = value;
      if (trace_out) {
        *trace_out << trace_csv_row(row);
        trace_out->flush();
      }
      if (score > best_score) {
        best_score = score;
        best_value = value;
      } else if (score < best_score) {
        break;  // performance declined; plateaus keep sweeping
      }
    }
    apply_search_param(working, spec.param, best_value);
    final_score = best_score;
  }

  result.best = working;
  result.best_score = final_score;
  return result;
}

}  // namespace coremerge
