// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "coremerge/adapters.hpp"
#include "coremerge/mergers.hpp"

namespace coremerge {

/// One coordinate of the linear hyperparameter search. Linear sweeps walk
/// start, start + step, ...; a non-empty `discrete` set replaces the linear
/// grid. Each sweep halts on the first strict decrease versus the best score
/// seen in that sweep (plateaus continue), with a hard cap on evaluations.
struct SearchSpec {
  std::string param;  // alpha | topk | dare_p | cart_rank | cart_lambda
  double start = 0.0;
  double step = 0.0;
  std::vector<double> discrete;
  int max_evals = 64;

  void validate() const;
};

struct TraceRow {
  std::string param;
  double value = 0.0;
  double score = 0.0;
  double wall_time = 0.0;
};

struct SearchResult {
  MergeRecipe best;
  double best_score = 0.0;
  std::vector<TraceRow> trace;
};

/// Scores one candidate: receives the resolved recipe and the directory where
/// the merged bundle (plus provenance.json) was just written. Higher is better.
using BundleScorer = std::function<double(const MergeRecipe&, const std::filesystem::path&)>;

/// Wraps an external command: `command <bundle_dir>`; the command must print a
/// single real number on stdout and exit 0. Violations raise ScorerError.
BundleScorer command_scorer(const std::string& command);

/// Coordinate-wise linear search in spec order. Every searched parameter is
/// initialized to its spec start before any sweep. Each evaluation merges the
/// set, writes the bundle under work_dir, and calls the scorer. The trace is
/// streamed to trace_out (if given) so a scorer failure still leaves the
/// partial trace behind.
SearchResult linear_search(const TaskAdapterSet& set, const MergeRecipe& base,
                           const std::vector<SearchSpec>& specs, const BundleScorer& scorer,
                           const std::filesystem::path& work_dir,
                           std::ostream* trace_out = nullptr);

/// Applies a named search parameter to a recipe. Throws ArgumentError for
/// unknown names.
void apply_search_param(MergeRecipe& recipe, const std::string& param, double value);

}  // namespace coremerge
