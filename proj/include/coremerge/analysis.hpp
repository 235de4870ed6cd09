// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coremerge/adapters.hpp"
#include "coremerge/mergers.hpp"
#include "coremerge/numerics.hpp"

namespace coremerge {

// ---- spectral truncation ----------------------------------------------------

struct TruncationResult {
  double p = 0.0;
  Matrix truncated;
  double energy_ratio = 1.0;  // retained sum(sigma^2) / total sum(sigma^2)
};

/// Zeroes the ceil(p * k) smallest singular values of the thin SVD and
/// reconstructs. p in [0, 1).
TruncationResult truncate_merged(const Matrix& m, double p);

// ---- subspace alignment ratio ------------------------------------------------

struct SarReport {
  std::string layer_id;
  Space space = Space::full;
  Index k = 0;
  std::vector<std::string> task_names;
  // values[i][j] = |X_i P_j|_F^2 / |X_i|_F^2; nullopt when |X_i| == 0.
  std::vector<std::vector<std::optional<double>>> values;
  double average = 0.0;  // over defined off-diagonal pairs
};

/// Pairwise subspace alignment ratio between task updates in the chosen space
/// (full: delta_w; core: aligned core). P_j projects rows onto the span of
/// task j's top-k right singular vectors.
SarReport sar(const TaskAdapterSet& set, const std::string& layer_id, Space space, Index k);

// ---- cost model ---------------------------------------------------------------

/// Dominant-term operation-count model per (space, method) combination.
/// Monotone in every argument; ArgumentError on unsupported combinations.
/// `iso_c` adds the in-space isotropization term.
double estimate_ops(Space space, Method method, bool iso_c, double m, double n,
                    double tasks, double rank);

/// Least-squares slope of log(time) versus log(n). Requires >= 3 samples with
/// distinct n and positive times.
double fit_scaling_exponent(const std::vector<std::pair<double, double>>& n_time);

// ---- rank reporting -----------------------------------------------------------

struct RankReport {
  std::vector<std::pair<std::string, Index>> per_layer;
  double average = 0.0;
};

RankReport rank_report(const MergedUpdate& merged);

// ---- reference-basis ablation ---------------------------------------------------

enum class BasisVariant { first_task, random_orthonormal, concatenation };

BasisVariant basis_variant_from_string(std::string_view s);
const char* to_string(BasisVariant v);

struct AlignmentErrorRow {
  std::string task;
  std::string layer_id;
  double eps_u = 0.0;
  double eps_v = 0.0;
};

struct AlignmentErrorReport {
  std::vector<AlignmentErrorRow> rows;
  double avg_eps_u = 0.0;
  double avg_eps_v = 0.0;
};

/// Evaluates the alignment error of every task against the chosen reference
/// basis variant for one layer. `seed` feeds the random_orthonormal variant.
AlignmentErrorReport reference_basis_ablation(const TaskAdapterSet& set,
                                              const std::string& layer_id,
                                              BasisVariant variant, std::uint64_t seed = 0);

/// Same report over all layers with the concatenation bases (the production
/// configuration).
AlignmentErrorReport alignment_error_report(const TaskAdapterSet& set);

// ---- timing benchmark ------------------------------------------------------------

struct BenchCombo {
  Space space = Space::core;
  Method method = Method::ta;
  bool iso_c = false;

  std::string label() const;
};

struct BenchRecord {
  Index n = 0;
  BenchCombo combo;
  int rep = 0;
  double seconds = 0.0;
  double est_ops = 0.0;
};

/// Times run_recipe on synthetic square-layer bundles (one layer, task_count
/// adapters of the given rank) for every n in `ns` and every combo, `reps`
/// times each. Single-threaded by contract so times track the cost model.
std::vector<BenchRecord> run_benchmark(const std::vector<Index>& ns, int task_count,
                                       Index rank, const std::vector<BenchCombo>& combos,
                                       int reps, std::uint64_t seed);

/// Median-per-n exponent fits, one entry per combo label, for combos measured
/// at >= 3 distinct n.
std::vector<std::pair<std::string, double>> fit_benchmark_exponents(
    const std::vector<BenchRecord>& records);

}  // namespace coremerge
