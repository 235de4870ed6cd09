// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coremerge/adapters.hpp"
#include "coremerge/numerics.hpp"

namespace coremerge {

enum class Space { full, knots, core };
enum class Method { ta, ties, dare_ties, tsv, cart };

const char* to_string(Space s);
const char* to_string(Method m);
Space space_from_string(std::string_view s);
Method method_from_string(std::string_view s);

/// Fully-resolved configuration for one merge run. Fields not used by the
/// chosen method are ignored.
struct MergeRecipe {
  Space space = Space::core;
  Method method = Method::ta;
  bool iso_c = false;
  double alpha = 1.0;
  double top_k_percent = 100.0;       // ties / dare_ties
  double dare_p = 0.1;                // dare_ties
  std::optional<Index> tsv_k;         // tsv; default floor(min(rows,cols)/T)
  double cart_rank_fraction = 1.0;    // cart
  double cart_lambda = 1.0;           // cart
  std::uint64_t seed = 0;
  bool knots_sigma_weighted = false;  // sensitivity flag, see baseline_spaces

  void validate() const;  // throws ArgumentError
};

// ---- merge functions over same-shape matrices ------------------------------

/// Task arithmetic: alpha * sum_t mats[t].
Matrix merge_ta(const std::vector<Matrix>& mats, double alpha);

/// Per task keep the top-K percent entries by magnitude, elect the per-entry
/// sign from the sum of kept values, then average the kept values of the tasks
/// that agree with the elected sign (zero where no task agrees). Scaled by
/// alpha.
Matrix merge_ties(const std::vector<Matrix>& mats, double alpha, double top_k_percent);

/// Drop-and-rescale transform: zeroes each entry independently with
/// probability p and scales survivors by 1/(1-p). The stream is keyed by
/// (seed, task_index, layer_id) so per-layer parallel runs are reproducible.
Matrix dare_drop_rescale(const Matrix& m, double p, std::uint64_t seed,
                         std::size_t task_index, std::string_view layer_id);

/// DARE preprocessing of every task followed by merge_ties.
Matrix merge_dare_ties(const std::vector<Matrix>& mats, double alpha, double top_k_percent,
                       double dare_p, std::uint64_t seed, std::string_view layer_id = {});

/// Per task rank-k truncated SVD; stack the (u_k sigma_k) factors and the v_k
/// factors across tasks; replace each stack by its nearest orthonormal-column
/// factor (polar factor); recombine with the concatenated singular values.
Matrix merge_tsv(const std::vector<Matrix>& mats, double alpha,
                 std::optional<Index> k_per_task = std::nullopt);

/// Task arithmetic on low-rank approximations of the centered task matrices:
/// alpha * (mean + lambda * sum_t lowrank(mats[t] - mean)).
Matrix merge_cart(const std::vector<Matrix>& mats, double alpha, double rank_fraction,
                  double lambda);

/// Replaces the retained spectrum (sigma > kRankRelTol * sigma_max) by its
/// mean. The zero matrix is returned unchanged.
Matrix isotropize(const Matrix& m);

// ---- recipe runner ----------------------------------------------------------

struct MergedLayer {
  std::string layer_id;
  Matrix delta_w;       // m x n, full-space merged update
  Matrix space_object;  // the merged matrix in the recipe's space, pre-reconstruction
  double seconds = 0.0;
  std::vector<std::string> notes;
};

struct MergedUpdate {
  MergeRecipe recipe;
  std::vector<MergedLayer> layers;  // sorted by layer_id
};

/// Projects every layer into the recipe's space, applies the merge method,
/// optionally isotropizes the merged object in that same space, and
/// reconstructs the full-space update. Layers run in parallel on `workers`
/// threads with a deterministic result. Errors carry (layer, stage) context.
MergedUpdate run_recipe(const TaskAdapterSet& set, const MergeRecipe& recipe,
                        int workers = 1);

/// Factors a merged update into a single-task ("merged") adapter bundle via
/// thin SVD at numerical rank, stored at f64 precision so downstream loads
/// reproduce delta_w to double accuracy.
TaskAdapterSet to_adapter_set(const MergedUpdate& merged);

}  // namespace coremerge
