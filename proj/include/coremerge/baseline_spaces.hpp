// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "coremerge/adapters.hpp"
#include "coremerge/numerics.hpp"

namespace coremerge {

/// Dense per-task updates delta_w = b * a for one layer, in task order.
std::vector<Matrix> to_full_space(const TaskAdapterSet& set, const std::string& layer_id);

/// Thin SVD of the horizontal concatenation [dW_1 ... dW_T] (m x nT), with the
/// right factor split back into per-task n x k blocks.
struct KnotsDecomposition {
  Matrix u;                     // m x k
  Vector s;                     // k
  std::vector<Matrix> v_blocks; // T blocks, each n x k
};

KnotsDecomposition knots_decompose(const std::vector<Matrix>& updates);

using MergeFunction = std::function<Matrix(const std::vector<Matrix>&)>;

/// Applies `method` to the V blocks and reconstructs u * diag(s) * v_merged^T.
/// With sigma_weighted the singular values are folded into the blocks before
/// merging and the reconstruction omits them (sensitivity variant; the default
/// merges raw V blocks).
Matrix knots_merge(const KnotsDecomposition& dec, const MergeFunction& method,
                   bool sigma_weighted = false);

}  // namespace coremerge
