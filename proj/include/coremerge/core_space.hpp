// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "coremerge/adapters.hpp"
#include "coremerge/numerics.hpp"

namespace coremerge {

/// Shared orthonormal bases spanning the union of the per-task subspaces.
/// u_b_ref holds the left singular vectors of the horizontally stacked B
/// factors, v_a_ref the right singular vectors of the vertically stacked A
/// factors, both truncated to the intrinsic rank of the stack (singular
/// values above kRankRelTol * sigma_max).
struct ReferenceBases {
  Matrix u_b_ref;  // m x d_u, orthonormal columns
  Matrix v_a_ref;  // n x d_v, orthonormal columns

  Index d_u() const { return u_b_ref.cols(); }
  Index d_v() const { return v_a_ref.cols(); }
};

/// Least-squares maps expressing a task's singular bases in the reference
/// bases: r_b = u_b_ref^T u_b_task, q_a = v_a_ref^T v_a_task.
struct AlignmentMaps {
  Matrix r_b;  // d_u x k_b
  Matrix q_a;  // d_v x k_a
};

ReferenceBases build_reference_bases(const std::vector<AdapterLayer>& task_layers);
ReferenceBases build_reference_bases(const TaskAdapterSet& set, const std::string& layer_id);

/// Aligned core matrix, optimized path: (u_ref^T b) (a v_ref). This is the
/// production route; it never decomposes the per-task factors.
Matrix aligned_core(const AdapterLayer& layer, const ReferenceBases& refs);

/// Aligned core via per-task SVDs: m_core = s_b v_b^T u_a s_a, then
/// r_b m_core q_a^T. Retained as the cross-validation route; must agree with
/// aligned_core to float precision.
Matrix aligned_core_via_svd(const AdapterLayer& layer, const ReferenceBases& refs);

/// Projects a (merged) core matrix back to the full space:
/// u_b_ref * m_merged * v_a_ref^T.
Matrix reconstruct(const Matrix& m_merged, const ReferenceBases& refs);

/// Residuals of the optimal least-squares fit of the task bases in the
/// reference bases: eps_u = r_eff - |u_b^T u_ref|_F^2 over the task's
/// effective left singular basis (same for eps_v on the right). Zero, up to
/// float noise, whenever the references span the task subspaces.
std::pair<double, double> alignment_error(const AdapterLayer& layer,
                                          const ReferenceBases& refs);

}  // namespace coremerge
