// SPDX-License-Identifier: Apache-2.0
#include "coremerge/baseline_spaces.hpp"

namespace coremerge {

std::vector<Matrix> to_full_space(const TaskAdapterSet& set, const std::string& layer_id) {
  if (set.tasks.empty()) throw ArgumentError("to_full_space: empty task set");
  std::vector<Matrix> updates;
  updates.reserve(set.task_count());
  for (std::size_t t = 0; t < set.task_count(); ++t)
    updates.push_back(set.layer(t, layer_id).delta_w());
  return updates;
}

KnotsDecomposition knots_decompose(const std::vector<Matrix>& updates) {
  if (updates.empty()) throw ArgumentError("knots_decompose: need at least one task");
  const Index m = updates.front().rows();
  const Index n = updates.front().cols();
  for (const Matrix& u : updates)
    if (u.rows() != m || u.cols() != n)
      throw ShapeError("knots_decompose: task updates have mismatched shapes");

  const auto tasks = static_cast<Index>(updates.size());
  Matrix concat(m, n * tasks);
  for (Index t = 0; t < tasks; ++t) concat.middleCols(t * n, n) = updates[static_cast<std::size_t>(t)];

  SvdTriple svd = reduced_svd(concat);
  const Index k = svd.s.size();
  KnotsDecomposition dec;
  dec.u = std::move(svd.u);
  dec.s = std::move(svd.s);
  dec.v_blocks.reserve(static_cast<std::size_t>(tasks));
  const Matrix v = svd.vt.transpose();  // (n*T) x k
  for (Index t = 0; t < tasks; ++t) dec.v_blocks.push_back(v.middleRows(t * n, n));
  (void)k;
  return dec;
}

Matrix knots_merge(const KnotsDecomposition& dec, const MergeFunction& method,
                   bool sigma_weighted) {
  if (dec.v_blocks.empty()) throw ArgumentError("knots_merge: empty decomposition");
  if (!sigma_weighted) {
    const Matrix v_merged = method(dec.v_blocks);
    return dec.u * dec.s.asDiagonal() * v_merged.transpose();
  }
  std::vector<Matrix> weighted;
  weighted.reserve(dec.v_blocks.size());
  for (const Matrix& block : dec.v_blocks) weighted.push_back(block * dec.s.asDiagonal());
  const Matrix v_merged = method(weighted);
  return dec.u * v_merged.transpose();
}

}  // namespace coremerge
