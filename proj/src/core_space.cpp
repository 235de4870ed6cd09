// SPDX-License-Identifier: Apache-2.0
#include "coremerge/core_space.hpp"

#include <string>

namespace coremerge {

namespace {

Index effective_count(const Vector& s) {
  if (s.size() == 0 || s(0) <= 0.0) return 0;
  const double cut = kRankRelTol * s(0);
  Index k = 0;
  while (k < s.size() && s(k) > cut) ++k;
  return k;
}

}  // namespace

ReferenceBases build_reference_bases(const std::vector<AdapterLayer>& task_layers) {
  if (task_layers.empty())
    throw ArgumentError("build_reference_bases: need at least one task");
  const Index m = task_layers.front().out_dim();
  const Index n = task_layers.front().in_dim();
  Index total_rank = 0;
  for (const AdapterLayer& layer : task_layers) {
    if (layer.out_dim() != m || layer.in_dim() != n)
      throw ShapeError("build_reference_bases: layer '" + layer.layer_id +
                       "' dimensions disagree across tasks");
    total_rank += layer.rank();
  }

  Matrix b_stack(m, total_rank);   // [B_1 ... B_T]
  Matrix a_stack(total_rank, n);   // [A_1; ...; A_T]
  Index offset = 0;
  for (const AdapterLayer& layer : task_layers) {
    b_stack.middleCols(offset, layer.rank()) = layer.b;
    a_stack.middleRows(offset, layer.rank()) = layer.a;
    offset += layer.rank();
  }

  const SvdTriple b_svd = reduced_svd(b_stack);
  const SvdTriple a_svd = reduced_svd(a_stack);
  // Intrinsic-rank truncation: directions at float-noise level contribute
  // nothing to the span and would break orthonormality checks downstream.
  const Index d_u = effective_count(b_svd.s);
  const Index d_v = effective_count(a_svd.s);
  return {b_svd.u.leftCols(d_u), a_svd.vt.topRows(d_v).transpose()};
}

ReferenceBases build_reference_bases(const TaskAdapterSet& set, const std::string& layer_id) {
  std::vector<AdapterLayer> layers;
  layers.reserve(set.task_count());
  for (std::size_t t = 0; t < set.task_count(); ++t) layers.push_back(set.layer(t, layer_id));
  return build_reference_bases(layers);
}

namespace {

void check_layer_vs_refs(const AdapterLayer& layer, const ReferenceBases& refs) {
  if (layer.b.rows() != refs.u_b_ref.rows())
    throw ShapeError("layer '" + layer.layer_id + "': b has " + std::to_string(layer.b.rows()) +
                     " rows, reference basis has " + std::to_string(refs.u_b_ref.rows()));
  if (layer.a.cols() != refs.v_a_ref.rows())
    throw ShapeError("layer '" + layer.layer_id + "': a has " + std::to_string(layer.a.cols()) +
                     " cols, reference basis has " + std::to_string(refs.v_a_ref.rows()));
}

}  // namespace

Matrix aligned_core(const AdapterLayer& layer, const ReferenceBases& refs) {
  check_layer_vs_refs(layer, refs);
  // (u_ref^T b)(a v_ref): never materializes the m x n product.
  return (refs.u_b_ref.transpose() * layer.b) * (layer.a * refs.v_a_ref);
}

Matrix aligned_core_via_svd(const AdapterLayer& layer, const ReferenceBases& refs) {
  check_layer_vs_refs(layer, refs);
  const SvdTriple b_svd = reduced_svd(layer.b);  // b = u_b s_b vt_b
  const SvdTriple a_svd = reduced_svd(layer.a);  // a = u_a s_a vt_a
  // core matrix in the task's own singular bases
  const Matrix core = b_svd.s.asDiagonal() * (b_svd.vt * a_svd.u) * a_svd.s.asDiagonal();
  const AlignmentMaps maps{refs.u_b_ref.transpose() * b_svd.u,
                           refs.v_a_ref.transpose() * a_svd.vt.transpose()};
  return maps.r_b * core * maps.q_a.transpose();
}

Matrix reconstruct(const Matrix& m_merged, const ReferenceBases& refs) {
  if (m_merged.rows() != refs.d_u() || m_merged.cols() != refs.d_v())
    throw ShapeError("reconstruct: core is " + std::to_string(m_merged.rows()) + "x" +
                     std::to_string(m_merged.cols()) + ", references expect " +
                     std::to_string(refs.d_u()) + "x" + std::to_string(refs.d_v()));
  return refs.u_b_ref * m_merged * refs.v_a_ref.transpose();
}

std::pair<double, double> alignment_error(const AdapterLayer& layer, const ReferenceBases& refs) {
  check_layer_vs_refs(layer, refs);
  const SvdTriple b_svd = reduced_svd(layer.b);
  const SvdTriple a_svd = reduced_svd(layer.a);
  // Only directions carrying signal enter the residual; zero singular values
  // have arbitrary basis vectors.
  const Index kb = effective_count(b_svd.s);
  const Index ka = effective_count(a_svd.s);
  double eps_u = static_cast<double>(kb) -
                 (b_svd.u.leftCols(kb).transpose() * refs.u_b_ref).squaredNorm();
  double eps_v = static_cast<double>(ka) -
                 (a_svd.vt.topRows(ka) * refs.v_a_ref).squaredNorm();
  if (eps_u < 0.0 && eps_u >= -1e-12) eps_u = 0.0;
  if (eps_v < 0.0 && eps_v >= -1e-12) eps_v = 0.0;
  return {eps_u, eps_v};
}

}  // namespace coremerge
