// SPDX-License-Identifier: Apache-2.0
#include "coremerge/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

#include <Eigen/QR>

#include "coremerge/baseline_spaces.hpp"
#include "coremerge/core_space.hpp"
#include "coremerge/rng.hpp"

namespace coremerge {

TruncationResult truncate_merged(const Matrix& m, double p) {
  if (p < 0.0 || p >= 1.0) throw ArgumentError("truncate_merged: p must lie in [0, 1)");
  TruncationResult result;
  result.p = p;
  if (p == 0.0) {
    result.truncated = m;
    result.energy_ratio = 1.0;
    return result;
  }
  const SvdTriple svd = reduced_svd(m);
  const Index k = svd.s.size();
  const auto dropped = static_cast<Index>(std::ceil(p * static_cast<double>(k)));
  const Index keep = k - dropped;
  const double total = svd.s.squaredNorm();
  if (keep <= 0) {
    result.truncated = Matrix::Zero(m.rows(), m.cols());
    result.energy_ratio = total > 0.0 ? 0.0 : 1.0;
    return result;
  }
  result.truncated = svd.u.leftCols(keep) * svd.s.head(keep).asDiagonal() * svd.vt.topRows(keep);
  result.energy_ratio = total > 0.0 ? svd.s.head(keep).squaredNorm() / total : 1.0;
  return result;
}

SarReport sar(const TaskAdapterSet& set, const std::string& layer_id, Space space, Index k) {
  if (k < 1) throw ArgumentError("sar: k must be >= 1");
  if (space != Space::full && space != Space::core)
    throw ArgumentError("sar: space must be full or core");

  const std::size_t tasks = set.task_count();
  std::vector<Matrix> updates;
  if (space == Space::full) {
    updates = to_full_space(set, layer_id);
  } else {
    const ReferenceBases refs = build_reference_bases(set, layer_id);
    updates.reserve(tasks);
    for (std::size_t t = 0; t < tasks; ++t)
      updates.push_back(aligned_core(set.layer(t, layer_id), refs));
  }

  std::vector<Matrix> top_v(tasks);  // cols x k_j, orthonormal columns
  for (std::size_t j = 0; j < tasks; ++j) {
    const SvdTriple svd = reduced_svd(updates[j]);
    top_v[j] = svd.vt.topRows(std::min(k, svd.s.size())).transpose();
  }

  SarReport report;
  report.layer_id = layer_id;
  report.space = space;
  report.k = k;
  for (const auto& task : set.tasks) report.task_names.push_back(task.name);
  report.values.assign(tasks, std::vector<std::optional<double>>(tasks));

  double sum = 0.0;
  std::size_t defined_pairs = 0;
  for (std::size_t i = 0; i < tasks; ++i) {
    const double denom = updates[i].squaredNorm();
    for (std::size_t j = 0; j < tasks; ++j) {
      if (denom == 0.0) continue;  // undefined, reported as missing
      const double value = (updates[i] * top_v[j]).squaredNorm() / denom;
      report.values[i][j] = value;
      if (i != j) {
        sum += value;
        ++defined_pairs;
      }
    }
  }
  report.average = defined_pairs > 0 ? sum / static_cast<double>(defined_pairs) : 0.0;
  return report;
}

// Dominant-term operation counts per (space, method). Full expression chains,
// for reference (square case m = n, k_dec = min(m, nT) = n):
//   full   base:  T r m n                      (materialize b*a per task)
//   knots  base:  T r m n + m n^2 T^2 + m^3    (concat SVD via the short side)
//   core   base:  T r (m^2 + n^2) + 2 (T r)^3  (stacked reference SVDs)
//                 + T^2 r^2 (m + n)            (aligned-core products)
//   method terms: ta    full T m n | knots T^2 r n          | core T^3 r^2
//                 ties  full T m n | knots T m n             | core T^3 r^2
//                 tsv   full T (m^2 n + n^3) | knots T^3 r^2 n | core T^4 r^3
//                 cart  full T (m^2 n + n^3) | knots T m^2 n   | core T^4 r^3
//   iso_c adds the SVD of the merged object in-space:
//                 full m^2 n + n^3 | knots n m^2 + m^3 | core (T r)^3
double estimate_ops(Space space, Method method, bool iso_c, double m, double n,
                    double tasks, double rank) {
  if (m < 1 || n < 1 || tasks < 1 || rank < 1)
    throw ArgumentError("estimate_ops: dimensions must be positive");
  const double T = tasks, r = rank;
  const double tr = T * r;
  const double kmin = std::min(m, n);

  double ops = 0.0;
  switch (space) {
    case Space::full:
      ops = T * r * m * n;
      break;
    case Space::knots:
      ops = T * r * m * n + m * n * n * T * T + m * m * m;
      break;
    case Space::core:
      ops = tr * (m * m + n * n) + 2.0 * tr * tr * tr + T * tr * r * (m + n);
      break;
  }

  switch (method) {
    case Method::ta:
    case Method::ties:
    case Method::dare_ties:
      ops += space == Space::core ? T * tr * tr : T * m * n;
      break;
    case Method::tsv:
      if (space == Space::full)
        ops += T * (m * m * n + n * n * n);
      else if (space == Space::knots)
        ops += T * tr * tr * n;
      else
        ops += T * tr * tr * tr;
      break;
    case Method::cart:
      if (space == Space::full)
        ops += T * (m * m * n + n * n * n);
      else if (space == Space::knots)
        ops += T * m * m * n;
      else
        ops += T * tr * tr * tr;
      break;
  }

  if (iso_c) {
    switch (space) {
      case Space::full:
        ops += m * n * kmin + kmin * kmin * kmin;
        break;
      case Space::knots:
        ops += n * m * m + m * m * m;
        break;
      case Space::core:
        ops += tr * tr * tr;
        break;
    }
  }
  return ops;
}

double fit_scaling_exponent(const std::vector<std::pair<double, double>>& n_time) {
  std::vector<double> xs, ys;
  std::map<double, bool> distinct;
  for (const auto& [n, t] : n_time) {
    if (n <= 0.0 || t <= 0.0)
      throw ArgumentError("fit_scaling_exponent: samples must be positive");
    distinct[n] = true;
    xs.push_back(std::log(n));
    ys.push_back(std::log(t));
  }
  if (n_time.size() < 3 || distinct.size() < 3)
    throw ArgumentError("fit_scaling_exponent: need >= 3 samples with distinct n");
  const double x_mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  const double y_mean = std::accumulate(ys.begin(), ys.end(), 0.0) / static_cast<double>(ys.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    num += (xs[i] - x_mean) * (ys[i] - y_mean);
    den += (xs[i] - x_mean) * (xs[i] - x_mean);
  }
  if (den == 0.0) throw ArgumentError("fit_scaling_exponent: degenerate samples");
  return num / den;
}

RankReport rank_report(const MergedUpdate& merged) {
  RankReport report;
  double sum = 0.0;
  for (const MergedLayer& layer : merged.layers) {
    const Index rank = numerical_rank(layer.delta_w);
    report.per_layer.emplace_back(layer.layer_id, rank);
    sum += static_cast<double>(rank);
  }
  report.average = merged.layers.empty() ? 0.0 : sum / static_cast<double>(merged.layers.size());
  return report;
}

BasisVariant basis_variant_from_string(std::string_view s) {
  if (s == "first-task" || s == "first_task") return BasisVariant::first_task;
  if (s == "random" || s == "random-orthonormal" || s == "random_orthonormal")
    return BasisVariant::random_orthonormal;
  if (s == "concatenation") return BasisVariant::concatenation;
  throw ArgumentError("unknown basis variant '" + std::string(s) + "'");
}

const char* to_string(BasisVariant v) {
  switch (v) {
    case BasisVariant::first_task: return "first-task";
    case BasisVariant::random_orthonormal: return "random-orthonormal";
    case BasisVariant::concatenation: return "concatenation";
  }
  return "?";
}

namespace {

Matrix random_orthonormal(Index rows, Index cols, std::uint64_t seed) {
  const Matrix g = gaussian_matrix(rows, cols, seed);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = Matrix::Identity(rows, cols);
  q.applyOnTheLeft(qr.householderQ());
  return q;
}

}  // namespace

AlignmentErrorReport reference_basis_ablation(const TaskAdapterSet& set,
                                              const std::string& layer_id,
                                              BasisVariant variant, std::uint64_t seed) {
  const ReferenceBases concat = build_reference_bases(set, layer_id);
  ReferenceBases refs;
  switch (variant) {
    case BasisVariant::concatenation:
      refs = concat;
      break;
    case BasisVariant::first_task:
      refs = build_reference_bases({set.layer(0, layer_id)});
      break;
    case BasisVariant::random_orthonormal:
      // same widths as the concatenation bases
      refs.u_b_ref = random_orthonormal(concat.u_b_ref.rows(), concat.d_u(), mix_seed(seed, 1));
      refs.v_a_ref = random_orthonormal(concat.v_a_ref.rows(), concat.d_v(), mix_seed(seed, 2));
      break;
  }

  AlignmentErrorReport report;
  double sum_u = 0.0, sum_v = 0.0;
  for (std::size_t t = 0; t < set.task_count(); ++t) {
    const auto [eps_u, eps_v] = alignment_error(set.layer(t, layer_id), refs);
    report.rows.push_back({set.tasks[t].name, layer_id, eps_u, eps_v});
    sum_u += eps_u;
    sum_v += eps_v;
  }
  const auto count = static_cast<double>(report.rows.size());
  report.avg_eps_u = count > 0 ? sum_u / count : 0.0;
  report.avg_eps_v = count > 0 ? sum_v / count : 0.0;
  return report;
}

AlignmentErrorReport alignment_error_report(const TaskAdapterSet& set) {
  AlignmentErrorReport report;
  double sum_u = 0.0, sum_v = 0.0;
  for (const std::string& layer_id : set.layer_ids()) {
    const ReferenceBases refs = build_reference_bases(set, layer_id);
    for (std::size_t t = 0; t < set.task_count(); ++t) {
      const auto [eps_u, eps_v] = alignment_error(set.layer(t, layer_id), refs);
      report.rows.push_back({set.tasks[t].name, layer_id, eps_u, eps_v});
      sum_u += eps_u;
      sum_v += eps_v;
    }
  }
  const auto count = static_cast<double>(report.rows.size());
  report.avg_eps_u = count > 0 ? sum_u / count : 0.0;
  report.avg_eps_v = count > 0 ? sum_v / count : 0.0;
  return report;
}

std::string BenchCombo::label() const {
  std::string label = to_string(space);
  label += '-';
  if (iso_c && method == Method::ta)
    label += "iso-c";
  else {
    label += to_string(method);
    if (iso_c) label += "+iso-c";
  }
  return label;
}

std::vector<BenchRecord> run_benchmark(const std::vector<Index>& ns, int task_count,
                                       Index rank, const std::vector<BenchCombo>& combos,
                                       int reps, std::uint64_t seed) {
  if (ns.empty()) throw ArgumentError("run_benchmark: empty size grid");
  if (task_count < 1 || rank < 1) throw ArgumentError("run_benchmark: bad task/rank counts");
  if (reps < 1) throw ArgumentError("run_benchmark: reps must be >= 1");
  if (combos.empty()) throw ArgumentError("run_benchmark: no combos");

  std::vector<BenchRecord> records;
  for (const Index n : ns) {
    const std::vector<Index> ranks(static_cast<std::size_t>(task_count), rank);
    const TaskAdapterSet set = synthesize_set(n, n, task_count, ranks, mix_seed(seed, static_cast<std::uint64_t>(n)));
    for (const BenchCombo& combo : combos) {
      MergeRecipe recipe;
      recipe.space = combo.space;
      recipe.method = combo.method;
      recipe.iso_c = combo.iso_c;
      recipe.seed = seed;
      for (int rep = 0; rep < reps; ++rep) {
        const auto t0 = std::chrono::steady_clock::now();
        const MergedUpdate merged = run_recipe(set, recipe, /*workers=*/1);
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        records.push_back({n, combo, rep, seconds,
                           estimate_ops(combo.space, combo.method, combo.iso_c,
                                        static_cast<double>(n), static_cast<double>(n),
                                        static_cast<double>(task_count),
                                        static_cast<double>(rank))});
        (void)merged;
      }
    }
  }
  return records;
}

std::vector<std::pair<std::string, double>> fit_benchmark_exponents(
    const std::vector<BenchRecord>& records) {
  // label -> n -> sorted rep times
  std::map<std::string, std::map<Index, std::vector<double>>> grouped;
  for (const BenchRecord& rec : records)
    grouped[rec.combo.label()][rec.n].push_back(rec.seconds);

  std::vector<std::pair<std::string, double>> out;
  for (auto& [label, by_n] : grouped) {
    if (by_n.size() < 3) continue;
    std::vector<std::pair<double, double>> samples;
    for (auto& [n, times] : by_n) {
      std::sort(times.begin(), times.end());
      const double median = times[times.size() / 2];
      samples.emplace_back(static_cast<double>(n), median);
    }
    out.emplace_back(label, fit_scaling_exponent(samples));
  }
  return out;
}

}  // namespace coremerge
