// SPDX-License-Identifier: Apache-2.0
#include "coremerge/mergers.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <numeric>
#include <thread>

#include "coremerge/baseline_spaces.hpp"
#include "coremerge/core_space.hpp"
#include "coremerge/rng.hpp"

namespace coremerge {

const char* to_string(Space s) {
  switch (s) {
    case Space::full: return "full";
    case Space::knots: return "knots";
    case Space::core: return "core";
  }
  return "?";
}

const char* to_string(Method m) {
  switch (m) {
    case Method::ta: return "ta";
    case Method::ties: return "ties";
    case Method::dare_ties: return "dare-ties";
    case Method::tsv: return "tsv";
    case Method::cart: return "cart";
  }
  return "?";
}

Space space_from_string(std::string_view s) {
  if (s == "full") return Space::full;
  if (s == "knots") return Space::knots;
  if (s == "core") return Space::core;
  throw ArgumentError("unknown space '" + std::string(s) + "'");
}

Method method_from_string(std::string_view s) {
  if (s == "ta") return Method::ta;
  if (s == "ties") return Method::ties;
  if (s == "dare-ties" || s == "dare_ties") return Method::dare_ties;
  if (s == "tsv") return Method::tsv;
  if (s == "cart") return Method::cart;
  throw ArgumentError("unknown method '" + std::string(s) + "'");
}

void MergeRecipe::validate() const {
  if (!(alpha > 0.0)) throw ArgumentError("recipe: alpha must be > 0");
  if (method == Method::ties || method == Method::dare_ties) {
    if (!(top_k_percent > 0.0) || top_k_percent > 100.0)
      throw ArgumentError("recipe: top-k percent must lie in (0, 100]");
  }
  if (method == Method::dare_ties) {
    if (dare_p < 0.0 || dare_p >= 1.0)
      throw ArgumentError("recipe: dare p must lie in [0, 1)");
  }
  if (method == Method::tsv && tsv_k && *tsv_k < 1)
    throw ArgumentError("recipe: tsv k must be >= 1");
  if (method == Method::cart) {
    if (!(cart_rank_fraction > 0.0) || cart_rank_fraction > 1.0)
      throw ArgumentError("recipe: cart rank fraction must lie in (0, 1]");
    if (!std::isfinite(cart_lambda)) throw ArgumentError("recipe: cart lambda must be finite");
  }
}

namespace {

void check_same_shapes(const std::vector<Matrix>& mats, const char* who) {
  if (mats.empty()) throw ArgumentError(std::string(who) + ": empty input");
  const Index r = mats.front().rows(), c = mats.front().cols();
  for (const Matrix& m : mats)
    if (m.rows() != r || m.cols() != c)
      throw ShapeError(std::string(who) + ": inputs have mismatched shapes");
}

}  // namespace

Matrix merge_ta(const std::vector<Matrix>& mats, double alpha) {
  check_same_shapes(mats, "merge_ta");
  Matrix sum = Matrix::Zero(mats.front().rows(), mats.front().cols());
  for (const Matrix& m : mats) sum += m;
  return alpha * sum;
}

namespace {

// Zero everything outside the top-K percent magnitudes. Ties at the cutoff
// resolve by entry order.
Matrix trim_top_k(const Matrix& m, double top_k_percent) {
  const auto n = static_cast<std::size_t>(m.size());
  const auto keep = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(top_k_percent / 100.0 * static_cast<double>(n))));
  if (keep == n) return m;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const double* data = m.data();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t lhs, std::size_t rhs) {
    return std::abs(data[lhs]) > std::abs(data[rhs]);
  });
  Matrix out = Matrix::Zero(m.rows(), m.cols());
  for (std::size_t i = 0; i < keep; ++i) out.data()[order[i]] = data[order[i]];
  return out;
}

}  // namespace

Matrix merge_ties(const std::vector<Matrix>& mats, double alpha, double top_k_percent) {
  check_same_shapes(mats, "merge_ties");
  if (!(top_k_percent > 0.0) || top_k_percent > 100.0)
    throw ArgumentError("merge_ties: top-k percent must lie in (0, 100]");

  std::vector<Matrix> trimmed;
  trimmed.reserve(mats.size());
  for (const Matrix& m : mats) trimmed.push_back(trim_top_k(m, top_k_percent));

  const Index rows = mats.front().rows(), cols = mats.front().cols();
  Matrix out = Matrix::Zero(rows, cols);
  for (Index idx = 0; idx < out.size(); ++idx) {
    double total = 0.0;
    for (const Matrix& t : trimmed) total += t.data()[idx];
    if (total == 0.0) continue;
    const double sign = total > 0.0 ? 1.0 : -1.0;
    double acc = 0.0;
    int contributors = 0;
    for (const Matrix& t : trimmed) {
      const double v = t.data()[idx];
      if (v != 0.0 && v * sign > 0.0) {
        acc += v;
        ++contributors;
      }
    }
    if (contributors > 0) out.data()[idx] = alpha * acc / contributors;
  }
  return out;
}

Matrix dare_drop_rescale(const Matrix& m, double p, std::uint64_t seed,
                         std::size_t task_index, std::string_view layer_id) {
  if (p < 0.0 || p >= 1.0) throw ArgumentError("dare: p must lie in [0, 1)");
  if (p == 0.0) return m;
  SplitMix64 gen(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(task_index)),
                          hash_string(layer_id)));
  const double rescale = 1.0 / (1.0 - p);
  Matrix out(m.rows(), m.cols());
  // row-major walk so the stream is independent of the storage order
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j)
      out(i, j) = gen.uniform() < p ? 0.0 : m(i, j) * rescale;
  return out;
}

Matrix merge_dare_ties(const std::vector<Matrix>& mats, double alpha, double top_k_percent,
                       double dare_p, std::uint64_t seed, std::string_view layer_id) {
  check_same_shapes(mats, "merge_dare_ties");
  std::vector<Matrix> dropped;
  dropped.reserve(mats.size());
  for (std::size_t t = 0; t < mats.size(); ++t)
    dropped.push_back(dare_drop_rescale(mats[t], dare_p, seed, t, layer_id));
  return merge_ties(dropped, alpha, top_k_percent);
}

namespace {

/// Nearest orthonormal-column factor: u v^T from the thin SVD.
Matrix polar_factor(const Matrix& m) {
  const SvdTriple svd = reduced_svd(m);
  return svd.u * svd.vt;
}

}  // namespace

Matrix merge_tsv(const std::vector<Matrix>& mats, double alpha, std::optional<Index> k_per_task) {
  check_same_shapes(mats, "merge_tsv");
  const auto tasks = static_cast<Index>(mats.size());
  const Index rows = mats.front().rows(), cols = mats.front().cols();
  const Index k_max = std::min(rows, cols);
  const Index k = k_per_task.value_or(std::max<Index>(1, k_max / tasks));
  if (k < 1 || k > k_max)
    throw ArgumentError("merge_tsv: k " + std::to_string(k) + " out of range [1, " +
                        std::to_string(k_max) + "]");

  Matrix u_stack(rows, tasks * k);
  Matrix v_stack(cols, tasks * k);
  Vector s_cat(tasks * k);
  for (Index t = 0; t < tasks; ++t) {
    const SvdTriple trunc = truncate_svd(reduced_svd(mats[static_cast<std::size_t>(t)]), k);
    u_stack.middleCols(t * k, k) = trunc.u * trunc.s.asDiagonal();
    v_stack.middleCols(t * k, k) = trunc.vt.transpose();
    s_cat.segment(t * k, k) = trunc.s;
  }
  return alpha * (polar_factor(u_stack) * s_cat.asDiagonal() * polar_factor(v_stack).transpose());
}

Matrix merge_cart(const std::vector<Matrix>& mats, double alpha, double rank_fraction,
                  double lambda) {
  check_same_shapes(mats, "merge_cart");
  if (mats.size() < 2) throw ArgumentError("merge_cart: needs at least two tasks");
  if (!(rank_fraction > 0.0) || rank_fraction > 1.0)
    throw ArgumentError("merge_cart: rank fraction must lie in (0, 1]");

  const Index rows = mats.front().rows(), cols = mats.front().cols();
  Matrix avg = Matrix::Zero(rows, cols);
  for (const Matrix& m : mats) avg += m;
  avg /= static_cast<double>(mats.size());

  const Index k_max = std::min(rows, cols);
  const auto rank = static_cast<Index>(
      std::min<double>(static_cast<double>(k_max),
                       std::ceil(rank_fraction * static_cast<double>(k_max))));
  Matrix centered_sum = Matrix::Zero(rows, cols);
  for (const Matrix& m : mats) {
    const Matrix tau = m - avg;
    centered_sum += truncate_svd(reduced_svd(tau), rank).reconstruct();
  }
  return alpha * (avg + lambda * centered_sum);
}

Matrix isotropize(const Matrix& m) {
  if (m.size() == 0 || m.norm() == 0.0) return m;
  const SvdTriple svd = reduced_svd(m);
  const double cut = kRankRelTol * svd.s(0);
  Index k = 0;
  while (k < svd.s.size() && svd.s(k) > cut) ++k;
  const double mean = svd.s.head(k).mean();
  return mean * (svd.u.leftCols(k) * svd.vt.topRows(k));
}

// ---- recipe runner -----------------------------------------------------------

namespace {

Matrix apply_method(const MergeRecipe& recipe, const std::vector<Matrix>& mats,
                    const std::string& layer_id) {
  switch (recipe.method) {
    case Method::ta:
      return merge_ta(mats, recipe.alpha);
    case Method::ties:
      return merge_ties(mats, recipe.alpha, recipe.top_k_percent);
    case Method::dare_ties:
      return merge_dare_ties(mats, recipe.alpha, recipe.top_k_percent, recipe.dare_p,
                             recipe.seed, layer_id);
    case Method::tsv:
      return merge_tsv(mats, recipe.alpha, recipe.tsv_k);
    case Method::cart:
      return merge_cart(mats, recipe.alpha, recipe.cart_rank_fraction, recipe.cart_lambda);
  }
  throw ArgumentError("unknown method");
}

MergedLayer merge_one_layer(const TaskAdapterSet& set, const MergeRecipe& recipe,
                            const std::string& layer_id) {
  const auto t0 = std::chrono::steady_clock::now();
  MergedLayer out;
  out.layer_id = layer_id;

  const char* stage = "project";
  try {
    std::vector<Matrix> mats;
    ReferenceBases refs;
    KnotsDecomposition knots;
    switch (recipe.space) {
      case Space::full:
        mats = to_full_space(set, layer_id);
        break;
      case Space::knots: {
        knots = knots_decompose(to_full_space(set, layer_id));
        if (recipe.knots_sigma_weighted)
          for (Matrix& block : knots.v_blocks) block *= knots.s.asDiagonal();
        mats = knots.v_blocks;
        break;
      }
      case Space::core: {
        refs = build_reference_bases(set, layer_id);
        mats.reserve(set.task_count());
        for (std::size_t t = 0; t < set.task_count(); ++t)
          mats.push_back(aligned_core(set.layer(t, layer_id), refs));
        break;
      }
    }

    stage = "merge";
    Matrix merged = apply_method(recipe, mats, layer_id);

    if (recipe.iso_c) {
      stage = "isotropize";
      if (merged.norm() == 0.0)
        out.notes.push_back("iso-c skipped: merged matrix is zero");
      else
        merged = isotropize(merged);
    }

    stage = "reconstruct";
    out.space_object = merged;
    switch (recipe.space) {
      case Space::full:
        out.delta_w = std::move(merged);
        break;
      case Space::knots:
        out.delta_w = recipe.knots_sigma_weighted
                          ? Matrix(knots.u * merged.transpose())
                          : Matrix(knots.u * knots.s.asDiagonal() * merged.transpose());
        break;
      case Space::core:
        out.delta_w = reconstruct(merged, refs);
        break;
    }
  } catch (const Error& e) {
    throw Error(e.kind(), "layer '" + layer_id + "' [" + stage + "]: " + e.what());
  }

  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace

MergedUpdate run_recipe(const TaskAdapterSet& set, const MergeRecipe& recipe, int workers) {
  recipe.validate();
  if (set.tasks.empty()) throw ArgumentError("run_recipe: empty task set");
  if (workers < 1) throw ArgumentError("run_recipe: workers must be >= 1");

  const std::vector<std::string> ids = set.layer_ids();
  MergedUpdate update;
  update.recipe = recipe;
  update.layers.resize(ids.size());

  const auto n_workers =
      std::min<std::size_t>(static_cast<std::size_t>(workers), std::max<std::size_t>(ids.size(), 1));
  if (n_workers <= 1) {
    for (std::size_t i = 0; i < ids.size(); ++i)
      update.layers[i] = merge_one_layer(set, recipe, ids[i]);
    return update;
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      const std::size_t i = next.fetch_add(1);
      if (i >= ids.size()) return;
      try {
        update.layers[i] = merge_one_layer(set, recipe, ids[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(n_workers);
  for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return update;
}

TaskAdapterSet to_adapter_set(const MergedUpdate& merged) {
  TaskAdapterSet set;
  set.dtype = TensorDtype::f64;
  TaskAdapters task;
  task.name = "merged";
  for (const MergedLayer& layer : merged.layers) {
    set.layer_schema[layer.layer_id] = {layer.delta_w.rows(), layer.delta_w.cols()};
    AdapterLayer out;
    out.layer_id = layer.layer_id;
    const SvdTriple svd = reduced_svd(layer.delta_w);
    const double cut = svd.s.size() > 0 ? kRankRelTol * svd.s(0) : 0.0;
    Index k = 0;
    while (k < svd.s.size() && svd.s(k) > cut) ++k;
    if (k == 0) {
      out.b = Matrix::Zero(layer.delta_w.rows(), 1);
      out.a = Matrix::Zero(1, layer.delta_w.cols());
    } else {
      out.b = svd.u.leftCols(k) * svd.s.head(k).asDiagonal();
      out.a = svd.vt.topRows(k);
    }
    task.layers.emplace(layer.layer_id, std::move(out));
  }
  set.tasks.push_back(std::move(task));
  set.validate();
  return set;
}

}  // namespace coremerge
