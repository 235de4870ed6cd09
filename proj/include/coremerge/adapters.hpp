// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "coremerge/numerics.hpp"

namespace coremerge {

/// One task's low-rank update for one layer: delta_w = b * a.
/// Any lora_alpha scaling is absorbed into b at load time, so the factors are
/// always final; lora_alpha is kept only as a record of what was absorbed.
struct AdapterLayer {
  std::string layer_id;
  Matrix a;  // rank x n
  Matrix b;  // m x rank
  std::optional<double> lora_alpha;

  Index rank() const { return a.rows(); }
  Index out_dim() const { return b.rows(); }
  Index in_dim() const { return a.cols(); }
  Matrix delta_w() const { return b * a; }
};

/// VeRA layer: frozen shared factors plus learned diagonal scalings,
/// delta_w = diag(lambda_b) * b_shared * diag(lambda_d) * a_shared.
struct VeraAdapterLayer {
  std::string layer_id;
  Matrix a_shared;  // r x n
  Matrix b_shared;  // m x r
  Vector lambda_b;  // length m
  Vector lambda_d;  // length r
};

struct LayerShape {
  Index rows = 0;  // m
  Index cols = 0;  // n
};

struct TaskAdapters {
  std::string name;
  std::map<std::string, AdapterLayer> layers;
};

enum class TensorDtype { f32, f64 };

/// Multi-task adapter collection over one base model. Tasks are ordered;
/// per-layer ranks may differ between tasks, shapes (m, n) may not.
struct TaskAdapterSet {
  std::vector<TaskAdapters> tasks;
  std::map<std::string, LayerShape> layer_schema;
  TensorDtype dtype = TensorDtype::f32;

  std::size_t task_count() const { return tasks.size(); }
  std::vector<std::string> layer_ids() const;
  const AdapterLayer& layer(std::size_t task_index, const std::string& layer_id) const;

  /// Every task must cover exactly the schema with matching shapes and
  /// finite payloads. Throws SchemaError / ShapeError / DataError.
  void validate() const;
};

/// Reads either a bundle directory (manifest.json + raw tensors) or a
/// directory of per-task .safetensors files. The result is validated and
/// has all scaling absorbed.
TaskAdapterSet load_bundle(const std::filesystem::path& path);

/// Writes the bundle directory format. Tensors are stored at set.dtype
/// precision; loading the result reproduces the payload bit-exactly at that
/// precision.
void save_bundle(const TaskAdapterSet& set, const std::filesystem::path& path);

/// Folds the VeRA scaling vectors into the shared factors.
AdapterLayer absorb_vera(const VeraAdapterLayer& v);

/// Deterministic Gaussian test/benchmark adapters: task_count tasks (one rank
/// each, task_count == ranks.size()) over a single m x n layer ("layer_0").
/// Values are quantized to f32 so that bundle round-trips are exact.
TaskAdapterSet synthesize_set(Index m, Index n, int task_count,
                              const std::vector<Index>& ranks, std::uint64_t seed);

}  // namespace coremerge
