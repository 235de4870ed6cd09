// SPDX-License-Identifier: Apache-2.0
#include "coremerge/adapters.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include <json.hpp>

#include "coremerge/rng.hpp"

namespace coremerge {

namespace fs = std::filesystem;
using Json = nlohmann::json;

std::vector<std::string> TaskAdapterSet::layer_ids() const {
  std::vector<std::string> ids;
  ids.reserve(layer_schema.size());
  for (const auto& [id, shape] : layer_schema) ids.push_back(id);
  return ids;
}

const AdapterLayer& TaskAdapterSet::layer(std::size_t task_index, const std::string& layer_id) const {
  if (task_index >= tasks.size())
    throw ArgumentError("task index " + std::to_string(task_index) + " out of range");
  const auto& layers = tasks[task_index].layers;
  auto it = layers.find(layer_id);
  if (it == layers.end())
    throw SchemaError("task '" + tasks[task_index].name + "' has no layer '" + layer_id + "'");
  return it->second;
}

void TaskAdapterSet::validate() const {
  for (const auto& task : tasks) {
    for (const auto& [id, shape] : layer_schema) {
      auto it = task.layers.find(id);
      if (it == task.layers.end())
        throw SchemaError("task '" + task.name + "' is missing layer '" + id + "'");
      const AdapterLayer& layer = it->second;
      if (layer.rank() < 1)
        throw ShapeError("task '" + task.name + "' layer '" + id + "': rank must be >= 1");
      if (layer.b.cols() != layer.rank())
        throw ShapeError("task '" + task.name + "' layer '" + id + "': a is " +
                         std::to_string(layer.a.rows()) + "x" + std::to_string(layer.a.cols()) +
                         " but b is " + std::to_string(layer.b.rows()) + "x" +
                         std::to_string(layer.b.cols()));
      if (layer.b.rows() != shape.rows || layer.a.cols() != shape.cols)
        throw ShapeError("task '" + task.name + "' layer '" + id + "': expected " +
                         std::to_string(shape.rows) + "x" + std::to_string(shape.cols) +
                         ", got " + std::to_string(layer.b.rows()) + "x" +
                         std::to_string(layer.a.cols()));
      require_finite(layer.a, "task '" + task.name + "' layer '" + id + "' tensor A");
      require_finite(layer.b, "task '" + task.name + "' layer '" + id + "' tensor B");
    }
    if (task.layers.size() != layer_schema.size())
      for (const auto& [id, layer] : task.layers)
        if (!layer_schema.count(id))
          throw SchemaError("task '" + task.name + "' has layer '" + id +
                            "' absent from the schema");
  }
}

AdapterLayer absorb_vera(const VeraAdapterLayer& v) {
  const Index m = v.b_shared.rows(), r = v.b_shared.cols();
  if (v.a_shared.rows() != r)
    throw ShapeError("vera layer '" + v.layer_id + "': a_shared rank " +
                     std::to_string(v.a_shared.rows()) + " != b_shared rank " + std::to_string(r));
  if (v.lambda_b.size() != m)
    throw ShapeError("vera layer '" + v.layer_id + "': lambda_b length " +
                     std::to_string(v.lambda_b.size()) + " != " + std::to_string(m));
  if (v.lambda_d.size() != r)
    throw ShapeError("vera layer '" + v.layer_id + "': lambda_d length " +
                     std::to_string(v.lambda_d.size()) + " != " + std::to_string(r));
  AdapterLayer out;
  out.layer_id = v.layer_id;
  out.a = v.lambda_d.asDiagonal() * v.a_shared;
  out.b = v.lambda_b.asDiagonal() * v.b_shared;
  return out;
}

namespace {

double quantize_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

Matrix quantize_f32(const Matrix& m) {
  return m.unaryExpr([](double x) { return quantize_f32(x); });
}

}  // namespace

TaskAdapterSet synthesize_set(Index m, Index n, int task_count,
                              const std::vector<Index>& ranks, std::uint64_t seed) {
  if (task_count < 1 || static_cast<std::size_t>(task_count) != ranks.size())
    throw ArgumentError("synthesize_set: task_count must equal ranks.size()");
  if (m < 1 || n < 1) throw ArgumentError("synthesize_set: dimensions must be >= 1");
  TaskAdapterSet set;
  set.layer_schema["layer_0"] = {m, n};
  for (int t = 0; t < task_count; ++t) {
    const Index r = ranks[static_cast<std::size_t>(t)];
    if (r < 1) throw ArgumentError("synthesize_set: rank must be >= 1");
    char name[16];
    std::snprintf(name, sizeof(name), "task_%03d", t);
    const std::uint64_t task_seed = mix_seed(seed, static_cast<std::uint64_t>(t));
    AdapterLayer layer;
    layer.layer_id = "layer_0";
    layer.a = quantize_f32(gaussian_matrix(r, n, mix_seed(task_seed, 1)));
    layer.b = quantize_f32(gaussian_matrix(m, r, mix_seed(task_seed, 2)));
    TaskAdapters task;
    task.name = name;
    task.layers.emplace("layer_0", std::move(layer));
    set.tasks.push_back(std::move(task));
  }
  set.validate();
  return set;
}

// ---- bundle I/O -------------------------------------------------------------

namespace {

constexpr int kFormatVersion = 1;

const char* dtype_name(TensorDtype d) { return d == TensorDtype::f32 ? "f32" : "f64"; }

TensorDtype dtype_from_name(const std::string& s) {
  if (s == "f32") return TensorDtype::f32;
  if (s == "f64") return TensorDtype::f64;
  throw SchemaError("unsupported dtype '" + s + "'");
}

void check_component_name(const std::string& name, const char* what) {
  if (name.empty() || name.find('/') != std::string::npos ||
      name.find('\\') != std::string::npos || name == "." || name == "..")
    throw SchemaError(std::string(what) + " '" + name + "' is not filesystem-safe");
}

void write_tensor(const fs::path& path, const Matrix& m, TensorDtype dtype) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  // row-major, little-endian
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  if (dtype == TensorDtype::f32) {
    std::vector<float> buf(static_cast<std::size_t>(m.size()));
    std::size_t idx = 0;
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) buf[idx++] = static_cast<float>(m(i, j));
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  } else {
    std::vector<double> buf(static_cast<std::size_t>(m.size()));
    std::size_t idx = 0;
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) buf[idx++] = m(i, j);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(double)));
  }
  if (!out) throw IoError("short write to " + path.string());
}

Matrix read_tensor(const fs::path& path, Index rows, Index cols, TensorDtype dtype) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot read " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  const std::size_t elem = dtype == TensorDtype::f32 ? sizeof(float) : sizeof(double);
  const std::size_t want = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols) * elem;
  if (bytes != want)
    throw ShapeError(path.string() + ": expected " + std::to_string(want) + " bytes for " +
                     std::to_string(rows) + "x" + std::to_string(cols) + ", found " +
                     std::to_string(bytes));
  in.seekg(0);
  Matrix m(rows, cols);
  if (dtype == TensorDtype::f32) {
    std::vector<float> buf(static_cast<std::size_t>(rows * cols));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    std::size_t idx = 0;
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<double>(buf[idx++]);
  } else {
    std::vector<double> buf(static_cast<std::size_t>(rows * cols));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
    std::size_t idx = 0;
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = buf[idx++];
  }
  if (!in) throw IoError("short read from " + path.string());
  return m;
}

TaskAdapterSet load_manifest_bundle(const fs::path& dir) {
  Json manifest;
  {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot read " + (dir / "manifest.json").string());
    try {
      in >> manifest;
    } catch (const Json::exception& e) {
      throw IoError("manifest.json: " + std::string(e.what()));
    }
  }
  try {
    if (manifest.at("format_version").get<int>() != kFormatVersion)
      throw SchemaError("unsupported format_version");
    TaskAdapterSet set;
    set.dtype = manifest.contains("dtype")
                    ? dtype_from_name(manifest.at("dtype").get<std::string>())
                    : TensorDtype::f32;
    for (const auto& [id, shape] : manifest.at("layer_schema").items()) {
      if (!shape.is_array() || shape.size() != 2)
        throw SchemaError("layer_schema entry '" + id + "' must be [m, n]");
      set.layer_schema[id] = {shape[0].get<Index>(), shape[1].get<Index>()};
    }
    const auto& adapters = manifest.at("adapters");
    for (const auto& task_name : manifest.at("tasks")) {
      const std::string name = task_name.get<std::string>();
      check_component_name(name, "task");
      if (!adapters.contains(name))
        throw SchemaError("task '" + name + "' listed but has no adapter entries");
      TaskAdapters task;
      task.name = name;
      for (const auto& [layer_id, meta] : adapters.at(name).items()) {
        if (!set.layer_schema.count(layer_id))
          throw SchemaError("task '" + name + "' has layer '" + layer_id +
                            "' absent from the schema");
        check_component_name(layer_id, "layer");
        const LayerShape shape = set.layer_schema.at(layer_id);
        const Index rank = meta.at("rank").get<Index>();
        AdapterLayer layer;
        layer.layer_id = layer_id;
        layer.a = read_tensor(dir / name / (layer_id + ".lora_A.bin"), rank, shape.cols, set.dtype);
        layer.b = read_tensor(dir / name / (layer_id + ".lora_B.bin"), shape.rows, rank, set.dtype);
        if (meta.contains("lora_alpha")) {
          const double alpha = meta.at("lora_alpha").get<double>();
          if (alpha < 0.0)
            throw SchemaError("task '" + name + "' layer '" + layer_id + "': lora_alpha < 0");
          layer.lora_alpha = alpha;
          layer.b *= alpha / static_cast<double>(rank);
        }
        task.layers.emplace(layer_id, std::move(layer));
      }
      set.tasks.push_back(std::move(task));
    }
    set.validate();
    return set;
  } catch (const Json::exception& e) {
    throw SchemaError("manifest.json: " + std::string(e.what()));
  }
}

// Minimal safetensors reader: 8-byte little-endian header length, JSON header
// mapping tensor names to {dtype, shape, data_offsets}, then the byte buffer.
std::map<std::string, Matrix> read_safetensors(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot read " + path.string());
  const auto total = static_cast<std::uint64_t>(in.tellg());
  if (total < 8) throw IoError(path.string() + ": truncated safetensors file");
  in.seekg(0);
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 8);
  if (header_len > total - 8) throw IoError(path.string() + ": header length out of bounds");
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  Json meta;
  try {
    meta = Json::parse(header);
  } catch (const Json::exception& e) {
    throw IoError(path.string() + ": bad safetensors header: " + e.what());
  }
  const std::uint64_t data_base = 8 + header_len;
  std::map<std::string, Matrix> tensors;
  for (const auto& [name, desc] : meta.items()) {
    if (name == "__metadata__") continue;
    const std::string dtype = desc.at("dtype").get<std::string>();
    const auto& shape = desc.at("shape");
    if (shape.size() != 2)
      throw SchemaError(path.string() + ": tensor '" + name + "' is not 2-D");
    const Index rows = shape[0].get<Index>(), cols = shape[1].get<Index>();
    const std::uint64_t begin = desc.at("data_offsets")[0].get<std::uint64_t>();
    const std::uint64_t end = desc.at("data_offsets")[1].get<std::uint64_t>();
    const std::size_t elem = dtype == "F32" ? 4 : dtype == "F64" ? 8 : 0;
    if (elem == 0)
      throw SchemaError(path.string() + ": tensor '" + name + "' has unsupported dtype " + dtype);
    const std::uint64_t want = static_cast<std::uint64_t>(rows * cols) * elem;
    if (end < begin || end - begin != want || data_base + end > total)
      throw IoError(path.string() + ": tensor '" + name + "' offsets out of bounds");
    in.seekg(static_cast<std::streamoff>(data_base + begin));
    Matrix m(rows, cols);
    if (elem == 4) {
      std::vector<float> buf(static_cast<std::size_t>(rows * cols));
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(want));
      std::size_t idx = 0;
      for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = static_cast<double>(buf[idx++]);
    } else {
      std::vector<double> buf(static_cast<std::size_t>(rows * cols));
      in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(want));
      std::size_t idx = 0;
      for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = buf[idx++];
    }
    if (!in) throw IoError("short read from " + path.string());
    tensors.emplace(name, std::move(m));
  }
  return tensors;
}

constexpr std::string_view kLoraASuffix = ".lora_A.weight";
constexpr std::string_view kLoraBSuffix = ".lora_B.weight";

TaskAdapterSet load_safetensors_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".safetensors")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError(dir.string() + ": no manifest.json or .safetensors files");

  TaskAdapterSet set;
  for (const auto& file : files) {
    auto tensors = read_safetensors(file);
    TaskAdapters task;
    task.name = file.stem().string();
    for (auto& [key, tensor] : tensors) {
      std::string layer_id;
      bool is_a = false;
      if (key.size() > kLoraASuffix.size() && key.ends_with(kLoraASuffix)) {
        layer_id = key.substr(0, key.size() - kLoraASuffix.size());
        is_a = true;
      } else if (key.size() > kLoraBSuffix.size() && key.ends_with(kLoraBSuffix)) {
        layer_id = key.substr(0, key.size() - kLoraBSuffix.size());
      } else {
        continue;  // unrelated tensor
      }
      auto& layer = task.layers[layer_id];
      layer.layer_id = layer_id;
      (is_a ? layer.a : layer.b) = std::move(tensor);
    }
    for (const auto& [layer_id, layer] : task.layers) {
      if (layer.a.size() == 0 || layer.b.size() == 0)
        throw SchemaError(file.string() + ": layer '" + layer_id +
                          "' lacks one of lora_A/lora_B");
      const LayerShape shape{layer.b.rows(), layer.a.cols()};
      auto [it, inserted] = set.layer_schema.emplace(layer_id, shape);
      if (!inserted && (it->second.rows != shape.rows || it->second.cols != shape.cols))
        throw ShapeError(file.string() + ": layer '" + layer_id + "' shape " +
                         std::to_string(shape.rows) + "x" + std::to_string(shape.cols) +
                         " conflicts with earlier task");
    }
    set.tasks.push_back(std::move(task));
  }
  set.validate();
  return set;
}

}  // namespace

TaskAdapterSet load_bundle(const fs::path& path) {
  if (!fs::exists(path)) throw IoError(path.string() + ": no such path");
  if (!fs::is_directory(path)) throw IoError(path.string() + ": not a directory");
  if (fs::exists(path / "manifest.json")) return load_manifest_bundle(path);
  return load_safetensors_dir(path);
}

void save_bundle(const TaskAdapterSet& set, const fs::path& path) {
  set.validate();
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw IoError(path.string() + ": " + ec.message());

  Json schema = Json::object();
  for (const auto& [id, shape] : set.layer_schema) {
    check_component_name(id, "layer");
    schema[id] = {shape.rows, shape.cols};
  }
  Json tasks = Json::array();
  Json adapters = Json::object();
  for (const auto& task : set.tasks) {
    check_component_name(task.name, "task");
    tasks.push_back(task.name);
    Json entry = Json::object();
    for (const auto& [layer_id, layer] : task.layers) {
      // Scaling was absorbed on load; stored tensors are always final, so no
      // lora_alpha is re-emitted.
      entry[layer_id] = {{"rank", layer.rank()}};
    }
    adapters[task.name] = std::move(entry);
    fs::create_directories(path / task.name, ec);
    if (ec) throw IoError((path / task.name).string() + ": " + ec.message());
    for (const auto& [layer_id, layer] : task.layers) {
      write_tensor(path / task.name / (layer_id + ".lora_A.bin"), layer.a, set.dtype);
      write_tensor(path / task.name / (layer_id + ".lora_B.bin"), layer.b, set.dtype);
    }
  }
  Json manifest = {{"format_version", kFormatVersion},
                   {"dtype", dtype_name(set.dtype)},
                   {"tasks", std::move(tasks)},
                   {"layer_schema", std::move(schema)},
                   {"adapters", std::move(adapters)}};
  std::ofstream out(path / "manifest.json");
  if (!out) throw IoError("cannot write " + (path / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("short write to " + (path / "manifest.json").string());
}

}  // namespace coremerge
