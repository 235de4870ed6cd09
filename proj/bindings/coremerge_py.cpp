// SPDX-License-Identifier: Apache-2.0
//
// Python bindings for the merging library. Matrices cross the boundary as
// numpy arrays; spaces and methods cross as strings.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "coremerge/analysis.hpp"
#include "coremerge/baseline_spaces.hpp"
#include "coremerge/core_space.hpp"
#include "coremerge/mergers.hpp"
#include "coremerge/reports.hpp"
#include "coremerge/tuning.hpp"

namespace py = pybind11;
using namespace coremerge;

namespace {

const MergedLayer& find_layer(const MergedUpdate& update, const std::string& layer_id) {
  for (const MergedLayer& layer : update.layers)
    if (layer.layer_id == layer_id) return layer;
  throw ArgumentError("merged update has no layer '" + layer_id + "'");
}

}  // namespace

PYBIND11_MODULE(coremerge, m) {
  m.doc() = "Low-rank adapter merging in full, KnOTS, and core alignment spaces";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<ScorerError>(m, "ScorerError", PyExc_RuntimeError);

  // ---- numerics ----
  m.def("reduced_svd", [](const Matrix& mat) {
    const SvdTriple svd = reduced_svd(mat);
    return py::make_tuple(svd.u, svd.s, svd.vt);
  });
  m.def("numerical_rank", &numerical_rank, py::arg("m"), py::arg("rel_tol") = kRankRelTol);
  m.def("frobenius", &frobenius);
  m.def("matmul", &matmul);
  m.def("transpose", &transpose);
  m.def("isotropize", &isotropize);

  // ---- adapter sets ----
  py::class_<TaskAdapterSet>(m, "TaskAdapterSet")
      .def_property_readonly("task_count", &TaskAdapterSet::task_count)
      .def_property_readonly("layer_ids", &TaskAdapterSet::layer_ids)
      .def_property_readonly("task_names",
                             [](const TaskAdapterSet& set) {
                               std::vector<std::string> names;
                               for (const auto& task : set.tasks) names.push_back(task.name);
                               return names;
                             })
      .def("rank",
           [](const TaskAdapterSet& set, std::size_t task, const std::string& layer_id) {
             return set.layer(task, layer_id).rank();
           })
      .def("lora_a",
           [](const TaskAdapterSet& set, std::size_t task, const std::string& layer_id) {
             return set.layer(task, layer_id).a;
           })
      .def("lora_b",
           [](const TaskAdapterSet& set, std::size_t task, const std::string& layer_id) {
             return set.layer(task, layer_id).b;
           })
      .def("delta_w",
           [](const TaskAdapterSet& set, std::size_t task, const std::string& layer_id) {
             return set.layer(task, layer_id).delta_w();
           })
      .def("validate", &TaskAdapterSet::validate);

  m.def("synthesize_set", &synthesize_set, py::arg("m"), py::arg("n"), py::arg("task_count"),
        py::arg("ranks"), py::arg("seed"));
  m.def("load_bundle", &load_bundle);
  m.def("save_bundle", &save_bundle);
  m.def("absorb_vera",
        [](const Matrix& a_shared, const Matrix& b_shared, const Vector& lambda_b,
           const Vector& lambda_d) {
          VeraAdapterLayer v{"vera", a_shared, b_shared, lambda_b, lambda_d};
          const AdapterLayer out = absorb_vera(v);
          return py::make_tuple(out.a, out.b);
        });

  // ---- core space ----
  py::class_<ReferenceBases>(m, "ReferenceBases")
      .def_property_readonly("u_b_ref", [](const ReferenceBases& r) { return r.u_b_ref; })
      .def_property_readonly("v_a_ref", [](const ReferenceBases& r) { return r.v_a_ref; })
      .def_property_readonly("d_u", &ReferenceBases::d_u)
      .def_property_readonly("d_v", &ReferenceBases::d_v);

  m.def("build_reference_bases",
        [](const TaskAdapterSet& set, const std::string& layer_id) {
          return build_reference_bases(set, layer_id);
        });
  m.def("aligned_core",
        [](const TaskAdapterSet& set, std::size_t task, const std::string& layer_id,
           const ReferenceBases& refs) { return aligned_core(set.layer(task, layer_id), refs); });
  m.def("aligned_core_via_svd",
        [](const TaskAdapterSet& set, std::size_t task, const std::string& layer_id,
           const ReferenceBases& refs) {
          return aligned_core_via_svd(set.layer(task, layer_id), refs);
        });
  m.def("reconstruct", &reconstruct);
  m.def("alignment_error",
        [](const TaskAdapterSet& set, std::size_t task, const std::string& layer_id,
           const ReferenceBases& refs) {
          return alignment_error(set.layer(task, layer_id), refs);
        });
  m.def("to_full_space", &to_full_space);

  // ---- merge functions ----
  m.def("merge_ta", &merge_ta, py::arg("mats"), py::arg("alpha") = 1.0);
  m.def("merge_ties", &merge_ties, py::arg("mats"), py::arg("alpha") = 1.0,
        py::arg("top_k_percent") = 100.0);
  m.def("merge_dare_ties", &merge_dare_ties, py::arg("mats"), py::arg("alpha") = 1.0,
        py::arg("top_k_percent") = 100.0, py::arg("dare_p") = 0.1, py::arg("seed") = 0,
        py::arg("layer_id") = std::string{});
  m.def(
      "merge_tsv",
      [](const std::vector<Matrix>& mats, double alpha, std::optional<Index> k) {
        return merge_tsv(mats, alpha, k);
      },
      py::arg("mats"), py::arg("alpha") = 1.0, py::arg("k_per_task") = py::none());
  m.def("merge_cart", &merge_cart, py::arg("mats"), py::arg("alpha") = 1.0,
        py::arg("rank_fraction") = 1.0, py::arg("lambda_") = 1.0);

  // ---- recipes ----
  py::class_<MergeRecipe>(m, "MergeRecipe")
      .def(py::init([](const std::string& space, const std::string& method, bool iso_c,
                       double alpha, double top_k_percent, double dare_p,
                       std::optional<Index> tsv_k, double cart_rank_fraction,
                       double cart_lambda, std::uint64_t seed, bool knots_sigma_weighted) {
             MergeRecipe recipe;
             recipe.space = space_from_string(space);
             recipe.method = method_from_string(method);
             recipe.iso_c = iso_c;
             recipe.alpha = alpha;
             recipe.top_k_percent = top_k_percent;
             recipe.dare_p = dare_p;
             recipe.tsv_k = tsv_k;
             recipe.cart_rank_fraction = cart_rank_fraction;
             recipe.cart_lambda = cart_lambda;
             recipe.seed = seed;
             recipe.knots_sigma_weighted = knots_sigma_weighted;
             recipe.validate();
             return recipe;
           }),
           py::arg("space") = "core", py::arg("method") = "ta", py::arg("iso_c") = false,
           py::arg("alpha") = 1.0, py::arg("top_k_percent") = 100.0, py::arg("dare_p") = 0.1,
           py::arg("tsv_k") = py::none(), py::arg("cart_rank_fraction") = 1.0,
           py::arg("cart_lambda") = 1.0, py::arg("seed") = 0,
           py::arg("knots_sigma_weighted") = false)
      .def_property_readonly("space",
                             [](const MergeRecipe& r) { return std::string(to_string(r.space)); })
      .def_property_readonly("method",
                             [](const MergeRecipe& r) { return std::string(to_string(r.method)); })
      .def_readonly("iso_c", &MergeRecipe::iso_c)
      .def_readonly("alpha", &MergeRecipe::alpha)
      .def_readonly("top_k_percent", &MergeRecipe::top_k_percent)
      .def_readonly("dare_p", &MergeRecipe::dare_p)
      .def_readonly("cart_rank_fraction", &MergeRecipe::cart_rank_fraction)
      .def_readonly("cart_lambda", &MergeRecipe::cart_lambda)
      .def_readonly("seed", &MergeRecipe::seed)
      .def("__repr__", [](const MergeRecipe& r) { return to_json(r).dump(); });

  py::class_<MergedUpdate>(m, "MergedUpdate")
      .def_property_readonly("layer_ids",
                             [](const MergedUpdate& u) {
                               std::vector<std::string> ids;
                               for (const auto& layer : u.layers) ids.push_back(layer.layer_id);
                               return ids;
                             })
      .def("delta_w",
           [](const MergedUpdate& u, const std::string& id) { return find_layer(u, id).delta_w; })
      .def("space_object",
           [](const MergedUpdate& u, const std::string& id) {
             return find_layer(u, id).space_object;
           })
      .def_property_readonly("recipe", [](const MergedUpdate& u) { return u.recipe; });

  m.def("run_recipe", &run_recipe, py::arg("set"), py::arg("recipe"), py::arg("workers") = 1);
  m.def("to_adapter_set", &to_adapter_set);

  // ---- analysis ----
  m.def("truncate_merged", [](const Matrix& mat, double p) {
    const TruncationResult res = truncate_merged(mat, p);
    return py::make_tuple(res.truncated, res.energy_ratio);
  });
  m.def(
      "sar",
      [](const TaskAdapterSet& set, const std::string& layer_id, const std::string& space,
         Index k) {
        const SarReport report = sar(set, layer_id, space_from_string(space), k);
        py::list rows;
        for (const auto& row : report.values) {
          py::list out_row;
          for (const auto& v : row) out_row.append(v ? py::cast(*v) : py::none());
          rows.append(out_row);
        }
        return rows;
      },
      py::arg("set"), py::arg("layer_id"), py::arg("space") = "full", py::arg("k") = 1);
  m.def(
      "estimate_ops",
      [](const std::string& space, const std::string& method, bool iso_c, double mm, double nn,
         double tasks, double rank) {
        return estimate_ops(space_from_string(space), method_from_string(method), iso_c, mm, nn,
                            tasks, rank);
      },
      py::arg("space"), py::arg("method"), py::arg("iso_c"), py::arg("m"), py::arg("n"),
      py::arg("tasks"), py::arg("rank"));
  m.def("fit_scaling_exponent", &fit_scaling_exponent);
  m.def("alignment_error_report", [](const TaskAdapterSet& set) {
    return to_json(alignment_error_report(set)).dump();
  });
  m.def("rank_report", [](const MergedUpdate& merged) {
    const RankReport report = rank_report(merged);
    py::dict out;
    for (const auto& [layer, rank] : report.per_layer) out[py::cast(layer)] = rank;
    out["average"] = report.average;
    return out;
  });
}
