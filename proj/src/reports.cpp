// SPDX-License-Identifier: Apache-2.0
#include "coremerge/reports.hpp"

#include <cstdio>

namespace coremerge {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

Json to_json(const MergeRecipe& recipe) {
  Json j = {{"space", to_string(recipe.space)},
            {"method", to_string(recipe.method)},
            {"iso_c", recipe.iso_c},
            {"alpha", recipe.alpha},
            {"top_k_percent", recipe.top_k_percent},
            {"dare_p", recipe.dare_p},
            {"cart_rank_fraction", recipe.cart_rank_fraction},
            {"cart_lambda", recipe.cart_lambda},
            {"seed", recipe.seed},
            {"knots_sigma_weighted", recipe.knots_sigma_weighted}};
  if (recipe.tsv_k)
    j["tsv_k"] = *recipe.tsv_k;
  else
    j["tsv_k"] = nullptr;
  return j;
}

MergeRecipe recipe_from_json(const Json& j) {
  try {
    MergeRecipe recipe;
    recipe.space = space_from_string(j.at("space").get<std::string>());
    recipe.method = method_from_string(j.at("method").get<std::string>());
    recipe.iso_c = j.value("iso_c", false);
    recipe.alpha = j.value("alpha", 1.0);
    recipe.top_k_percent = j.value("top_k_percent", 100.0);
    recipe.dare_p = j.value("dare_p", 0.1);
    recipe.cart_rank_fraction = j.value("cart_rank_fraction", 1.0);
    recipe.cart_lambda = j.value("cart_lambda", 1.0);
    recipe.seed = j.value("seed", std::uint64_t{0});
    recipe.knots_sigma_weighted = j.value("knots_sigma_weighted", false);
    if (j.contains("tsv_k") && !j.at("tsv_k").is_null()) recipe.tsv_k = j.at("tsv_k").get<Index>();
    return recipe;
  } catch (const Json::exception& e) {
    throw ArgumentError("recipe json: " + std::string(e.what()));
  }
}

Json provenance_json(const MergedUpdate& merged) {
  Json layers = Json::array();
  for (const MergedLayer& layer : merged.layers) {
    layers.push_back({{"layer_id", layer.layer_id},
                      {"rows", layer.delta_w.rows()},
                      {"cols", layer.delta_w.cols()},
                      {"rank", numerical_rank(layer.delta_w)},
                      {"seconds", layer.seconds},
                      {"notes", layer.notes}});
  }
  return {{"recipe", to_json(merged.recipe)}, {"layers", std::move(layers)}};
}

std::string to_csv(const AlignmentErrorReport& report) {
  std::string out = "task,layer,eps_u,eps_v\n";
  for (const AlignmentErrorRow& row : report.rows)
    out += row.task + "," + row.layer_id + "," + fmt_double(row.eps_u) + "," +
           fmt_double(row.eps_v) + "\n";
  return out;
}

Json to_json(const AlignmentErrorReport& report) {
  Json rows = Json::array();
  for (const AlignmentErrorRow& row : report.rows)
    rows.push_back({{"task", row.task},
                    {"layer", row.layer_id},
                    {"eps_u", row.eps_u},
                    {"eps_v", row.eps_v}});
  return {{"rows", std::move(rows)},
          {"avg_eps_u", report.avg_eps_u},
          {"avg_eps_v", report.avg_eps_v}};
}

std::string to_csv(const SarReport& report) {
  std::string out = "layer,task_i,task_j,defined,sar\n";
  for (std::size_t i = 0; i < report.values.size(); ++i)
    for (std::size_t j = 0; j < report.values[i].size(); ++j) {
      const auto& v = report.values[i][j];
      out += report.layer_id + "," + report.task_names[i] + "," + report.task_names[j] + "," +
             (v ? "1" : "0") + "," + (v ? fmt_double(*v) : "") + "\n";
    }
  return out;
}

Json to_json(const SarReport& report) {
  Json pairs = Json::array();
  for (std::size_t i = 0; i < report.values.size(); ++i)
    for (std::size_t j = 0; j < report.values[i].size(); ++j) {
      const auto& v = report.values[i][j];
      Json entry = {{"task_i", report.task_names[i]}, {"task_j", report.task_names[j]}};
      if (v)
        entry["sar"] = *v;
      else
        entry["sar"] = nullptr;
      pairs.push_back(std::move(entry));
    }
  return {{"layer", report.layer_id},
          {"space", to_string(report.space)},
          {"k", report.k},
          {"pairs", std::move(pairs)},
          {"average_off_diagonal", report.average}};
}

std::string to_csv(const RankReport& report) {
  std::string out = "layer,rank\n";
  for (const auto& [layer, rank] : report.per_layer)
    out += layer + "," + std::to_string(rank) + "\n";
  return out;
}

Json to_json(const RankReport& report) {
  Json rows = Json::array();
  for (const auto& [layer, rank] : report.per_layer)
    rows.push_back({{"layer", layer}, {"rank", rank}});
  return {{"rows", std::move(rows)}, {"average", report.average}};
}

std::string bench_csv(const std::vector<BenchRecord>& records,
                      const std::vector<std::pair<std::string, double>>& exponents) {
  std::string out = "record,n,combo,rep,seconds,est_ops\n";
  for (const BenchRecord& rec : records)
    out += "time," + std::to_string(rec.n) + "," + rec.combo.label() + "," +
           std::to_string(rec.rep) + "," + fmt_double(rec.seconds) + "," +
           fmt_double(rec.est_ops) + "\n";
  for (const auto& [label, exponent] : exponents)
    out += "exponent,," + label + ",," + fmt_double(exponent) + ",\n";
  return out;
}

Json bench_json(const std::vector<BenchRecord>& records,
                const std::vector<std::pair<std::string, double>>& exponents) {
  Json times = Json::array();
  for (const BenchRecord& rec : records)
    times.push_back({{"n", rec.n},
                     {"combo", rec.combo.label()},
                     {"rep", rec.rep},
                     {"seconds", rec.seconds},
                     {"est_ops", rec.est_ops}});
  Json exps = Json::object();
  for (const auto& [label, exponent] : exponents) exps[label] = exponent;
  return {{"times", std::move(times)}, {"exponents", std::move(exps)}};
}

std::string trace_csv_header() { return "parameter,value,score,wall_time\n"; }

std::string trace_csv_row(const TraceRow& row) {
  return row.param + "," + fmt_double(row.value) + "," + fmt_double(row.score) + "," +
         fmt_double(row.wall_time) + "\n";
}

}  // namespace coremerge
