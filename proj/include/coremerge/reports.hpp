// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "coremerge/analysis.hpp"
#include "coremerge/mergers.hpp"
#include "coremerge/tuning.hpp"

namespace coremerge {

using Json = nlohmann::json;

// Reports are emitted in two shapes: CSV (one row per layer/pair, LF line
// endings, '.' decimal separator) and JSON. Schemas are documented in the
// README.

Json to_json(const MergeRecipe& recipe);
MergeRecipe recipe_from_json(const Json& j);

/// provenance.json written next to every merged bundle: recipe, per-layer
/// timings, ranks, notes.
Json provenance_json(const MergedUpdate& merged);

std::string to_csv(const AlignmentErrorReport& report);
Json to_json(const AlignmentErrorReport& report);

std::string to_csv(const SarReport& report);
Json to_json(const SarReport& report);

std::string to_csv(const RankReport& report);
Json to_json(const RankReport& report);

std::string bench_csv(const std::vector<BenchRecord>& records,
                      const std::vector<std::pair<std::string, double>>& exponents);
Json bench_json(const std::vector<BenchRecord>& records,
                const std::vector<std::pair<std::string, double>>& exponents);

std::string trace_csv_header();
std::string trace_csv_row(const TraceRow& row);

}  // namespace coremerge
