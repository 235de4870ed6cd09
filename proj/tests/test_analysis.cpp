// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "coremerge/analysis.hpp"
#include "coremerge/core_space.hpp"
#include "coremerge/rng.hpp"
#include "helpers.hpp"

using namespace coremerge;
using namespace coremerge::test;

TEST_SUITE_BEGIN("analysis");

TEST_CASE("truncate_merged") {
  SUBCASE("p = 0 returns the input untouched") {
    const Matrix m = gaussian_matrix(5, 4, 401);
    const TruncationResult res = truncate_merged(m, 0.0);
    CHECK(rel_err(res.truncated, m) == 0.0);
    CHECK(res.energy_ratio == 1.0);
  }
  SUBCASE("sigma = [2, 1], p = 0.5 keeps 4/5 of the energy") {
    Matrix d = Matrix::Zero(2, 2);
    d(0, 0) = 2.0;
    d(1, 1) = 1.0;
    const TruncationResult res = truncate_merged(d, 0.5);
    CHECK(res.energy_ratio == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(numerical_rank(res.truncated) == 1);
  }
  SUBCASE("energy ratio equals the direct spectrum arithmetic") {
    const Matrix m = gaussian_matrix(7, 6, 402);
    const Vector s = singular_values(m);
    for (const double p : {0.2, 0.5, 0.8}) {
      const TruncationResult res = truncate_merged(m, p);
      const Index keep = s.size() - static_cast<Index>(std::ceil(p * static_cast<double>(s.size())));
      const double expected = s.head(keep).squaredNorm() / s.squaredNorm();
      CHECK(res.energy_ratio == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  SUBCASE("retained energy is nonincreasing in p") {
    const Matrix m = gaussian_matrix(8, 8, 403);
    double last = 1.0;
    for (double p = 0.0; p < 0.95; p += 0.1) {
      const double ratio = truncate_merged(m, p).energy_ratio;
      CHECK(ratio <= last + 1e-12);
      last = ratio;
    }
  }
  SUBCASE("invalid p") {
    const Matrix m = Matrix::Identity(2, 2);
    CHECK_THROWS_AS((void)truncate_merged(m, 1.0), ArgumentError);
    CHECK_THROWS_AS((void)truncate_merged(m, -0.1), ArgumentError);
  }
}

TEST_CASE("half truncation removes more energy from the core than the full matrix") {
  const TaskAdapterSet set = synthesize_set(32, 32, 4, {2, 2, 2, 2}, 411);
  MergeRecipe recipe;
  recipe.method = Method::ta;

  recipe.space = Space::full;
  const MergedUpdate full = run_recipe(set, recipe);
  recipe.space = Space::core;
  const MergedUpdate core = run_recipe(set, recipe);

  const double lost_full = 1.0 - truncate_merged(full.layers[0].space_object, 0.5).energy_ratio;
  const double lost_core = 1.0 - truncate_merged(core.layers[0].space_object, 0.5).energy_ratio;
  CHECK(lost_core > lost_full);
}

TEST_CASE("sar") {
  SUBCASE("self-alignment is 1 when k covers the rank") {
    const TaskAdapterSet set = synthesize_set(10, 9, 2, {2, 2}, 421);
    const SarReport report = sar(set, "layer_0", Space::full, 2);
    REQUIRE(report.values.size() == 2);
    CHECK(*report.values[0][0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(*report.values[1][1] == doctest::Approx(1.0).epsilon(1e-10));
  }
  SUBCASE("orthogonal row spaces score 0") {
    TaskAdapterSet set = synthesize_set(6, 6, 2, {1, 1}, 422);
    // rebuild with disjoint row spaces
    Matrix a0 = Matrix::Zero(1, 6), a1 = Matrix::Zero(1, 6);
    a0(0, 0) = 1.0;
    a1(0, 3) = 1.0;
    set.tasks[0].layers.at("layer_0").a = a0;
    set.tasks[1].layers.at("layer_0").a = a1;
    const SarReport report = sar(set, "layer_0", Space::full, 1);
    CHECK(*report.values[0][1] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(*report.values[1][0] == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("identical adapters align fully both ways") {
    TaskAdapterSet set = synthesize_set(8, 7, 2, {2, 2}, 423);
    set.tasks[1].layers.at("layer_0") = set.tasks[0].layers.at("layer_0");
    const SarReport report = sar(set, "layer_0", Space::full, 2);
    CHECK(*report.values[0][1] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(*report.values[1][0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(report.average == doctest::Approx(1.0).epsilon(1e-10));
  }
  SUBCASE("values stay within [0, 1] and core space is defined") {
    const TaskAdapterSet set = synthesize_set(12, 10, 3, {2, 2, 2}, 424);
    for (const Space space : {Space::full, Space::core}) {
      const SarReport report = sar(set, "layer_0", space, 2);
      for (const auto& row : report.values)
        for (const auto& v : row) {
          REQUIRE(v.has_value());
          CHECK(*v >= 0.0);
          CHECK(*v <= 1.0 + 1e-10);
        }
    }
  }
  SUBCASE("zero update rows are flagged undefined, not NaN") {
    TaskAdapterSet set = synthesize_set(6, 6, 2, {1, 1}, 425);
    set.tasks[0].layers.at("layer_0").a.setZero();
    const SarReport report = sar(set, "layer_0", Space::full, 1);
    CHECK(!report.values[0][0].has_value());
    CHECK(!report.values[0][1].has_value());
    CHECK(report.values[1][0].has_value());
  }
  SUBCASE("parameter validation") {
    const TaskAdapterSet set = synthesize_set(6, 6, 1, {1}, 426);
    CHECK_THROWS_AS((void)sar(set, "layer_0", Space::full, 0), ArgumentError);
    CHECK_THROWS_AS((void)sar(set, "layer_0", Space::knots, 1), ArgumentError);
  }
}

TEST_CASE("estimate_ops follows the dominant terms") {
  const double T = 8, r = 16;
  SUBCASE("core task arithmetic is quadratic in n") {
    const double lo = estimate_ops(Space::core, Method::ta, false, 1e6, 1e6, T, r);
    const double hi = estimate_ops(Space::core, Method::ta, false, 2e6, 2e6, T, r);
    CHECK(hi / lo == doctest::Approx(4.0).epsilon(0.01));
  }
  SUBCASE("full-space isotropization is cubic in n") {
    const double lo = estimate_ops(Space::full, Method::ta, true, 1e6, 1e6, T, r);
    const double hi = estimate_ops(Space::full, Method::ta, true, 2e6, 2e6, T, r);
    CHECK(hi / lo == doctest::Approx(8.0).epsilon(0.01));
  }
  SUBCASE("knots TIES is cubic in n") {
    const double lo = estimate_ops(Space::knots, Method::ties, false, 1e6, 1e6, T, r);
    const double hi = estimate_ops(Space::knots, Method::ties, false, 2e6, 2e6, T, r);
    CHECK(hi / lo == doctest::Approx(8.0).epsilon(0.01));
  }
  SUBCASE("monotone in every argument") {
    const double base_vals[4] = {64, 48, 4, 2};
    for (const Space space : {Space::full, Space::knots, Space::core})
      for (const Method method : {Method::ta, Method::ties, Method::dare_ties, Method::tsv,
                                  Method::cart})
        for (const bool iso : {false, true}) {
          const double base = estimate_ops(space, method, iso, base_vals[0], base_vals[1],
                                           base_vals[2], base_vals[3]);
          for (int arg = 0; arg < 4; ++arg) {
            double vals[4] = {base_vals[0], base_vals[1], base_vals[2], base_vals[3]};
            vals[arg] *= 2.0;
            const double bumped =
                estimate_ops(space, method, iso, vals[0], vals[1], vals[2], vals[3]);
            CHECK(bumped >= base);
          }
        }
  }
  SUBCASE("invalid dimensions") {
    CHECK_THROWS_AS((void)estimate_ops(Space::core, Method::ta, false, 0, 8, 1, 1),
                    ArgumentError);
  }
}

TEST_CASE("fit_scaling_exponent") {
  SUBCASE("exact power laws") {
    std::vector<std::pair<double, double>> sq, cu;
    for (const double n : {128.0, 256.0, 512.0, 1024.0}) {
      sq.emplace_back(n, 3.5e-9 * n * n);
      cu.emplace_back(n, 1.2e-11 * n * n * n);
    }
    CHECK(fit_scaling_exponent(sq) == doctest::Approx(2.0).epsilon(1e-6));
    CHECK(fit_scaling_exponent(cu) == doctest::Approx(3.0).epsilon(1e-6));
  }
  SUBCASE("degenerate inputs") {
    CHECK_THROWS_AS((void)fit_scaling_exponent({{1, 1}, {2, 2}}), ArgumentError);
    CHECK_THROWS_AS((void)fit_scaling_exponent({{1, 1}, {1, 2}, {1, 3}}), ArgumentError);
    CHECK_THROWS_AS((void)fit_scaling_exponent({{1, 1}, {2, 0}, {3, 3}}), ArgumentError);
  }
}

TEST_CASE("rank_report") {
  SUBCASE("single task stays within the adapter rank") {
    const TaskAdapterSet set = synthesize_set(12, 12, 1, {3}, 431);
    MergeRecipe recipe;
    recipe.space = Space::full;
    recipe.method = Method::ta;
    const RankReport report = rank_report(run_recipe(set, recipe));
    REQUIRE(report.per_layer.size() == 1);
    CHECK(report.per_layer[0].second <= 3);
    CHECK(report.average == static_cast<double>(report.per_layer[0].second));
  }
  SUBCASE("core task arithmetic hits the aggregate rank") {
    const TaskAdapterSet set = synthesize_set(24, 24, 4, {2, 2, 2, 2}, 432);
    MergeRecipe recipe;
    recipe.space = Space::core;
    recipe.method = Method::ta;
    const RankReport report = rank_report(run_recipe(set, recipe));
    CHECK(report.per_layer[0].second == 8);
  }
}

TEST_CASE("reference_basis_ablation") {
  const TaskAdapterSet set = synthesize_set(16, 14, 4, {2, 2, 2, 2}, 441);

  SUBCASE("concatenation basis has zero error") {
    const AlignmentErrorReport report =
        reference_basis_ablation(set, "layer_0", BasisVariant::concatenation);
    REQUIRE(report.rows.size() == 4);
    CHECK(report.avg_eps_u <= 1e-8);
    CHECK(report.avg_eps_v <= 1e-8);
  }
  SUBCASE("random orthonormal basis of the same width has positive error") {
    const AlignmentErrorReport report =
        reference_basis_ablation(set, "layer_0", BasisVariant::random_orthonormal, 7);
    CHECK(report.avg_eps_u > 1e-3);
    CHECK(report.avg_eps_v > 1e-3);
    // deterministic for a fixed seed
    const AlignmentErrorReport again =
        reference_basis_ablation(set, "layer_0", BasisVariant::random_orthonormal, 7);
    CHECK(report.avg_eps_u == again.avg_eps_u);
  }
  SUBCASE("first-task basis self-aligns on task one") {
    const AlignmentErrorReport report =
        reference_basis_ablation(set, "layer_0", BasisVariant::first_task);
    CHECK(report.rows[0].eps_u <= 1e-8);
    CHECK(report.rows[0].eps_v <= 1e-8);
    CHECK(report.avg_eps_u > 1e-3);  // the other tasks do not fit
  }
}

TEST_CASE("alignment_error_report covers all layers and tasks") {
  const TaskAdapterSet set = synthesize_set(10, 8, 3, {2, 2, 2}, 443);
  const AlignmentErrorReport report = alignment_error_report(set);
  REQUIRE(report.rows.size() == 3);
  for (const AlignmentErrorRow& row : report.rows) {
    CHECK(row.eps_u <= 1e-8);
    CHECK(row.eps_v <= 1e-8);
  }
}

TEST_CASE("run_benchmark produces records and exponents") {
  const std::vector<BenchCombo> combos{{Space::core, Method::ta, false},
                                       {Space::full, Method::ta, false}};
  const auto records = run_benchmark({16, 24}, 2, 2, combos, 2, 11);
  CHECK(records.size() == 2 * 2 * 2);
  for (const BenchRecord& rec : records) {
    CHECK(rec.seconds > 0.0);
    CHECK(rec.est_ops > 0.0);
  }
  // two sizes only: no exponent fits
  CHECK(fit_benchmark_exponents(records).empty());

  const auto more = run_benchmark({16, 24, 32}, 2, 2, {{Space::core, Method::ta, false}}, 1, 13);
  const auto exps = fit_benchmark_exponents(more);
  REQUIRE(exps.size() == 1);
  CHECK(exps[0].first == "core-ta");
}

TEST_CASE("bench combo labels") {
  CHECK(BenchCombo{Space::core, Method::ta, true}.label() == "core-iso-c");
  CHECK(BenchCombo{Space::knots, Method::ta, false}.label() == "knots-ta");
  CHECK(BenchCombo{Space::full, Method::tsv, true}.label() == "full-tsv+iso-c");
}

TEST_SUITE_END();
