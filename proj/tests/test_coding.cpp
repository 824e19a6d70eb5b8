#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "tsdcfl/coding.hpp"
#include "tsdcfl/rng.hpp"

using namespace tsdcfl;
using namespace tsdcfl::coding;

namespace {

// Reference five-worker stage-2 geometry: one spent continuer, one continuer
// holding two of the three remaining columns, two fresh workers.
BoolMask five_worker_reduced_support() {
  std::vector<double> speeds{1, 1, 1, 1};
  std::vector<std::vector<int>> held{{}, {0, 1}, {}, {}};
  std::vector<bool> is_new{false, false, true, true};
  return build_support(3, 1, speeds, held, is_new);
}

}  // namespace

TEST_CASE("build_auxiliary produces T1 matrices") {
  SECTION("s=0 gives the all-ones row") {
    const auto aux = build_auxiliary(0, 3);
    REQUIRE(aux.entries.rows() == 1);
    REQUIRE(aux.entries.cols() == 3);
    for (int j = 0; j < 3; ++j) CHECK(aux.entries(0, j) == 1.0);
  }
  SECTION("s=1 width=4: all column pairs independent") {
    const auto aux = build_auxiliary(1, 4);
    oracles::for_each_subset(4, 2, [&](const std::vector<int>& cols) {
      Eigen::Matrix2d sub;
      sub.col(0) = aux.entries.col(cols[0]);
      sub.col(1) = aux.entries.col(cols[1]);
      CHECK(std::abs(sub.determinant()) > 1e-12);
    });
  }
  SECTION("s=2 width=5: all 3-column minors nonzero") {
    const auto aux = build_auxiliary(2, 5);
    oracles::for_each_subset(5, 3, [&](const std::vector<int>& cols) {
      Eigen::Matrix3d sub;
      for (int j = 0; j < 3; ++j) sub.col(j) = aux.entries.col(cols[j]);
      CHECK(std::abs(sub.determinant()) > 1e-12);
    });
  }
  SECTION("width below s+1 is rejected") {
    CHECK_THROWS_AS(build_auxiliary(2, 2), std::invalid_argument);
  }
}

TEST_CASE("build_support distributes copies per speed with full column cover") {
  SECTION("proportional quota example") {
    // (K_rem)(s+1) - held = 3*2 - 2 = 4 new copies, split 2/2 between two
    // equal-speed new workers.
    std::vector<double> speeds{1, 1, 1};
    std::vector<std::vector<int>> held{{0, 1}, {}, {}};
    std::vector<bool> is_new{false, true, true};
    const auto support = build_support(3, 1, speeds, held, is_new);
    int row1 = 0, row2 = 0;
    for (int c = 0; c < 3; ++c) {
      int degree = 0;
      for (int r = 0; r < 3; ++r) degree += support(r, c) ? 1 : 0;
      CHECK(degree == 2);
      row1 += support(1, c) ? 1 : 0;
      row2 += support(2, c) ? 1 : 0;
    }
    CHECK(row1 == 2);
    CHECK(row2 == 2);
  }
  SECTION("five-worker reduced layout") {
    const auto support = five_worker_reduced_support();
    REQUIRE(support.rows() == 4);
    REQUIRE(support.cols() == 3);
    for (int c = 0; c < 3; ++c) CHECK_FALSE(support(0, c));  // nothing left to contribute
    CHECK(support(1, 0));
    CHECK(support(1, 1));
    CHECK_FALSE(support(1, 2));
    for (int c = 0; c < 3; ++c) {
      int degree = 0;
      for (int r = 0; r < 4; ++r) degree += support(r, c) ? 1 : 0;
      CHECK(degree == 2);
    }
  }
  SECTION("degenerate single worker, no redundancy") {
    const auto support = build_support(1, 0, {1.0}, {{}}, {true});
    CHECK(support(0, 0));
  }
  SECTION("excess continuing copies are trimmed to s+1") {
    std::vector<double> speeds{1, 1, 1, 1};
    std::vector<std::vector<int>> held{{0}, {0}, {0}, {}};
    std::vector<bool> is_new{false, false, false, true};
    const auto support = build_support(1, 1, speeds, held, is_new);
    int degree = 0;
    for (int r = 0; r < 4; ++r) degree += support(r, 0) ? 1 : 0;
    CHECK(degree == 2);
    CHECK(support(0, 0));
    CHECK(support(1, 0));
    CHECK_FALSE(support(2, 0));  // highest-index holder dropped
  }
  SECTION("infeasible when a column cannot reach s+1 distinct workers") {
    CHECK_THROWS_AS(build_support(2, 1, {1.0}, {{}}, {true}), InfeasibleAssignment);
  }
  SECTION("repair pass covers columns when quotas concentrate") {
    // Extreme speed skew sends every planned copy to worker 0; later columns
    // still need distinct rows.
    std::vector<double> speeds{1000, 1};
    std::vector<std::vector<int>> held{{}, {}};
    std::vector<bool> is_new{true, true};
    const auto support = build_support(2, 1, speeds, held, is_new);
    for (int c = 0; c < 2; ++c) {
      int degree = 0;
      for (int r = 0; r < 2; ++r) degree += support(r, c) ? 1 : 0;
      CHECK(degree == 2);
    }
  }
}

TEST_CASE("fill_code_matrix solves every column against the auxiliary matrix") {
  SECTION("s=0 columns are unit entries") {
    BoolMask support = BoolMask::Constant(2, 2, false);
    support(0, 0) = true;
    support(1, 1) = true;
    const auto code = fill_code_matrix(support, build_auxiliary(0, 2));
    CHECK(code.entries(0, 0) == 1.0);
    CHECK(code.entries(1, 1) == 1.0);
    CHECK(code.structurally_consistent());
  }
  SECTION("per-column solve oracle") {
    const auto support = five_worker_reduced_support();
    const auto aux = build_auxiliary(1, 4);
    const auto code = fill_code_matrix(support, aux);
    for (int c = 0; c < 3; ++c) {
      Eigen::Vector2d acc = Eigen::Vector2d::Zero();
      for (int r = 0; r < 4; ++r)
        if (support(r, c)) acc += aux.entries.col(r) * code.entries(r, c);
      CHECK(acc(0) == Catch::Approx(1.0).margin(1e-12));
      CHECK(acc(1) == Catch::Approx(1.0).margin(1e-12));
    }
  }
  SECTION("filled five-worker layout survives every single straggler") {
    const auto code = fill_code_matrix(five_worker_reduced_support(), build_auxiliary(1, 4));
    CHECK(oracles::decodes_all_patterns(code, 1));
  }
  SECTION("degree mismatch is rejected") {
    BoolMask support = BoolMask::Constant(2, 1, false);
    support(0, 0) = true;
    CHECK_THROWS_AS(fill_code_matrix(support, build_auxiliary(1, 2)), std::invalid_argument);
  }
}

TEST_CASE("decode solves the survivor system by least squares") {
  SECTION("single worker, single partition") {
    CodeMatrix code = CodeMatrix::zero(1, 1);
    code.entries(0, 0) = 1.0;
    code.support(0, 0) = true;
    const auto res = decode(code, {0});
    REQUIRE(res.success);
    CHECK(res.residual == Catch::Approx(0.0).margin(1e-15));
    CHECK(res.coefficients(0) == Catch::Approx(1.0));
  }
  SECTION("cyclic repetition M=3 s=1: any two survivors decode") {
    const auto code = cyclic_repetition(3, 1);
    oracles::for_each_subset(3, 2, [&](const std::vector<int>& survivors) {
      const auto res = decode(code, survivors);
      CHECK(res.success);
    });
  }
  SECTION("missing partition fails") {
    CodeMatrix code = CodeMatrix::zero(2, 2);
    code.entries(0, 0) = 1.0;
    code.support(0, 0) = true;
    code.entries(1, 1) = 1.0;
    code.support(1, 1) = true;
    const auto res = decode(code, {0});
    CHECK_FALSE(res.success);
  }
  SECTION("empty column set decodes trivially") {
    const auto res = decode(CodeMatrix::zero(3, 0), {0, 1});
    CHECK(res.success);
  }
}

TEST_CASE("check_span_condition enumerates survivor sets") {
  SECTION("identity code with one straggler fails") {
    CodeMatrix identity = CodeMatrix::zero(3, 3);
    for (int i = 0; i < 3; ++i) {
      identity.entries(i, i) = 1.0;
      identity.support(i, i) = true;
    }
    CHECK_FALSE(check_span_condition(identity, CodeMatrix::zero(0, 3), {}, 1));
    CHECK(check_span_condition(identity, CodeMatrix::zero(0, 3), {}, 0));
  }
  SECTION("s=0 reduces to a plain rank test, cross-checked") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      CodeMatrix code = CodeMatrix::zero(3, 4);
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) {
          code.entries(r, c) = rng.normal();
          code.support(r, c) = true;
        }
      std::vector<Eigen::RowVectorXd> rows;
      for (int r = 0; r < 3; ++r) rows.push_back(code.entries.row(r));
      const bool expect = oracles::ones_in_rowspan(rows, 4);
      CHECK(check_span_condition(code, CodeMatrix::zero(0, 4), {}, 0) == expect);
    }
  }
  SECTION("five-worker reference system tolerates one straggler") {
    // Stage-1 rows in the full 7-column space: m1 completed {0..3}; m2 has
    // nothing left; m3 continues with solved values on {4, 5}.
    const auto reduced = fill_code_matrix(five_worker_reduced_support(), build_auxiliary(1, 4));
    CodeMatrix stage1 = CodeMatrix::zero(3, 7);
    for (int c = 0; c <= 3; ++c) {
      stage1.entries(0, c) = 1.0;
      stage1.support(0, c) = true;
    }
    const int reduced_to_full[3] = {4, 5, 6};
    for (int c = 0; c < 3; ++c) {
      if (reduced.support(1, c)) {
        stage1.entries(2, reduced_to_full[c]) = reduced.entries(1, c);
        stage1.support(2, reduced_to_full[c]) = true;
      }
    }
    CodeMatrix stage2 = CodeMatrix::zero(2, 7);
    for (int row = 0; row < 2; ++row) {
      for (int c = 0; c < 3; ++c) {
        if (reduced.support(2 + row, c)) {
          stage2.entries(row, reduced_to_full[c]) = reduced.entries(2 + row, c);
          stage2.support(row, reduced_to_full[c]) = true;
        }
      }
    }
    CHECK(check_span_condition(stage1, stage2, {0}, 1));
    CHECK_FALSE(check_span_condition(stage1, stage2, {0}, 2));
  }
}

TEST_CASE("encode_partials forms the supported linear combination") {
  Rng rng(11);
  SECTION("plain and weighted rows") {
    CodeMatrix code = CodeMatrix::zero(2, 2);
    code.entries(0, 0) = 1.0;
    code.support(0, 0) = true;
    code.entries(1, 0) = 2.0;
    code.support(1, 0) = true;
    code.entries(1, 1) = -1.0;
    code.support(1, 1) = true;
    Eigen::VectorXd g1(2), g2(2);
    g1 << 1.0, 2.0;
    g2 << -3.0, 0.5;
    std::vector<const Eigen::VectorXd*> partials{&g1, &g2};
    CHECK(encode_partials(code, 0, partials, 2).isApprox(g1));
    CHECK(encode_partials(code, 1, partials, 2).isApprox(2 * g1 - g2));
  }
  SECTION("random row matches the scalar-expansion oracle") {
    CodeMatrix code = CodeMatrix::zero(1, 5);
    for (int c = 0; c < 5; ++c) {
      code.entries(0, c) = rng.normal();
      code.support(0, c) = true;
    }
    const auto partials = oracles::random_partials(5, 4, rng);
    std::vector<const Eigen::VectorXd*> ptrs;
    for (const auto& g : partials) ptrs.push_back(&g);
    const auto coded = encode_partials(code, 0, ptrs, 4);
    Eigen::VectorXd naive = Eigen::VectorXd::Zero(4);
    for (int c = 0; c < 5; ++c)
      for (int j = 0; j < 4; ++j) naive(j) += code.entries(0, c) * partials[c](j);
    CHECK((coded - naive).cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("missing supported partial throws") {
    CodeMatrix code = CodeMatrix::zero(1, 2);
    code.entries(0, 1) = 1.0;
    code.support(0, 1) = true;
    Eigen::VectorXd g(1);
    g << 1.0;
    std::vector<const Eigen::VectorXd*> partials{&g, nullptr};
    CHECK_THROWS_AS(encode_partials(code, 0, partials, 1), MissingPartial);
  }
}

TEST_CASE("aggregate_decode reconstructs the partition sum") {
  Rng rng(13);
  SECTION("single survivor identity") {
    Eigen::VectorXd g(3);
    g << 1, 2, 3;
    Eigen::VectorXd a(1);
    a << 1.0;
    CHECK(aggregate_decode(a, {g}).isApprox(g));
  }
  SECTION("cyclic M=3 s=1 equals the direct sum under every pattern") {
    const auto code = cyclic_repetition(3, 1);
    const auto partials = oracles::random_partials(3, 5, rng);
    oracles::for_each_subset(3, 2, [&](const std::vector<int>& survivors) {
      const auto res = decode(code, survivors);
      REQUIRE(res.success);
      CHECK(oracles::recovery_error(code, survivors, res.coefficients, partials) < 1e-9);
    });
  }
  SECTION("five-worker layout with the last worker straggling recovers the full gradient") {
    const auto reduced = fill_code_matrix(five_worker_reduced_support(), build_auxiliary(1, 4));
    const auto partials = oracles::random_partials(7, 3, rng);
    // Durable stage-1 part: g0..g3 delivered by m1.
    Eigen::VectorXd total = Eigen::VectorXd::Zero(3);
    for (int k = 0; k <= 3; ++k) total += partials[k];
    // Stage-2 decode over {g4, g5, g6} without row 3 (m5).
    std::vector<int> survivors{0, 1, 2};
    const auto res = decode(reduced, survivors);
    REQUIRE(res.success);
    std::vector<const Eigen::VectorXd*> remaining{&partials[4], &partials[5], &partials[6]};
    std::vector<Eigen::VectorXd> coded;
    for (int r : survivors) coded.push_back(encode_partials(reduced, r, remaining, 3));
    total += aggregate_decode(res.coefficients, coded);
    Eigen::VectorXd direct = Eigen::VectorXd::Zero(3);
    for (const auto& g : partials) direct += g;
    CHECK((total - direct).cwiseAbs().maxCoeff() / direct.cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("cyclic repetition baseline") {
  SECTION("s=0 is the identity code") {
    const auto code = cyclic_repetition(3, 0);
    CHECK(code.entries.isApprox(Eigen::MatrixXd::Identity(3, 3)));
  }
  SECTION("column degree is s+1 and every pattern decodes") {
    for (auto [m, s] : {std::pair{3, 1}, std::pair{5, 1}, std::pair{5, 2}}) {
      const auto code = cyclic_repetition(m, s);
      for (int c = 0; c < m; ++c) CHECK(code.column_degree(c) == s + 1);
      CHECK(oracles::decodes_all_patterns(code, s));
    }
  }
}

TEST_CASE("fractional repetition baseline") {
  SECTION("M=4 s=1: two groups of two, exhaustive decode") {
    const auto code = fractional_repetition(4, 1);
    CHECK(code.column_degree(0) == 2);
    CHECK(oracles::decodes_all_patterns(code, 1));
  }
  SECTION("M=3 s=2: singleton groups with all-ones rows") {
    const auto code = fractional_repetition(3, 2);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) CHECK(code.entries(r, c) == 1.0);
    CHECK(oracles::decodes_all_patterns(code, 2));
  }
  SECTION("indivisible worker count is rejected") {
    CHECK_THROWS_AS(fractional_repetition(5, 1), IndivisibleWorkers);
  }
}

TEST_CASE("exact recovery property on random draws") {
  Rng rng(17);
  for (auto [m, s] : {std::pair{3, 1}, std::pair{5, 2}, std::pair{6, 1}}) {
    const auto code = cyclic_repetition(m, s);
    for (int draw = 0; draw < 100; ++draw) {
      const auto partials = oracles::random_partials(m, 3, rng);
      std::vector<int> survivors;
      // Rotate a deterministic straggler pattern through the draws.
      const int out = draw % m;
      for (int r = 0; r < m; ++r)
        if (r != out) survivors.push_back(r);
      const auto res = decode(code, survivors);
      REQUIRE(res.success);
      REQUIRE(oracles::recovery_error(code, survivors, res.coefficients, partials) < 1e-9);
    }
  }
}

TEST_CASE("code matrix JSON round trip") {
  const auto code = cyclic_repetition(3, 1);
  const auto j = to_json(code);
  const auto back = code_matrix_from_json(j);
  CHECK(back.entries.isApprox(code.entries));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) CHECK(back.support(r, c) == code.support(r, c));
  nlohmann::json corrupt = j;
  corrupt["entries"][2] = 5.0;  // outside the support mask
  if (!code.support(0, 2)) CHECK_THROWS_AS(code_matrix_from_json(corrupt), ConfigError);
}
