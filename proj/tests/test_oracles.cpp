#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "qplan/error.hpp"
#include "qplan/rng.hpp"

using namespace qplan;
using namespace qplan::oracle;

TEST_CASE("reference quantizer")
{
    CHECK(reference_quantize(0.0, 1.0, 3) == 0.0);
    CHECK(reference_quantize(10.0, 1.0, 2) == doctest::Approx(4.0 / 3.0));
    CHECK(reference_quantize(-10.0, 1.0, 2) == doctest::Approx(-4.0 / 3.0));
    // 3 bits, a = 3.5: step 1, codes -4..4
    CHECK(reference_quantize(0.5, 3.5, 3) == 1.0);
    CHECK(reference_quantize(-0.5, 3.5, 3) == -1.0);
    CHECK(reference_quantize(3.4, 3.5, 3) == 3.0);
    CHECK(reference_quantize(3.5, 3.5, 3) == 4.0);
}

TEST_CASE("three Gaussian MSE oracles agree")
{
    for (int b : {1, 3, 5}) {
        const double a = analytic_optimal_clip(b);
        const auto an = analytic_gaussian_mse(a, b);
        const auto mc = mc_gaussian_mse(1.0, b, a, 2'000'000, 7);
        const auto st = stratified_gaussian_mse(1.0, b, a, 2'000'000, 7);
        CHECK(an.method == Method::Analytic);
        CHECK(mc.method == Method::MonteCarlo);
        CHECK(mc.samples == 2'000'000);
        CHECK(mc.value == doctest::Approx(an.value).epsilon(0.02));
        CHECK(st.value == doctest::Approx(an.value).epsilon(0.005));
    }
    // sigma scaling
    const double a = analytic_optimal_clip(4);
    const auto s = stratified_gaussian_mse(3.0, 4, 3.0 * a, 1'000'000, 1);
    CHECK(s.value / 9.0 == doctest::Approx(analytic_gaussian_mse(a, 4).value).epsilon(0.01));

    CHECK_THROWS_AS(mc_gaussian_mse(1.0, 4, 1.0, 1000, 0), Error);
    CHECK_THROWS_AS(stratified_gaussian_mse(1.0, 4, 1.0, 1000, 0), Error);
}

TEST_CASE("1-bit clip is an interior minimum")
{
    // One step of 2a: output is 0 inside (-a, a) and +-2a at the clip.
    const double a = analytic_optimal_clip(1);
    CHECK(analytic_gaussian_mse(a, 1).value <= 1.0);
    CHECK(analytic_gaussian_mse(a, 1).value < analytic_gaussian_mse(0.5 * a, 1).value);
    CHECK(analytic_gaussian_mse(a, 1).value < analytic_gaussian_mse(2.0 * a, 1).value);
}

TEST_CASE("exhaustive allocation")
{
    std::vector<LayerStats> s{{"a", 16.0, 1, true}, {"b", 1.0, 1, true}};
    const auto r = exhaustive_allocation(s, 4.0, 2, 8);
    REQUIRE(r.feasible);
    CHECK(*r.bits[0] == 5);
    CHECK(*r.bits[1] == 3);
    CHECK(r.objective == doctest::Approx(0.03125));
    CHECK(r.states > 0);
}

TEST_CASE("exhaustive schedule")
{
    const auto kappa = [](int b) { return std::exp2(-2.0 * b); };
    const auto r = exhaustive_schedule({1.0}, 4.5, {2, 4, 6}, kappa, 0);
    REQUIRE(r.feasible);
    CHECK(r.bits == std::vector<int>{4});

    // zero-variance tail goes to the minimum width
    const auto z = exhaustive_schedule({2.0, 0.0, 0.0}, 4.0, {2, 4, 6, 8}, kappa, 0);
    CHECK(z.bits == std::vector<int>{8, 2, 2});

    const auto one = exhaustive_schedule({3.0, 1.0, 2.0}, 5.0, {2, 4, 6}, kappa, 1);
    CHECK(one.segments == 1);
    CHECK(one.bits == std::vector<int>{4, 4, 4});

    CHECK_FALSE(exhaustive_schedule({1.0, 1.0}, 1.0, {2, 4}, kappa, 0).feasible);
}

TEST_CASE("exhaustive block search")
{
    Rng rng(61);
    Matrix w = Matrix::Zero(64, 64);
    for (Index p = 0; p < 4; ++p)
        for (Index q = 0; q < 4; ++q)
            w.block(p * 16, q * 16, 16, 16) = rng.normal_vector(16) * rng.normal_vector(16).transpose();
    const auto r = exhaustive_block_search(w, 8);
    CHECK(r.config.s_o == 16);
    CHECK(r.config.s_i == 16);
    CHECK(r.error < 1e-8 * w.norm());
    CHECK(r.candidates > 1);

    CHECK_THROWS_AS(exhaustive_block_search(Matrix::Ones(2, 2), 1), Error);
}

TEST_CASE("spearman")
{
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
    // ties take average ranks: x ranks (1, 2.5, 2.5, 4)
    CHECK(spearman({1, 2, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(0.9486832980505138));
    CHECK_THROWS_AS(spearman({1, 2}, {1}), Error);
}
