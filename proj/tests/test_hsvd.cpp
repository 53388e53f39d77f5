#include <doctest.h>

#include <algorithm>
#include <vector>

#include "oracles.hpp"
#include "qplan/error.hpp"
#include "qplan/hsvd.hpp"
#include "qplan/model.hpp"
#include "qplan/rng.hpp"

using namespace qplan;

namespace {

const DistortionTable& table()
{
    static const DistortionTable t = build_distortion_table(std::vector<int>{4, 6, 16});
    return t;
}

bool has(const std::vector<BlockConfig>& v, Index s_o, Index s_i)
{
    return std::any_of(v.begin(), v.end(), [&](const BlockConfig& c) { return c.s_o == s_o && c.s_i == s_i; });
}

// Rank-1 tiles of size s x s on the diagonal grid, every tile populated.
Matrix tiled_rank_one(Index n, Index s, Rng& rng)
{
    Matrix m = Matrix::Zero(n, n);
    for (Index p = 0; p < n / s; ++p)
        for (Index q = 0; q < n / s; ++q)
            m.block(p * s, q * s, s, s) = rng.normal_vector(s) * rng.normal_vector(s).transpose();
    return m;
}

}  // namespace

TEST_CASE("budgets")
{
    CHECK(global_budget(64, 64, 8) == 1024);
    CHECK(global_budget(64, 64, 0) == 0);
    CHECK(global_budget(4096, 1024, 32) == 163840);

    CHECK(local_budget(64, 64, 16, 16) == 528);
    CHECK(local_budget(64, 64, 8, 8) == 1088);
    CHECK(local_budget(64, 32, 64, 32) == 64 + 32 + 1);
}

TEST_CASE("feasible blocks")
{
    const auto f = feasible_blocks(64, 64, 8);
    CHECK(has(f, 16, 16));
    CHECK_FALSE(has(f, 8, 8));
    for (const auto& c : f) CHECK(c.budget <= global_budget(64, 64, 8));

    for (Index r : {8, 16}) CHECK(has(feasible_blocks(16, 8, r), 16, 8));

    try {
        feasible_blocks(2, 2, 1);
        FAIL("expected NoFeasibleConfig");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NoFeasibleConfig);
    }
    CHECK_THROWS_AS(feasible_blocks(64, 64, 0), Error);
}

TEST_CASE("block selection")
{
    Rng rng(21);
    const Matrix planted = tiled_rank_one(64, 16, rng);
    const auto cands = feasible_blocks(64, 64, 8);
    const auto cfg = select_block_config(planted, cands);
    CHECK(cfg.s_o == 16);
    CHECK(cfg.s_i == 16);
    CHECK((local_branch(planted, cfg).assemble() - planted).norm() < 1e-8 * planted.norm());

    const std::vector<BlockConfig> single{{32, 16, local_budget(64, 64, 32, 16)}};
    CHECK(select_block_config(rng.normal_matrix(64, 64), single) == single[0]);

    CHECK_THROWS_AS(select_block_config(planted, std::vector<BlockConfig>{}), Error);
}

TEST_CASE("block selection matches exhaustive search")
{
    Rng rng(22);
    for (int trial = 0; trial < 50; ++trial) {
        const Index out = trial % 2 == 0 ? 64 : 32;
        const Index in = trial % 3 == 0 ? 64 : 32;
        const Index r = 2 + static_cast<Index>(rng.below(8));
        Matrix w = rng.normal_matrix(out, in);
        if (trial % 4 == 1) w += 3.0 * tiled_rank_one(std::min(out, in), 8, rng).topLeftCorner(out, in);
        const auto cands = feasible_blocks(out, in, r);
        const auto ours = select_block_config(w, cands);
        const auto ref = oracle::exhaustive_block_search(w, r);
        CHECK(ours == ref.config);
    }
}

TEST_CASE("local branch edge cases")
{
    Rng rng(23);
    const Vector u = rng.normal_vector(8);
    const Vector v = rng.normal_vector(16);
    const Matrix m = u * v.transpose();
    const BlockConfig whole{8, 16, local_budget(8, 16, 8, 16)};
    CHECK((local_branch(m, whole).assemble() - m).norm() < 1e-8);

    const auto z = local_branch(Matrix::Zero(16, 16), BlockConfig{8, 8, local_budget(16, 16, 8, 8)});
    CHECK(z.assemble().norm() == 0.0);
    for (const auto& b : z.blocks) CHECK(b.sigma == 0.0);

    CHECK_THROWS_AS(local_branch(Matrix::Zero(12, 16), BlockConfig{8, 8, 0}), Error);
}

TEST_CASE("decomposition limits")
{
    Rng rng(24);
    const Matrix w = rng.normal_matrix(32, 64);

    const auto full = hsvd_decompose(w, 32, 16, table());
    CHECK((full.reconstruct() - w).norm() / w.norm() < 1e-3);

    const auto zero = hsvd_decompose(Matrix::Zero(16, 32), 4, 4, table());
    CHECK(zero.reconstruct().norm() == 0.0);
    CHECK(zero.fp_branch().norm() == 0.0);

    // rank(W H) <= r: nothing is left for the residual.
    const Matrix low = rng.normal_matrix(32, 3) * rng.normal_matrix(3, 64);
    const auto exact = hsvd_decompose(low, 4, 4, table());
    CHECK((exact.reconstruct() - low).norm() / low.norm() < 1e-5);

    CHECK_THROWS_AS(hsvd_decompose(rng.normal_matrix(8, 12), 2, 4, table()), Error);
    CHECK_THROWS_AS(hsvd_decompose(w, 40, 4, table()), Error);
}

TEST_CASE("decomposition respects the matched budget and is deterministic")
{
    Rng rng(25);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix w = rng.normal_matrix(64, 64);
        const Index r = 1 + static_cast<Index>(rng.below(16));
        const auto a = hsvd_decompose(w, r, 4, table());
        const auto b = hsvd_decompose(w, r, 4, table());
        if (a.local) CHECK(a.local->config.budget <= global_budget(64, 64, r));
        CHECK(a.reconstruct() == b.reconstruct());
        CHECK(a.residual == b.residual);

        // error is the same in both domains
        const Matrix h = hadamard_matrix<double>(64);
        const double e_orig = (a.reconstruct() - w).norm();
        const double e_had = (a.hadamard_domain() - w * h).norm();
        CHECK(e_orig == doctest::Approx(e_had).epsilon(1e-9));
    }
}

TEST_CASE("planted structure: H-SVD beats the global backbone at matched budget")
{
    Rng rng(26);
    const Matrix h = hadamard_matrix<double>(64);
    int wins = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix w = planted_block_matrix(64, 64, 8, 8, 16, rng) * h.transpose();
        const auto hs = hsvd_decompose(w, HsvdOptions{8, 8}, 4, table());
        const auto g = hsvd_decompose(w, HsvdOptions{16, 0}, 4, table());
        if ((hs.reconstruct() - w).norm() < (g.reconstruct() - w).norm()) ++wins;
    }
    CHECK(wins >= 9);
}

TEST_CASE("forward pass")
{
    Rng rng(27);
    const Matrix w = rng.normal_matrix(16, 32);
    const auto qw = hsvd_decompose(w, 16, 16, table());
    CHECK(forward(qw, Vector::Zero(32), 4, table()).norm() == 0.0);

    const Vector x = rng.normal_vector(32);
    const Vector y = forward(qw, x, 16, table());
    CHECK((y - w * x).norm() / (w * x).norm() < 1e-3);

    CHECK_THROWS_AS(forward(qw, Vector::Zero(16), 4, table()), Error);
}

TEST_CASE("local branch lowers W4A6 output error")
{
    Rng rng(28);
    const Matrix h = hadamard_matrix<double>(64);
    const Matrix w = planted_block_matrix(64, 64, 8, 8, 16, rng) * h.transpose();
    const auto qw = hsvd_decompose(w, HsvdOptions{8, 8}, 4, table());
    REQUIRE(qw.local);

    // Same decomposition with the local branch removed and its energy left in
    // the (re-quantized) residual.
    QuantizedWeight bare = qw;
    bare.local.reset();
    const Matrix res = w * h - qw.global_matrix();
    bare.residual = quantize_weights_per_channel(res, 4, table());

    double with = 0.0, without = 0.0;
    for (int i = 0; i < 100; ++i) {
        const Vector x = rng.normal_vector(64);
        const Vector ref = w * x;
        with += (forward(qw, x, 6, table()) - ref).norm() / ref.norm();
        without += (forward(bare, x, 6, table()) - ref).norm() / ref.norm();
    }
    CHECK(with < without);
}
