#include "qplan/hsvd.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

namespace qplan {

std::int64_t global_budget(Index out, Index in, Index r)
{
    if (out <= 0 || in <= 0 || r < 0) {
        throw Error(ErrorCode::InvalidInput, "global_budget: dimensions must be positive");
    }
    return static_cast<std::int64_t>(r) * static_cast<std::int64_t>(out + in);
}

std::int64_t local_budget(Index out, Index in, Index s_o, Index s_i)
{
    check_block_size(out, in, s_o, s_i);
    return static_cast<std::int64_t>(out / s_o) * static_cast<std::int64_t>(in / s_i) *
           static_cast<std::int64_t>(s_o + s_i + 1);
}

std::vector<BlockConfig> feasible_blocks(Index out, Index in, Index r)
{
    if (r < 1) {
        throw Error(ErrorCode::InvalidInput, "feasible_blocks: rank must be >= 1");
    }
    const std::int64_t cap = global_budget(out, in, r);
    std::vector<BlockConfig> out_list;
    for (Index s_o : divisors(out)) {
        for (Index s_i : divisors(in)) {
            const std::int64_t b = local_budget(out, in, s_o, s_i);
            if (b <= cap) {
                out_list.push_back({s_o, s_i, b});
            }
        }
    }
    if (out_list.empty()) {
        throw Error(ErrorCode::NoFeasibleConfig,
                    "no tiling of " + std::to_string(out) + "x" + std::to_string(in) +
                        " fits budget " + std::to_string(cap));
    }
    std::sort(out_list.begin(), out_list.end(), [](const BlockConfig& a, const BlockConfig& b) {
        if (a.budget != b.budget) return a.budget > b.budget;
        const auto da = std::abs(a.s_o - a.s_i);
        const auto db = std::abs(b.s_o - b.s_i);
        if (da != db) return da < db;
        return a.s_o < b.s_o;
    });
    return out_list;
}

Matrix LocalBranch::assemble() const
{
    Matrix m = Matrix::Zero(rows, cols);
    const Index gc = grid_cols();
    for (std::size_t k = 0; k < blocks.size(); ++k) {
        const Index p = static_cast<Index>(k) / gc;
        const Index q = static_cast<Index>(k) % gc;
        const auto& blk = blocks[k];
        m.block(p * config.s_o, q * config.s_i, config.s_o, config.s_i) =
            blk.sigma * blk.u * blk.v.transpose();
    }
    return m;
}

LocalBranch local_branch(const Matrix& w_res, const BlockConfig& cfg)
{
    check_block_size(w_res.rows(), w_res.cols(), cfg.s_o, cfg.s_i);
    const auto grid = partition_blocks(w_res, cfg.s_o, cfg.s_i);
    LocalBranch branch;
    branch.config = cfg;
    branch.config.budget = local_budget(w_res.rows(), w_res.cols(), cfg.s_o, cfg.s_i);
    branch.rows = w_res.rows();
    branch.cols = w_res.cols();
    branch.blocks.reserve(grid.blocks.size());
    for (const auto& blk : grid.blocks) {
        // Top singular triplet; svd() already fixes the sign of u.
        const auto f = truncated_svd(blk, 1);
        branch.blocks.push_back({f.left.col(0), f.right.row(0).transpose(), f.singular_values(0)});
    }
    return branch;
}

BlockConfig select_block_config(const Matrix& w_res, std::span<const BlockConfig> candidates)
{
    if (candidates.empty()) {
        throw Error(ErrorCode::NoFeasibleConfig, "select_block_config: no candidates");
    }
    const double tol = kBlockTieTolerance * std::max(w_res.norm(), 1e-300);
    std::optional<BlockConfig> best;
    double best_err = 0.0;
    for (const auto& cand : candidates) {
        const double err = (w_res - local_branch(w_res, cand).assemble()).norm();
        bool take = !best.has_value();
        if (!take) {
            if (err < best_err - tol) {
                take = true;
            } else if (err <= best_err + tol) {
                const auto dc = std::abs(cand.s_o - cand.s_i);
                const auto db = std::abs(best->s_o - best->s_i);
                if (cand.budget != best->budget) {
                    take = cand.budget < best->budget;
                } else if (dc != db) {
                    take = dc < db;
                } else {
                    take = cand.s_o < best->s_o;
                }
            }
        }
        if (take) {
            best = cand;
            best_err = err;
        }
    }
    return *best;
}

Matrix QuantizedWeight::global_matrix() const
{
    if (global.rank() == 0) {
        return Matrix::Zero(out, in);
    }
    return global.reconstruct();
}

Matrix QuantizedWeight::local_matrix() const
{
    return local ? local->assemble() : Matrix::Zero(out, in);
}

Matrix QuantizedWeight::fp_branch() const
{
    return global_matrix() + local_matrix();
}

Matrix QuantizedWeight::hadamard_domain() const
{
    return fp_branch() + dequantize(residual);
}

Matrix QuantizedWeight::reconstruct() const
{
    return hadamard_domain() * hadamard_matrix(hadamard_size).transpose();
}

QuantizedWeight hsvd_decompose(const Matrix& w, const HsvdOptions& opts, int weight_bits,
                               const DistortionTable& table)
{
    if (!w.allFinite()) {
        throw Error(ErrorCode::InvalidInput, "hsvd_decompose: weight has non-finite entries");
    }
    if (!is_power_of_two(w.cols())) {
        throw Error(ErrorCode::UnsupportedDimension,
                    "input dimension " + std::to_string(w.cols()) + " is not a power of two");
    }
    if (opts.local_rank < 0) {
        throw Error(ErrorCode::InvalidInput, "local rank must be >= 0");
    }
    QuantizedWeight qw;
    qw.out = w.rows();
    qw.in = w.cols();
    qw.hadamard_size = w.cols();

    const Matrix w_h = w * hadamard_matrix(qw.hadamard_size);
    qw.global = truncated_svd(w_h, opts.global_rank);
    const Matrix w_res = w_h - qw.global_matrix();

    Matrix to_quantize = w_res;
    if (opts.local_rank > 0) {
        try {
            const auto candidates = feasible_blocks(qw.out, qw.in, opts.local_rank);
            const auto cfg = select_block_config(w_res, candidates);
            qw.local = local_branch(w_res, cfg);
            to_quantize -= qw.local->assemble();
        } catch (const Error& e) {
            if (e.code() != ErrorCode::NoFeasibleConfig) {
                throw;
            }
            qw.local_fallback = true;
        }
    }
    qw.residual = quantize_weights_per_channel(to_quantize, weight_bits, table);
    return qw;
}

Matrix forward_batch(const QuantizedWeight& qw, const Matrix& x, std::optional<int> act_bits,
                     const DistortionTable& table)
{
    if (x.cols() != qw.in) {
        throw Error(ErrorCode::ShapeError, "input has " + std::to_string(x.cols()) +
                                               " features, layer expects " + std::to_string(qw.in));
    }
    const Matrix h = hadamard_matrix(qw.hadamard_size);
    const Matrix z = x * h;  // rows are H^T x
    const Matrix z_q = act_bits ? dequantize(quantize_activations(x, h, *act_bits, table)) : z;
    return z_q * dequantize(qw.residual).transpose() + z * qw.fp_branch().transpose();
}

Vector forward(const QuantizedWeight& qw, const Vector& x, int act_bits, const DistortionTable& table)
{
    return forward_batch(qw, x.transpose(), act_bits, table).row(0).transpose();
}

}  // namespace qplan
