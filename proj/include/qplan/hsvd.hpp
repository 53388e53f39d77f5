#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qplan/linalg.hpp"
#include "qplan/quantizer.hpp"

namespace qplan {

/// Tile shape of the local branch and the parameter count it costs.
struct BlockConfig {
    Index s_o = 0;
    Index s_i = 0;
    std::int64_t budget = 0;

    friend bool operator==(const BlockConfig&, const BlockConfig&) = default;
};

/// r * (out + in): parameters of a rank-r factorization A * B.
std::int64_t global_budget(Index out, Index in, Index r);

/// (out / s_o) * (in / s_i) * (s_o + s_i + 1): one rank-1 triplet per tile.
std::int64_t local_budget(Index out, Index in, Index s_o, Index s_i);

/// Every tiling whose local budget does not exceed global_budget(out, in, r),
/// sorted by budget descending (then by |s_o - s_i|, then s_o). Throws
/// NoFeasibleConfig when nothing fits.
std::vector<BlockConfig> feasible_blocks(Index out, Index in, Index r);

struct RankOneBlock {
    Vector u;  // s_o, unit norm (or zero-energy canonical vector when sigma == 0)
    Vector v;  // s_i
    double sigma = 0.0;
};

/// Block-wise rank-1 approximation of a residual, tiles stored row-major.
struct LocalBranch {
    BlockConfig config;
    Index rows = 0;
    Index cols = 0;
    std::vector<RankOneBlock> blocks;

    Index grid_rows() const { return config.s_o == 0 ? 0 : rows / config.s_o; }
    Index grid_cols() const { return config.s_i == 0 ? 0 : cols / config.s_i; }
    Matrix assemble() const;
};

LocalBranch local_branch(const Matrix& w_res, const BlockConfig& cfg);

/// Candidate with the smallest local-branch Frobenius error. Errors within a
/// relative 1e-9 of each other tie; ties go to the smaller budget, then the
/// squarer tile, then the smaller s_o.
BlockConfig select_block_config(const Matrix& w_res, std::span<const BlockConfig> candidates);

/// Relative tolerance under which two candidate errors are treated as equal.
constexpr double kBlockTieTolerance = 1e-9;

struct HsvdOptions {
    Index global_rank = 8;
    /// Rank whose global budget the local branch must fit in; 0 disables it.
    Index local_rank = 8;
};

/// One layer after decomposition. Everything except `residual` stays in full
/// precision; all branches live in the Hadamard domain.
struct QuantizedWeight {
    Index out = 0;
    Index in = 0;
    Index hadamard_size = 0;
    SvdFactors<double> global;
    std::optional<LocalBranch> local;
    /// Set when the local branch was requested but no tiling fit the budget.
    bool local_fallback = false;
    QuantizedTensor residual;

    Matrix global_matrix() const;
    Matrix local_matrix() const;
    /// SVD-G + SVD-L, the full-precision part.
    Matrix fp_branch() const;
    /// Reconstructed weight in the Hadamard domain.
    Matrix hadamard_domain() const;
    /// (SVD-G + SVD-L + deq(residual)) * H^T.
    Matrix reconstruct() const;
};

QuantizedWeight hsvd_decompose(const Matrix& w, const HsvdOptions& opts, int weight_bits,
                               const DistortionTable& table);

inline QuantizedWeight hsvd_decompose(const Matrix& w, Index r, int weight_bits,
                                      const DistortionTable& table)
{
    return hsvd_decompose(w, HsvdOptions{r, r}, weight_bits, table);
}

/// Simulated quantized forward pass for a batch of tokens (rows of x). The
/// residual path sees Q_G(x); the full-precision branch sees H^T x unquantized.
/// With no act_bits the activations are kept in full precision.
Matrix forward_batch(const QuantizedWeight& qw, const Matrix& x, std::optional<int> act_bits,
                     const DistortionTable& table);

Vector forward(const QuantizedWeight& qw, const Vector& x, int act_bits, const DistortionTable& table);

}  // namespace qplan
