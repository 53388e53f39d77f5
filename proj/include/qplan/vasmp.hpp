#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qplan/linalg.hpp"

namespace qplan {

/// Floor applied to mean variances before taking log2.
constexpr double kVarianceEps = 1e-12;
constexpr int kDefaultBitMin = 2;
constexpr int kDefaultBitMax = 8;

struct LayerStats {
    std::string layer_id;
    double mean_var = 0.0;       // average output-channel variance, Hadamard domain
    std::int64_t param_count = 1;
    bool active = true;
};

/// Population variance of every row of w_h (mean removed per row), averaged
/// over rows.
LayerStats layer_stats(const Matrix& w_h, std::string layer_id, bool active = true);

/// Per-layer bits aligned with the input stats; inactive layers hold nullopt.
using ContinuousBits = std::vector<std::optional<double>>;
using DiscreteBits = std::vector<std::optional<int>>;

/// Closed-form minimizer of sum N * var * 2^(-2b) under a parameter-weighted
/// average of b_target:
///   b = b_target + 0.5 * (log2 max(var, eps) - weighted mean of the same).
ContinuousBits continuous_bits(std::span<const LayerStats> stats, double b_target,
                               double eps = kVarianceEps);

struct DiscreteResult {
    DiscreteBits bits;
    std::int64_t budget = 0;  // floor(b_target * sum of weights)
    std::int64_t used = 0;    // sum of weight * bits
    bool over_budget = false;
};

/// Floors and clips the continuous solution, then hands out remaining bits one
/// at a time to the layer with the largest var * 4^-b that still fits.
DiscreteResult discretize_greedy(const ContinuousBits& continuous, std::span<const LayerStats> stats,
                                 double b_target, int b_min, int b_max);

/// sum over active layers of N * var * 2^(-2b).
double allocation_distortion(const DiscreteBits& bits, std::span<const LayerStats> stats);

/// Full allocation record for one model.
struct BitAllocation {
    std::vector<LayerStats> stats;
    ContinuousBits continuous;
    DiscreteBits discrete;
    double target_avg = 0.0;
    int b_min = kDefaultBitMin;
    int b_max = kDefaultBitMax;
    std::int64_t budget = 0;
    std::int64_t used = 0;
    bool over_budget = false;

    /// Parameter-weighted average bits over active layers.
    double realized_avg() const;
    double objective() const { return allocation_distortion(discrete, stats); }
};

BitAllocation allocate_bits(std::vector<LayerStats> stats, double b_target, int b_min = kDefaultBitMin,
                            int b_max = kDefaultBitMax);

/// Every active layer at the same integer bit-width (the no-mixed-precision baseline).
BitAllocation uniform_allocation(std::vector<LayerStats> stats, int bits);

}  // namespace qplan
