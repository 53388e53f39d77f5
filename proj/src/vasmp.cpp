#include "qplan/vasmp.hpp"

#include <cmath>
#include <limits>

namespace qplan {

namespace {

std::size_t active_count(std::span<const LayerStats> stats)
{
    std::size_t n = 0;
    for (const auto& s : stats) {
        n += s.active ? 1U : 0U;
    }
    return n;
}

void check_stats(std::span<const LayerStats> stats)
{
    for (const auto& s : stats) {
        if (s.param_count < 1 || !std::isfinite(s.mean_var) || s.mean_var < 0.0) {
            throw Error(ErrorCode::InvalidInput, "invalid statistics for layer '" + s.layer_id + "'");
        }
    }
    if (active_count(stats) == 0) {
        throw Error(ErrorCode::EmptyActiveSet, "no active layers");
    }
}

std::int64_t weighted_budget(std::span<const LayerStats> stats, double b_target)
{
    double total_w = 0.0;
    for (const auto& s : stats) {
        if (s.active) {
            total_w += static_cast<double>(s.param_count);
        }
    }
    return static_cast<std::int64_t>(std::floor(b_target * total_w));
}

}  // namespace

LayerStats layer_stats(const Matrix& w_h, std::string layer_id, bool active)
{
    if (w_h.rows() == 0 || w_h.cols() == 0) {
        throw Error(ErrorCode::ShapeError, "layer_stats: empty weight");
    }
    double acc = 0.0;
    for (Index o = 0; o < w_h.rows(); ++o) {
        const auto row = w_h.row(o);
        const double mean = row.mean();
        acc += (row.array() - mean).square().mean();
    }
    return {std::move(layer_id), acc / static_cast<double>(w_h.rows()),
            static_cast<std::int64_t>(w_h.size()), active};
}

ContinuousBits continuous_bits(std::span<const LayerStats> stats, double b_target, double eps)
{
    check_stats(stats);
    if (!(b_target > 0.0)) {
        throw Error(ErrorCode::InvalidInput, "target bits must be positive");
    }
    double weight_sum = 0.0;
    double log_sum = 0.0;
    for (const auto& s : stats) {
        if (!s.active) continue;
        const double w = static_cast<double>(s.param_count);
        weight_sum += w;
        log_sum += w * std::log2(std::max(s.mean_var, eps));
    }
    const double mean_log = log_sum / weight_sum;
    ContinuousBits out(stats.size());
    for (std::size_t i = 0; i < stats.size(); ++i) {
        if (stats[i].active) {
            out[i] = b_target + 0.5 * (std::log2(std::max(stats[i].mean_var, eps)) - mean_log);
        }
    }
    return out;
}

DiscreteResult discretize_greedy(const ContinuousBits& continuous, std::span<const LayerStats> stats,
                                 double b_target, int b_min, int b_max)
{
    check_stats(stats);
    if (b_min > b_max) {
        throw Error(ErrorCode::InvalidInput, "bit_min exceeds bit_max");
    }
    if (continuous.size() != stats.size()) {
        throw Error(ErrorCode::ShapeError, "continuous bits do not match layer list");
    }
    DiscreteResult r;
    r.bits.resize(stats.size());
    r.budget = weighted_budget(stats, b_target);
    for (std::size_t i = 0; i < stats.size(); ++i) {
        if (!stats[i].active) continue;
        if (!continuous[i]) {
            throw Error(ErrorCode::InvalidInput, "active layer '" + stats[i].layer_id + "' has no bits");
        }
        const int b = std::clamp(static_cast<int>(std::floor(*continuous[i])), b_min, b_max);
        r.bits[i] = b;
        r.used += stats[i].param_count * b;
    }

    for (;;) {
        const std::int64_t remaining = r.budget - r.used;
        std::optional<std::size_t> pick;
        double best_gain = -1.0;
        for (std::size_t i = 0; i < stats.size(); ++i) {
            if (!r.bits[i] || *r.bits[i] >= b_max || stats[i].param_count > remaining) {
                continue;
            }
            const double gain = stats[i].mean_var * std::pow(4.0, -*r.bits[i]);
            if (gain > best_gain) {
                best_gain = gain;
                pick = i;
            }
        }
        if (!pick) break;
        *r.bits[*pick] += 1;
        r.used += stats[*pick].param_count;
    }
    r.over_budget = r.used > r.budget;
    return r;
}

double allocation_distortion(const DiscreteBits& bits, std::span<const LayerStats> stats)
{
    if (bits.size() != stats.size()) {
        throw Error(ErrorCode::ShapeError, "bits do not match layer list");
    }
    double d = 0.0;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        if (!stats[i].active) continue;
        if (!bits[i]) {
            throw Error(ErrorCode::InvalidInput, "active layer '" + stats[i].layer_id + "' has no bits");
        }
        d += static_cast<double>(stats[i].param_count) * stats[i].mean_var * std::exp2(-2.0 * *bits[i]);
    }
    return d;
}

double BitAllocation::realized_avg() const
{
    double wb = 0.0;
    double w = 0.0;
    for (std::size_t i = 0; i < stats.size(); ++i) {
        if (stats[i].active && discrete[i]) {
            wb += static_cast<double>(stats[i].param_count) * *discrete[i];
            w += static_cast<double>(stats[i].param_count);
        }
    }
    return w > 0.0 ? wb / w : 0.0;
}

BitAllocation allocate_bits(std::vector<LayerStats> stats, double b_target, int b_min, int b_max)
{
    BitAllocation a;
    a.continuous = continuous_bits(stats, b_target);
    auto d = discretize_greedy(a.continuous, stats, b_target, b_min, b_max);
    a.discrete = std::move(d.bits);
    a.budget = d.budget;
    a.used = d.used;
    a.over_budget = d.over_budget;
    a.target_avg = b_target;
    a.b_min = b_min;
    a.b_max = b_max;
    a.stats = std::move(stats);
    return a;
}

BitAllocation uniform_allocation(std::vector<LayerStats> stats, int bits)
{
    check_stats(stats);
    BitAllocation a;
    a.target_avg = bits;
    a.b_min = bits;
    a.b_max = bits;
    a.continuous.resize(stats.size());
    a.discrete.resize(stats.size());
    a.budget = weighted_budget(stats, bits);
    for (std::size_t i = 0; i < stats.size(); ++i) {
        if (stats[i].active) {
            a.continuous[i] = static_cast<double>(bits);
            a.discrete[i] = bits;
            a.used += stats[i].param_count * bits;
        }
    }
    a.stats = std::move(stats);
    return a;
}

}  // namespace qplan
