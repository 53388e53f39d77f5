#include "qplan/vatmp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>

namespace qplan {

std::vector<int> TemporalSchedule::per_timestep() const
{
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(length()));
    for (const auto& s : segments) {
        out.insert(out.end(), static_cast<std::size_t>(s.end - s.start), s.bits);
    }
    return out;
}

int TemporalSchedule::bits_at(Index t) const
{
    for (const auto& s : segments) {
        if (t >= s.start && t < s.end) {
            return s.bits;
        }
    }
    throw Error(ErrorCode::InvalidInput, "timestep " + std::to_string(t) + " outside schedule");
}

double timestep_variance(const Matrix& x, const Matrix& h)
{
    if (h.rows() != h.cols() || x.cols() != h.rows()) {
        throw Error(ErrorCode::ShapeError, "timestep_variance: activation/Hadamard mismatch");
    }
    if (!is_power_of_two(x.cols())) {
        throw Error(ErrorCode::UnsupportedDimension, "channel count must be a power of two");
    }
    if (x.size() == 0) {
        throw Error(ErrorCode::ShapeError, "timestep_variance: no tokens");
    }
    return (x * h).squaredNorm() / static_cast<double>(x.size());
}

std::int64_t activation_budget(double b_target_avg, Index timesteps)
{
    return static_cast<std::int64_t>(std::floor(b_target_avg * static_cast<double>(timesteps)));
}

VariancePrefix::VariancePrefix(std::span<const double> variances) : prefix_(variances.size() + 1, 0.0)
{
    for (std::size_t t = 0; t < variances.size(); ++t) {
        if (!std::isfinite(variances[t]) || variances[t] < 0.0) {
            throw Error(ErrorCode::InvalidInput, "trace variances must be finite and nonnegative");
        }
        prefix_[t + 1] = prefix_[t] + variances[t];
    }
}

double VariancePrefix::range_sum(Index i, Index j) const
{
    if (i < 0 || j < i || j > length()) {
        throw Error(ErrorCode::InvalidInput, "segment [" + std::to_string(i) + ", " +
                                                 std::to_string(j) + ") outside trace");
    }
    return prefix_[static_cast<std::size_t>(j)] - prefix_[static_cast<std::size_t>(i)];
}

double segment_cost(const TemporalTrace& trace, Index i, Index j, int bits, const DistortionTable& table)
{
    if (!(i < j)) {
        throw Error(ErrorCode::InvalidInput, "segment must be nonempty");
    }
    return table.kappa(bits) * VariancePrefix(trace.variances).range_sum(i, j);
}

std::vector<Segment> segments_from_bits(std::span<const int> per_timestep)
{
    std::vector<Segment> out;
    for (std::size_t t = 0; t < per_timestep.size(); ++t) {
        const int b = per_timestep[t];
        if (!out.empty() && out.back().bits == b) {
            out.back().end += 1;
        } else {
            out.push_back({static_cast<Index>(t), static_cast<Index>(t) + 1, b});
        }
    }
    return out;
}

double schedule_distortion(const TemporalSchedule& schedule, const TemporalTrace& trace,
                           const DistortionTable& table)
{
    if (schedule.length() != trace.length()) {
        throw Error(ErrorCode::ShapeError, "schedule does not cover the trace");
    }
    const VariancePrefix prefix(trace.variances);
    double cost = 0.0;
    for (const auto& s : schedule.segments) {
        cost += table.kappa(s.bits) * prefix.range_sum(s.start, s.end);
    }
    return cost;
}

namespace {

struct Value {
    double cost = std::numeric_limits<double>::infinity();
    int segments = 0;
};

bool cost_equal(double a, double b)
{
    if (a == b) return true;
    return std::abs(a - b) <= kScheduleTieTolerance * std::max(std::abs(a), std::abs(b));
}

// Strict lexicographic order on (cost within tolerance, segment count).
bool better(const Value& a, const Value& b)
{
    if (!cost_equal(a.cost, b.cost)) {
        return a.cost < b.cost;
    }
    return a.segments < b.segments;
}

TemporalSchedule finish(const TemporalTrace& trace, std::vector<int> bits, std::int64_t budget,
                        const DistortionTable& table)
{
    TemporalSchedule s;
    s.layer_id = trace.layer_id;
    s.segments = segments_from_bits(bits);
    s.budget = budget;
    for (int b : bits) {
        s.total_bits += b;
    }
    s.cost = schedule_distortion(s, trace, table);
    return s;
}

}  // namespace

TemporalSchedule dp_schedule(const TemporalTrace& trace, double b_target_avg,
                             std::span<const int> bit_set, const DistortionTable& table, int max_segments)
{
    const Index T = trace.length();
    if (T == 0) {
        throw Error(ErrorCode::EmptyTrace, "trace '" + trace.layer_id + "' is empty");
    }
    if (bit_set.empty()) {
        throw Error(ErrorCode::InvalidInput, "bit set is empty");
    }
    if (max_segments < 0) {
        throw Error(ErrorCode::InvalidInput, "max_segments must be >= 0");
    }
    const std::set<int> unique(bit_set.begin(), bit_set.end());
    const std::vector<int> bits(unique.begin(), unique.end());
    std::vector<double> kappa;
    for (int b : bits) {
        kappa.push_back(table.kappa(b));
    }
    VariancePrefix{trace.variances};  // validates the trace

    const std::int64_t budget = activation_budget(b_target_avg, T);
    const int b_lo = bits.front();
    if (static_cast<std::int64_t>(b_lo) * T > budget) {
        throw Error(ErrorCode::InfeasibleBudget,
                    "layer '" + trace.layer_id + "': " + std::to_string(T) + " timesteps at " +
                        std::to_string(b_lo) + " bits exceed budget " + std::to_string(budget));
    }

    // State after t timesteps: excess bits e = used - b_lo * t, segments used s,
    // index p of the previous bit (nb = none yet). Stored value is cost-to-go.
    const auto S = static_cast<Index>(max_segments == kUnboundedSegments ? T : std::min<Index>(max_segments, T));
    const auto E = static_cast<Index>(budget - static_cast<std::int64_t>(b_lo) * T);
    const auto nb = static_cast<Index>(bits.size());
    const Index np = nb + 1;
    auto idx = [&](Index t, Index e, Index s, Index p) {
        return static_cast<std::size_t>(((t * (E + 1) + e) * (S + 1) + s) * np + p);
    };
    std::vector<Value> g(static_cast<std::size_t>((T + 1) * (E + 1) * (S + 1) * np));
    for (Index e = 0; e <= E; ++e)
        for (Index s = 0; s <= S; ++s)
            for (Index p = 0; p < np; ++p)
                g[idx(T, e, s, p)] = Value{0.0, 0};

    auto candidate = [&](Index t, Index e, Index s, Index p, Index k) -> std::optional<Value> {
        const Index e2 = e + (bits[static_cast<std::size_t>(k)] - b_lo);
        const Index s2 = (k == p) ? s : s + 1;
        if (e2 > E || s2 > S) {
            return std::nullopt;
        }
        const Value& next = g[idx(t + 1, e2, s2, k)];
        if (!std::isfinite(next.cost)) {
            return std::nullopt;
        }
        return Value{kappa[static_cast<std::size_t>(k)] * trace.variances[static_cast<std::size_t>(t)] + next.cost,
                     next.segments + (k == p ? 0 : 1)};
    };

    for (Index t = T - 1; t >= 0; --t) {
        for (Index e = 0; e <= E; ++e) {
            for (Index s = 0; s <= S; ++s) {
                for (Index p = 0; p < np; ++p) {
                    Value best;
                    for (Index k = 0; k < nb; ++k) {
                        auto c = candidate(t, e, s, p, k);
                        if (c && (!std::isfinite(best.cost) || better(*c, best))) {
                            best = *c;
                        }
                    }
                    g[idx(t, e, s, p)] = best;
                }
            }
        }
    }

    // Walk forward taking the smallest bit that still reaches the optimum.
    std::vector<int> chosen;
    chosen.reserve(static_cast<std::size_t>(T));
    Index e = 0;
    Index s = 0;
    Index p = nb;
    for (Index t = 0; t < T; ++t) {
        const Value target = g[idx(t, e, s, p)];
        bool moved = false;
        for (Index k = 0; k < nb && !moved; ++k) {
            auto c = candidate(t, e, s, p, k);
            if (c && cost_equal(c->cost, target.cost) && c->segments == target.segments) {
                chosen.push_back(bits[static_cast<std::size_t>(k)]);
                e += bits[static_cast<std::size_t>(k)] - b_lo;
                s = (k == p) ? s : s + 1;
                p = k;
                moved = true;
            }
        }
        if (!moved) {
            throw Error(ErrorCode::InfeasibleBudget, "no schedule satisfies the segment limit");
        }
    }
    return finish(trace, std::move(chosen), budget, table);
}

TemporalSchedule flat_schedule(const TemporalTrace& trace, int bits, const DistortionTable& table,
                               std::int64_t budget)
{
    if (trace.length() == 0) {
        throw Error(ErrorCode::EmptyTrace, "trace '" + trace.layer_id + "' is empty");
    }
    return finish(trace, std::vector<int>(static_cast<std::size_t>(trace.length()), bits), budget, table);
}

}  // namespace qplan
