#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qplan/linalg.hpp"
#include "qplan/quantizer.hpp"

namespace qplan {

constexpr int kDefaultMaxSegments = 8;
/// Pass as max_segments to allow one segment per timestep.
constexpr int kUnboundedSegments = 0;

/// Mean Hadamard-domain activation energy of one layer over diffusion
/// timesteps, in sampler order.
struct TemporalTrace {
    std::string layer_id;
    std::vector<double> variances;

    Index length() const { return static_cast<Index>(variances.size()); }
    friend bool operator==(const TemporalTrace&, const TemporalTrace&) = default;
};

/// Timesteps [start, end) quantized at `bits`.
struct Segment {
    Index start = 0;
    Index end = 0;
    int bits = 0;

    friend bool operator==(const Segment&, const Segment&) = default;
};

struct TemporalSchedule {
    std::string layer_id;
    std::vector<Segment> segments;  // contiguous cover of [0, T), adjacent bits differ
    std::int64_t total_bits = 0;
    std::int64_t budget = 0;
    double cost = 0.0;

    Index length() const { return segments.empty() ? 0 : segments.back().end; }
    std::vector<int> per_timestep() const;
    int bits_at(Index t) const;

    friend bool operator==(const TemporalSchedule&, const TemporalSchedule&) = default;
};

/// Mean of squared entries of x * H (rows are tokens).
double timestep_variance(const Matrix& x, const Matrix& h);

/// floor(b_target_avg * T).
std::int64_t activation_budget(double b_target_avg, Index timesteps);

/// Prefix sums of a trace, for O(1) range variance sums.
class VariancePrefix {
public:
    explicit VariancePrefix(std::span<const double> variances);
    double range_sum(Index i, Index j) const;
    Index length() const { return static_cast<Index>(prefix_.size()) - 1; }

private:
    std::vector<double> prefix_;
};

/// kappa(b) times the variance summed over timesteps [i, j).
double segment_cost(const TemporalTrace& trace, Index i, Index j, int bits, const DistortionTable& table);

/// Merges runs of equal bits into canonical segments.
std::vector<Segment> segments_from_bits(std::span<const int> per_timestep);

double schedule_distortion(const TemporalSchedule& schedule, const TemporalTrace& trace,
                           const DistortionTable& table);

/// Minimum-distortion piecewise-constant schedule with sum of bits at most
/// floor(b_target_avg * T) and at most max_segments segments. Among optimal
/// schedules the one with fewer segments wins, then the lexicographically
/// smallest per-timestep bit sequence.
TemporalSchedule dp_schedule(const TemporalTrace& trace, double b_target_avg,
                             std::span<const int> bit_set, const DistortionTable& table,
                             int max_segments = kDefaultMaxSegments);

/// Every timestep at the same bit-width.
TemporalSchedule flat_schedule(const TemporalTrace& trace, int bits, const DistortionTable& table,
                               std::int64_t budget);

/// Relative tolerance under which two schedule costs count as equal.
constexpr double kScheduleTieTolerance = 1e-12;

}  // namespace qplan
