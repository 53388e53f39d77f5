#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qplan/hsvd.hpp"
#include "qplan/model.hpp"
#include "qplan/quantizer.hpp"
#include "qplan/serialize.hpp"
#include "qplan/vasmp.hpp"
#include "qplan/vatmp.hpp"

namespace qplan {

struct PlanConfig {
    double weight_bits = 4.0;  // target parameter-weighted average
    double act_bits = 6.0;     // target per-timestep average
    Index global_rank = 32;
    Index local_rank = 8;
    int bit_min = kDefaultBitMin;
    int bit_max = kDefaultBitMax;
    std::vector<int> bit_set{2, 3, 4, 5, 6, 7, 8};
    int max_segments = kDefaultMaxSegments;
    std::uint64_t seed = 0;
    bool enable_hsvd = true;
    bool enable_vasmp = true;
    bool enable_vatmp = true;
    /// Weight and activation bits of inactive (pinned) layers.
    int pinned_bits = 8;
    Index timesteps = 50;
    std::string trace_profile = "bump";
    double trace_scale = 1.0;
    int integration_points = kDefaultIntegrationPoints;
    Index sim_tokens = 32;

    friend bool operator==(const PlanConfig&, const PlanConfig&) = default;
};

/// Throws ValidationError naming the offending field ("config.act_bits: ...").
void validate(const PlanConfig& config);

/// Every field, defaults included.
Json config_to_json(const PlanConfig& config);
/// Missing fields take their defaults; unknown fields are rejected.
PlanConfig config_from_json(const Json& j);

/// Modeled distortion of one layer under a plan.
struct LayerPlan {
    std::string layer_id;
    bool active = true;
    int weight_bits = 0;
    LayerStats quantized_stats;  // statistics of the part that is actually quantized
    double weight_objective = 0.0;   // N * var_q * 2^(-2b)
    double weight_mse_model = 0.0;   // kappa(b) * mean row energy of the quantized part
    double act_objective = 0.0;      // sum_t kappa(b_t) * v_t
};

struct Plan {
    PlanConfig config;
    DistortionTable table;
    BitAllocation allocation;  // VaSMP result, or the flat baseline when disabled
    std::vector<QuantizedWeight> weights;  // aligned with the model layers
    std::vector<TemporalTrace> traces;
    std::vector<TemporalSchedule> schedules;
    std::vector<LayerPlan> layers;

    double total_weight_objective() const;
    double total_act_objective() const;
    const TemporalSchedule& schedule(const std::string& layer_id) const;
    const TemporalTrace& trace(const std::string& layer_id) const;
};

/// Bit-widths the plan needs kappa / A* for.
std::vector<int> required_bits(const PlanConfig& config);

/// stats -> VaSMP -> per-layer H-SVD at the allocated bits -> VaTMP. Traces
/// default to synthetic ones drawn from the config.
Plan make_plan(const ModelBundle& model, const PlanConfig& config,
               std::optional<std::vector<TemporalTrace>> traces = std::nullopt,
               const DistortionTable* table = nullptr);

/// config.json, kappa.json, stats.json, allocation.json, traces.json,
/// schedules.json, heatmap.csv, summary.json and weights/<layer>/.
void save_plan(const Plan& plan, const std::filesystem::path& dir);
Plan load_plan(const std::filesystem::path& dir);

/// Per-layer plan totals (schema qplan.summary/1).
Json plan_summary(const Plan& plan);

struct TimestepMeasurement {
    Index t = 0;
    int act_bits = 0;
    double variance = 0.0;
    double act_mse = 0.0;            // Hadamard-domain activation quantization error
    double act_mse_predicted = 0.0;  // v_t * kappa(b_t)
    double output_mse = 0.0;         // quantized layer output vs full precision
};

struct LayerMeasurement {
    std::string layer_id;
    int weight_bits = 0;
    double weight_objective = 0.0;   // predicted
    double weight_mse_model = 0.0;   // predicted per element
    double weight_mse = 0.0;         // measured per element, ||W_hat - W||^2 / N
    double weight_forward_error = 0.0;  // measured mean ||(W_hat - W) x||^2, x ~ N(0, I)
    double act_objective = 0.0;
    double act_measured = 0.0;       // sum_t act_mse
    std::vector<TimestepMeasurement> timesteps;
};

struct PlanReport {
    std::vector<LayerMeasurement> layers;
    double realized_weight_bits = 0.0;
    double realized_act_bits = 0.0;
};

/// Measures the plan on synthetic tokens: for each (layer, timestep) tokens are
/// drawn with the trace variance and pushed through the simulated quantized
/// forward pass. Weight-path error is probed separately with unit-variance tokens.
PlanReport simulate(const ModelBundle& model, const Plan& plan);

/// Same, on caller-supplied tokens (rows of `inputs`) reused at every timestep.
PlanReport simulate(const ModelBundle& model, const Plan& plan, const std::vector<Matrix>& inputs);

Json report_to_json(const PlanReport& report);

/// Rewrites heatmap.csv and summary.json from the saved plan (idempotent).
void write_report_files(const Plan& plan, const std::filesystem::path& dir);

}  // namespace qplan
