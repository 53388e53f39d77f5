#include "qplan/plan.hpp"

#include <cmath>
#include <set>

#include "qplan/rng.hpp"
#include "qplan/tensor_io.hpp"

namespace qplan {

namespace {

[[noreturn]] void invalid(const std::string& field, const std::string& msg)
{
    throw Error(ErrorCode::ValidationError, "config." + field + ": " + msg);
}

bool bits_ok(int b)
{
    return b >= kMinBits && b <= kMaxBits;
}

int floor_bits(double b)
{
    return static_cast<int>(std::floor(b));
}

}  // namespace

void validate(const PlanConfig& c)
{
    if (!bits_ok(c.bit_min)) invalid("bit_min", "must be in [1, 16]");
    if (!bits_ok(c.bit_max)) invalid("bit_max", "must be in [1, 16]");
    if (c.bit_min > c.bit_max) invalid("bit_min", "must not exceed bit_max");
    if (!(c.weight_bits >= c.bit_min && c.weight_bits <= c.bit_max)) {
        invalid("weight_bits", "must lie in [bit_min, bit_max]");
    }
    if (!(c.act_bits >= 1.0 && c.act_bits <= kMaxBits)) invalid("act_bits", "must be in [1, 16]");
    if (c.bit_set.empty()) invalid("bit_set", "must not be empty");
    for (std::size_t i = 0; i < c.bit_set.size(); ++i) {
        if (!bits_ok(c.bit_set[i])) invalid("bit_set[" + std::to_string(i) + "]", "must be in [1, 16]");
    }
    if (c.max_segments < 0) invalid("max_segments", "must be >= 0 (0 = unbounded)");
    if (c.global_rank < 0) invalid("global_rank", "must be >= 0");
    if (c.local_rank < 0) invalid("local_rank", "must be >= 0");
    if (!bits_ok(c.pinned_bits)) invalid("pinned_bits", "must be in [1, 16]");
    if (c.timesteps < 1) invalid("timesteps", "must be >= 1");
    try {
        parse_trace_profile(c.trace_profile);
    } catch (const Error&) {
        invalid("trace_profile", "must be monotone, bump or constant");
    }
    if (!(c.trace_scale > 0.0)) invalid("trace_scale", "must be positive");
    if (c.integration_points < kMinIntegrationPoints) invalid("integration_points", "must be >= 1024");
    if (c.sim_tokens < 1) invalid("sim_tokens", "must be >= 1");
}

Json config_to_json(const PlanConfig& c)
{
    return {{"weight_bits", c.weight_bits},
            {"act_bits", c.act_bits},
            {"global_rank", c.global_rank},
            {"local_rank", c.local_rank},
            {"bit_min", c.bit_min},
            {"bit_max", c.bit_max},
            {"bit_set", c.bit_set},
            {"max_segments", c.max_segments},
            {"seed", c.seed},
            {"enable_hsvd", c.enable_hsvd},
            {"enable_vasmp", c.enable_vasmp},
            {"enable_vatmp", c.enable_vatmp},
            {"pinned_bits", c.pinned_bits},
            {"timesteps", c.timesteps},
            {"trace_profile", c.trace_profile},
            {"trace_scale", c.trace_scale},
            {"integration_points", c.integration_points},
            {"sim_tokens", c.sim_tokens}};
}

PlanConfig config_from_json(const Json& j)
{
    if (!j.is_object()) {
        throw Error(ErrorCode::ValidationError, "config: expected a JSON object");
    }
    PlanConfig c;
    const Json defaults = config_to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!defaults.contains(key)) invalid(key, "unknown field");
    }
    auto field = [&](const char* key, auto& slot) {
        if (!j.contains(key)) return;
        try {
            slot = j.at(key).get<std::decay_t<decltype(slot)>>();
        } catch (const nlohmann::json::exception&) {
            invalid(key, "wrong type");
        }
    };
    field("weight_bits", c.weight_bits);
    field("act_bits", c.act_bits);
    field("global_rank", c.global_rank);
    field("local_rank", c.local_rank);
    field("bit_min", c.bit_min);
    field("bit_max", c.bit_max);
    field("bit_set", c.bit_set);
    field("max_segments", c.max_segments);
    field("seed", c.seed);
    field("enable_hsvd", c.enable_hsvd);
    field("enable_vasmp", c.enable_vasmp);
    field("enable_vatmp", c.enable_vatmp);
    field("pinned_bits", c.pinned_bits);
    field("timesteps", c.timesteps);
    field("trace_profile", c.trace_profile);
    field("trace_scale", c.trace_scale);
    field("integration_points", c.integration_points);
    field("sim_tokens", c.sim_tokens);
    validate(c);
    return c;
}

std::vector<int> required_bits(const PlanConfig& c)
{
    std::set<int> s(c.bit_set.begin(), c.bit_set.end());
    for (int b = c.bit_min; b <= c.bit_max; ++b) s.insert(b);
    s.insert(c.pinned_bits);
    s.insert(std::clamp(floor_bits(c.weight_bits), kMinBits, kMaxBits));
    s.insert(std::clamp(floor_bits(c.act_bits), kMinBits, kMaxBits));
    return {s.begin(), s.end()};
}

double Plan::total_weight_objective() const
{
    double d = 0.0;
    for (const auto& l : layers) d += l.weight_objective;
    return d;
}

double Plan::total_act_objective() const
{
    double d = 0.0;
    for (const auto& l : layers) d += l.act_objective;
    return d;
}

const TemporalSchedule& Plan::schedule(const std::string& id) const
{
    for (const auto& s : schedules)
        if (s.layer_id == id) return s;
    throw Error(ErrorCode::InvalidInput, "no schedule for layer '" + id + "'");
}

const TemporalTrace& Plan::trace(const std::string& id) const
{
    for (const auto& t : traces)
        if (t.layer_id == id) return t;
    throw Error(ErrorCode::InvalidInput, "no trace for layer '" + id + "'");
}

Plan make_plan(const ModelBundle& model, const PlanConfig& config,
               std::optional<std::vector<TemporalTrace>> traces, const DistortionTable* table)
{
    validate(config);
    validate_bundle(model);
    Plan plan;
    plan.config = config;
    const auto needed = required_bits(config);
    if (table != nullptr) {
        for (int b : needed) {
            if (!table->contains(b)) {
                throw Error(ErrorCode::ValidationError, "distortion table lacks " + std::to_string(b) + " bits");
            }
        }
        plan.table = *table;
    } else {
        plan.table = build_distortion_table(needed, config.integration_points);
    }

    std::vector<LayerStats> stats;
    std::vector<Matrix> rotated;
    for (const auto& l : model.layers) {
        if (!is_power_of_two(l.weight.cols())) {
            throw Error(ErrorCode::UnsupportedDimension,
                        "layer '" + l.id + "': input dimension " + std::to_string(l.weight.cols()) +
                            " is not a power of two");
        }
        rotated.push_back(l.weight * hadamard_matrix(l.weight.cols()));
        stats.push_back(layer_stats(rotated.back(), l.id, l.active));
    }
    plan.allocation = config.enable_vasmp
                          ? allocate_bits(stats, config.weight_bits, config.bit_min, config.bit_max)
                          : uniform_allocation(stats, floor_bits(config.weight_bits));

    if (traces) {
        for (const auto& l : model.layers) {
            const bool found = std::any_of(traces->begin(), traces->end(),
                                           [&](const TemporalTrace& t) { return t.layer_id == l.id; });
            if (!found) {
                throw Error(ErrorCode::ValidationError, "traces: missing layer '" + l.id + "'");
            }
        }
        plan.traces = std::move(*traces);
    } else {
        SyntheticTraceSpec ts;
        ts.timesteps = config.timesteps;
        ts.profile = parse_trace_profile(config.trace_profile);
        ts.scale = config.trace_scale;
        ts.seed = derive_seed(config.seed, 1);
        ts.layer_ids.clear();
        for (const auto& l : model.layers) ts.layer_ids.push_back(l.id);
        plan.traces = generate_synthetic_traces(ts);
    }

    const int flat_act = floor_bits(config.act_bits);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& l = model.layers[i];
        const int wbits = l.active ? *plan.allocation.discrete[i] : config.pinned_bits;
        const Index g_rank = std::min({config.global_rank, l.weight.rows(), l.weight.cols()});
        const HsvdOptions opts{g_rank, config.enable_hsvd ? config.local_rank : 0};
        plan.weights.push_back(hsvd_decompose(l.weight, opts, wbits, plan.table));
        const auto& qw = plan.weights.back();

        const TemporalTrace& tr = plan.trace(l.id);
        TemporalSchedule sched;
        if (!l.active) {
            sched = flat_schedule(tr, config.pinned_bits, plan.table,
                                  static_cast<std::int64_t>(config.pinned_bits) * tr.length());
        } else if (config.enable_vatmp) {
            sched = dp_schedule(tr, config.act_bits, config.bit_set, plan.table, config.max_segments);
        } else {
            sched = flat_schedule(tr, flat_act, plan.table, activation_budget(config.act_bits, tr.length()));
        }
        sched.layer_id = l.id;

        const Matrix quantized_part = rotated[i] - qw.fp_branch();
        LayerPlan lp;
        lp.layer_id = l.id;
        lp.active = l.active;
        lp.weight_bits = wbits;
        lp.quantized_stats = layer_stats(quantized_part, l.id, l.active);
        lp.weight_objective = static_cast<double>(lp.quantized_stats.param_count) *
                              lp.quantized_stats.mean_var * std::exp2(-2.0 * wbits);
        lp.weight_mse_model = plan.table.kappa(wbits) * quantized_part.squaredNorm() /
                              static_cast<double>(quantized_part.size());
        lp.act_objective = sched.cost;
        plan.layers.push_back(std::move(lp));
        plan.schedules.push_back(std::move(sched));
    }
    return plan;
}

Json plan_summary(const Plan& plan)
{
    Json layers = Json::array();
    double w_obj = 0.0, a_obj = 0.0, w_mse = 0.0;
    double act_bits_sum = 0.0;
    int act_layers = 0;
    for (const auto& l : plan.layers) {
        const auto& s = plan.schedule(l.layer_id);
        const double avg = static_cast<double>(s.total_bits) / static_cast<double>(s.length());
        layers.push_back({{"layer", l.layer_id},
                          {"active", l.active},
                          {"weight_bits", l.weight_bits},
                          {"quantized_mean_var", l.quantized_stats.mean_var},
                          {"params", l.quantized_stats.param_count},
                          {"weight_objective", l.weight_objective},
                          {"weight_mse_model", l.weight_mse_model},
                          {"act_objective", l.act_objective},
                          {"act_bits_avg", avg}});
        w_obj += l.weight_objective;
        a_obj += l.act_objective;
        w_mse += l.weight_mse_model;
        if (l.active) {
            act_bits_sum += avg;
            ++act_layers;
        }
    }
    return {{"schema", "qplan.summary/1"},
            {"layers", std::move(layers)},
            {"totals", {{"weight_objective", w_obj}, {"act_objective", a_obj}, {"weight_mse_model", w_mse}}},
            {"realized_weight_bits", plan.allocation.realized_avg()},
            {"realized_act_bits", act_layers > 0 ? act_bits_sum / act_layers : 0.0},
            {"allocation_objective", plan.allocation.objective()}};
}

void write_report_files(const Plan& plan, const std::filesystem::path& dir)
{
    write_text(dir / "heatmap.csv", heatmap_csv(plan.schedules));
    write_text(dir / "summary.json", dump_json(plan_summary(plan)));
}

void save_plan(const Plan& plan, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir / "weights");
    write_text(dir / "config.json", dump_json(config_to_json(plan.config)));
    write_text(dir / "kappa.json", dump_json(table_to_json(plan.table)));
    write_text(dir / "stats.json", dump_json(stats_to_json(plan.allocation.stats)));
    write_text(dir / "allocation.json", dump_json(allocation_to_json(plan.allocation)));
    write_text(dir / "traces.json", dump_json(traces_to_json(plan.traces)));
    write_text(dir / "schedules.json", dump_json(schedules_to_json(plan.schedules)));
    for (std::size_t i = 0; i < plan.weights.size(); ++i) {
        validate_layer_id(plan.layers[i].layer_id);
        save_quantized_weight(plan.weights[i], dir / "weights" / plan.layers[i].layer_id);
    }
    write_report_files(plan, dir);
}

Plan load_plan(const std::filesystem::path& dir)
{
    Plan plan;
    plan.config = config_from_json(parse_json_file(dir / "config.json"));
    plan.table = table_from_json(parse_json_file(dir / "kappa.json"));
    plan.allocation = allocation_from_json(parse_json_file(dir / "allocation.json"));
    plan.traces = traces_from_json(parse_json_file(dir / "traces.json"));
    plan.schedules = schedules_from_json(parse_json_file(dir / "schedules.json"));
    const Json summary = parse_json_file(dir / "summary.json");
    try {
        for (const auto& e : summary.at("layers")) {
            LayerPlan lp;
            lp.layer_id = e.at("layer").get<std::string>();
            validate_layer_id(lp.layer_id);
            lp.active = e.at("active").get<bool>();
            lp.weight_bits = e.at("weight_bits").get<int>();
            lp.quantized_stats = {lp.layer_id, e.at("quantized_mean_var").get<double>(),
                                  e.at("params").get<std::int64_t>(), lp.active};
            lp.weight_objective = e.at("weight_objective").get<double>();
            lp.weight_mse_model = e.at("weight_mse_model").get<double>();
            lp.act_objective = e.at("act_objective").get<double>();
            plan.weights.push_back(load_quantized_weight(dir / "weights" / lp.layer_id));
            plan.layers.push_back(std::move(lp));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::FormatError, std::string("summary.json: ") + e.what());
    }
    return plan;
}

namespace {

LayerMeasurement measure_layer(const ModelLayer& layer, const QuantizedWeight& qw, const LayerPlan& lp,
                               const TemporalTrace& trace, const TemporalSchedule& sched,
                               const DistortionTable& table, Index tokens, Rng& rng,
                               const Matrix* fixed_inputs)
{
    LayerMeasurement m;
    m.layer_id = layer.id;
    m.weight_bits = lp.weight_bits;
    m.weight_objective = lp.weight_objective;
    m.weight_mse_model = lp.weight_mse_model;
    m.act_objective = lp.act_objective;

    const Matrix& w = layer.weight;
    const Matrix dw = qw.reconstruct() - w;
    m.weight_mse = dw.squaredNorm() / static_cast<double>(dw.size());
    const Matrix probe = rng.normal_matrix(tokens, w.cols());
    m.weight_forward_error = (probe * dw.transpose()).squaredNorm() / static_cast<double>(tokens);

    const Matrix h = hadamard_matrix(w.cols());
    for (Index t = 0; t < trace.length(); ++t) {
        TimestepMeasurement tm;
        tm.t = t;
        tm.act_bits = sched.bits_at(t);
        Matrix x;
        if (fixed_inputs != nullptr) {
            x = *fixed_inputs;
            tm.variance = timestep_variance(x, h);
        } else {
            tm.variance = trace.variances[static_cast<std::size_t>(t)];
            x = rng.normal_matrix(tokens, w.cols(), std::sqrt(tm.variance));
        }
        const Matrix z = x * h;
        const Matrix z_q = dequantize(quantize_activations(x, h, tm.act_bits, table));
        tm.act_mse = (z_q - z).squaredNorm() / static_cast<double>(z.size());
        tm.act_mse_predicted = tm.variance * table.kappa(tm.act_bits);
        const Matrix y_fp = x * w.transpose();
        const Matrix y_q = forward_batch(qw, x, tm.act_bits, table);
        tm.output_mse = (y_q - y_fp).squaredNorm() / static_cast<double>(y_fp.size());
        m.act_measured += tm.act_mse;
        m.timesteps.push_back(tm);
    }
    return m;
}

PlanReport simulate_impl(const ModelBundle& model, const Plan& plan, const std::vector<Matrix>* inputs)
{
    if (plan.weights.size() != model.layers.size()) {
        throw Error(ErrorCode::ShapeError, "plan and model have different layer counts");
    }
    if (inputs != nullptr && inputs->size() != model.layers.size()) {
        throw Error(ErrorCode::ShapeError, "one input matrix per layer required");
    }
    Rng rng(derive_seed(plan.config.seed, 2));
    PlanReport report;
    double act_sum = 0.0;
    int act_layers = 0;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const auto& layer = model.layers[i];
        const auto& qw = plan.weights[i];
        if (qw.out != layer.weight.rows() || qw.in != layer.weight.cols()) {
            throw Error(ErrorCode::ShapeError, "layer '" + layer.id + "' does not match its decomposition");
        }
        const Matrix* fixed = nullptr;
        if (inputs != nullptr) {
            fixed = &(*inputs)[i];
            if (fixed->cols() != layer.weight.cols()) {
                throw Error(ErrorCode::ShapeError, "inputs for layer '" + layer.id + "' have wrong width");
            }
        }
        const auto& sched = plan.schedule(layer.id);
        report.layers.push_back(measure_layer(layer, qw, plan.layers[i], plan.trace(layer.id), sched,
                                              plan.table, plan.config.sim_tokens, rng, fixed));
        if (layer.active) {
            act_sum += static_cast<double>(sched.total_bits) / static_cast<double>(sched.length());
            ++act_layers;
        }
    }
    report.realized_weight_bits = plan.allocation.realized_avg();
    report.realized_act_bits = act_layers > 0 ? act_sum / act_layers : 0.0;
    return report;
}

}  // namespace

PlanReport simulate(const ModelBundle& model, const Plan& plan)
{
    return simulate_impl(model, plan, nullptr);
}

PlanReport simulate(const ModelBundle& model, const Plan& plan, const std::vector<Matrix>& inputs)
{
    return simulate_impl(model, plan, &inputs);
}

Json report_to_json(const PlanReport& report)
{
    Json layers = Json::array();
    double tot_w_pred = 0.0, tot_w_meas = 0.0, tot_a_pred = 0.0, tot_a_meas = 0.0;
    for (const auto& l : report.layers) {
        Json ts = Json::array();
        for (const auto& t : l.timesteps) {
            ts.push_back({{"t", t.t},
                          {"act_bits", t.act_bits},
                          {"variance", t.variance},
                          {"act_mse", t.act_mse},
                          {"act_mse_predicted", t.act_mse_predicted},
                          {"output_mse", t.output_mse}});
        }
        layers.push_back({{"layer", l.layer_id},
                          {"weight_bits", l.weight_bits},
                          {"weight_objective", l.weight_objective},
                          {"weight_mse_model", l.weight_mse_model},
                          {"weight_mse", l.weight_mse},
                          {"weight_forward_error", l.weight_forward_error},
                          {"act_objective", l.act_objective},
                          {"act_measured", l.act_measured},
                          {"timesteps", std::move(ts)}});
        tot_w_pred += l.weight_mse_model;
        tot_w_meas += l.weight_mse;
        tot_a_pred += l.act_objective;
        tot_a_meas += l.act_measured;
    }
    return {{"schema", "qplan.report/1"},
            {"layers", std::move(layers)},
            {"totals",
             {{"weight_mse_model", tot_w_pred},
              {"weight_mse", tot_w_meas},
              {"act_objective", tot_a_pred},
              {"act_measured", tot_a_meas}}},
            {"realized_weight_bits", report.realized_weight_bits},
            {"realized_act_bits", report.realized_act_bits}};
}

}  // namespace qplan
