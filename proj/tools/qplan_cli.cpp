// qplan: command-line front end for planning, simulation and the reference oracles.
//
// Exit codes: 0 success, 1 validation error, 2 infeasible budget, 3 I/O or format error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "qplan/plan.hpp"
#include "qplan/tensor_io.hpp"

using namespace qplan;
namespace fs = std::filesystem;

namespace {

int exit_code(ErrorCode c)
{
    switch (c) {
    case ErrorCode::InfeasibleBudget: return 2;
    case ErrorCode::FormatError:
    case ErrorCode::CorruptFile:
    case ErrorCode::IoError: return 3;
    default: return 1;
    }
}

void emit(const Json& j, const std::string& out)
{
    if (out.empty()) {
        std::cout << dump_json(j);
    } else {
        if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
        write_text(out, dump_json(j));
    }
}

// Options shared by every planning subcommand. Values given on the command
// line override the --config file, which overrides the defaults.
struct PlanFlags {
    std::string config_path;
    std::optional<double> weight_bits, act_bits;
    std::optional<Index> rank, local_rank, timesteps;
    std::optional<int> bit_min, bit_max, max_segments, pinned_bits;
    std::optional<std::vector<int>> bit_set;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> profile;
    bool no_hsvd = false, no_vasmp = false, no_vatmp = false;

    void attach(CLI::App* app)
    {
        app->add_option("--config", config_path, "JSON config; explicit flags override it");
        app->add_option("--weight-bits", weight_bits, "target average weight bits");
        app->add_option("--act-bits", act_bits, "target average activation bits");
        app->add_option("--rank", rank, "SVD-G rank");
        app->add_option("--local-rank", local_rank, "rank whose budget bounds SVD-L (0 disables it)");
        app->add_option("--bit-min", bit_min, "smallest weight bit-width");
        app->add_option("--bit-max", bit_max, "largest weight bit-width");
        app->add_option("--bit-set", bit_set, "activation bit-widths, comma separated")->delimiter(',');
        app->add_option("--max-segments", max_segments, "segment limit per schedule (0 = unbounded)");
        app->add_option("--pinned-bits", pinned_bits, "bits of inactive layers");
        app->add_option("--timesteps", timesteps, "length of synthetic traces");
        app->add_option("--trace-profile", profile, "monotone | bump | constant");
        app->add_option("--seed", seed, "seed for every random stream");
        app->add_flag("--no-hsvd", no_hsvd, "global SVD only");
        app->add_flag("--no-vasmp", no_vasmp, "uniform weight bits");
        app->add_flag("--no-vatmp", no_vatmp, "flat activation bits");
    }

    PlanConfig resolve() const
    {
        PlanConfig c = config_path.empty() ? PlanConfig{} : config_from_json(parse_json_file(config_path));
        if (weight_bits) c.weight_bits = *weight_bits;
        if (act_bits) c.act_bits = *act_bits;
        if (rank) c.global_rank = *rank;
        if (local_rank) c.local_rank = *local_rank;
        if (bit_min) c.bit_min = *bit_min;
        if (bit_max) c.bit_max = *bit_max;
        if (bit_set) c.bit_set = *bit_set;
        if (max_segments) c.max_segments = *max_segments;
        if (pinned_bits) c.pinned_bits = *pinned_bits;
        if (timesteps) c.timesteps = *timesteps;
        if (profile) c.trace_profile = *profile;
        if (seed) c.seed = *seed;
        if (no_hsvd) c.enable_hsvd = false;
        if (no_vasmp) c.enable_vasmp = false;
        if (no_vatmp) c.enable_vatmp = false;
        validate(c);
        return c;
    }
};

std::vector<LayerStats> model_stats(const ModelBundle& m)
{
    std::vector<LayerStats> s;
    for (const auto& l : m.layers) {
        if (!is_power_of_two(l.weight.cols())) {
            throw Error(ErrorCode::UnsupportedDimension, "layer '" + l.id + "' input is not a power of two");
        }
        s.push_back(layer_stats(l.weight * hadamard_matrix(l.weight.cols()), l.id, l.active));
    }
    return s;
}

Json oracle_json(const oracle::OracleResult& r)
{
    return {{"method", oracle::to_string(r.method)}, {"value", r.value}, {"samples", r.samples}};
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"qplan: variance-aware mixed-precision quantization planner"};
    app.require_subcommand(1);
    std::string out;

    // kappa-table
    auto* kappa = app.add_subcommand("kappa-table", "distortion table kappa(b), A*(b)");
    std::vector<int> kappa_bits{1, 2, 3, 4, 5, 6, 7, 8};
    int points = kDefaultIntegrationPoints;
    kappa->add_option("--bit-set", kappa_bits, "bit-widths")->delimiter(',');
    kappa->add_option("--points", points, "integration subintervals over [-8, 8]");
    kappa->add_option("--out", out, "output file (default stdout)");

    // stats
    auto* stats = app.add_subcommand("stats", "per-layer Hadamard-domain statistics");
    std::string model_dir;
    stats->add_option("--model", model_dir, "model bundle directory")->required();
    stats->add_option("--out", out, "output file (default stdout)");

    // plan-weights
    auto* pw = app.add_subcommand("plan-weights", "VaSMP weight bit allocation");
    double pw_bits = 4.0;
    int pw_min = kDefaultBitMin, pw_max = kDefaultBitMax;
    pw->add_option("--model", model_dir, "model bundle directory")->required();
    pw->add_option("--weight-bits", pw_bits, "target average weight bits");
    pw->add_option("--bit-min", pw_min, "smallest bit-width");
    pw->add_option("--bit-max", pw_max, "largest bit-width");
    pw->add_option("--out", out, "output file (default stdout)");

    // decompose
    auto* dec = app.add_subcommand("decompose", "H-SVD of one layer");
    std::string layer_id;
    Index dec_rank = 32, dec_local = 8;
    int dec_bits = 4;
    dec->add_option("--model", model_dir, "model bundle directory")->required();
    dec->add_option("--layer", layer_id, "layer id")->required();
    dec->add_option("--rank", dec_rank, "SVD-G rank");
    dec->add_option("--local-rank", dec_local, "SVD-L budget rank (0 disables)");
    dec->add_option("--weight-bits", dec_bits, "residual bit-width");
    dec->add_option("--out", out, "output directory")->required();

    // plan-activations
    auto* pa = app.add_subcommand("plan-activations", "VaTMP schedules for a set of traces");
    std::string traces_path;
    double pa_bits = 6.0;
    std::vector<int> pa_set{2, 3, 4, 5, 6, 7, 8};
    int pa_segments = kDefaultMaxSegments;
    pa->add_option("--traces", traces_path, "traces JSON")->required();
    pa->add_option("--act-bits", pa_bits, "target average activation bits");
    pa->add_option("--bit-set", pa_set, "allowed bit-widths")->delimiter(',');
    pa->add_option("--max-segments", pa_segments, "segment limit (0 = unbounded)");
    pa->add_option("--out", out, "output file (default stdout)");

    // plan
    auto* plan_cmd = app.add_subcommand("plan", "full pipeline: stats, VaSMP, H-SVD, VaTMP");
    PlanFlags flags;
    flags.attach(plan_cmd);
    plan_cmd->add_option("--model", model_dir, "model bundle directory")->required();
    plan_cmd->add_option("--traces", traces_path, "traces JSON (default: synthetic)");
    plan_cmd->add_option("--out", out, "plan directory")->required();

    // simulate
    auto* sim = app.add_subcommand("simulate", "measure a saved plan on synthetic tokens");
    std::string plan_dir;
    sim->add_option("--model", model_dir, "model bundle directory")->required();
    sim->add_option("--plan", plan_dir, "plan directory")->required();
    sim->add_option("--out", out, "report file (default stdout)");

    // report
    auto* rep = app.add_subcommand("report", "rewrite heatmap.csv and summary.json of a plan");
    rep->add_option("--plan", plan_dir, "plan directory")->required();

    // gen-model
    auto* gm = app.add_subcommand("gen-model", "synthetic model bundle");
    SyntheticModelSpec mspec;
    std::vector<std::string> dims_text;
    gm->add_option("--layers", mspec.layers, "layer count");
    gm->add_option("--dims", dims_text, "OUTxIN shapes cycled over layers")->delimiter(',');
    gm->add_option("--spread", mspec.variance_spread, "max/min mean variance");
    gm->add_flag("--block-structured", mspec.block_structured, "plant low-rank plus rank-1 tiles");
    gm->add_option("--inactive", mspec.inactive, "indices of pinned layers")->delimiter(',');
    gm->add_option("--seed", mspec.seed, "seed");
    gm->add_option("--out", out, "bundle directory")->required();

    // gen-traces
    auto* gt = app.add_subcommand("gen-traces", "synthetic per-layer variance traces");
    SyntheticTraceSpec tspec;
    std::string profile = "bump";
    gt->add_option("--model", model_dir, "take layer ids from this bundle");
    gt->add_option("--layer-ids", tspec.layer_ids, "layer ids")->delimiter(',');
    gt->add_option("--timesteps", tspec.timesteps, "T");
    gt->add_option("--profile", profile, "monotone | bump | constant");
    gt->add_option("--scale", tspec.scale, "variance level");
    gt->add_option("--seed", tspec.seed, "seed");
    gt->add_option("--out", out, "output file (default stdout)");

    // oracle
    auto* orc = app.add_subcommand("oracle", "reference computations (prints OracleResult JSON)");
    orc->require_subcommand(1);
    double o_sigma = 1.0;
    int o_bits = 4;
    std::optional<double> o_clip;
    std::int64_t o_samples = 10'000'000;
    std::uint64_t o_seed = 0;
    auto* o_mc = orc->add_subcommand("mc", "Monte Carlo MSE of the clipped quantizer on N(0, sigma^2)");
    auto* o_strat = orc->add_subcommand("stratified", "stratified Monte Carlo MSE");
    for (auto* s : {o_mc, o_strat}) {
        s->add_option("--sigma", o_sigma, "source standard deviation");
        s->add_option("--bits", o_bits, "bit-width");
        s->add_option("--clip", o_clip, "clip (default sigma * A*(b))");
        s->add_option("--samples", o_samples, "draws (>= 1e6)");
        s->add_option("--seed", o_seed, "seed");
    }
    auto* o_an = orc->add_subcommand("analytic", "closed-form MSE for sigma = 1");
    o_an->add_option("--bits", o_bits, "bit-width");
    o_an->add_option("--clip", o_clip, "clip (default A*(b))");
    auto* o_alloc = orc->add_subcommand("allocation", "exhaustive weight bit allocation");
    o_alloc->add_option("--model", model_dir, "model bundle directory")->required();
    o_alloc->add_option("--weight-bits", pw_bits, "target average weight bits");
    o_alloc->add_option("--bit-min", pw_min, "smallest bit-width");
    o_alloc->add_option("--bit-max", pw_max, "largest bit-width");
    auto* o_sched = orc->add_subcommand("schedule", "exhaustive activation schedule for one trace");
    o_sched->add_option("--traces", traces_path, "traces JSON")->required();
    o_sched->add_option("--layer", layer_id, "layer id")->required();
    o_sched->add_option("--act-bits", pa_bits, "target average activation bits");
    o_sched->add_option("--bit-set", pa_set, "allowed bit-widths")->delimiter(',');
    o_sched->add_option("--max-segments", pa_segments, "segment limit (0 = unbounded)");
    auto* o_block = orc->add_subcommand("block-search", "exhaustive SVD-L tiling search");
    std::string tensor_path;
    Index o_rank = 8;
    o_block->add_option("--tensor", tensor_path, "residual matrix (.qdt)")->required();
    o_block->add_option("--rank", o_rank, "budget rank");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (*kappa) {
            if (points < kMinIntegrationPoints) {
                throw Error(ErrorCode::ValidationError, "--points must be >= 1024");
            }
            emit(table_to_json(build_distortion_table(kappa_bits, points)), out);
        } else if (*stats) {
            emit(stats_to_json(model_stats(load_bundle(model_dir))), out);
        } else if (*pw) {
            emit(allocation_to_json(allocate_bits(model_stats(load_bundle(model_dir)), pw_bits, pw_min, pw_max)),
                 out);
        } else if (*dec) {
            const auto model = load_bundle(model_dir);
            const auto& layer = model.layer(layer_id);
            const auto table = build_distortion_table(std::vector<int>{dec_bits});
            const auto qw = hsvd_decompose(layer.weight, HsvdOptions{dec_rank, dec_local}, dec_bits, table);
            save_quantized_weight(qw, out);
            const double rel = (qw.reconstruct() - layer.weight).norm() / std::max(layer.weight.norm(), 1e-300);
            Json j = {{"layer", layer_id}, {"relative_error", rel}, {"local_fallback", qw.local_fallback}};
            j["local"] = qw.local ? Json{{"s_o", qw.local->config.s_o},
                                         {"s_i", qw.local->config.s_i},
                                         {"budget", qw.local->config.budget}}
                                  : Json(nullptr);
            std::cout << dump_json(j);
        } else if (*pa) {
            const auto traces = traces_from_json(parse_json_file(traces_path));
            const auto table = build_distortion_table(pa_set);
            std::vector<TemporalSchedule> out_s;
            for (const auto& t : traces) out_s.push_back(dp_schedule(t, pa_bits, pa_set, table, pa_segments));
            emit(schedules_to_json(out_s), out);
        } else if (*plan_cmd) {
            const auto config = flags.resolve();
            const auto model = load_bundle(model_dir);
            std::optional<std::vector<TemporalTrace>> traces;
            if (!traces_path.empty()) traces = traces_from_json(parse_json_file(traces_path));
            const auto plan = make_plan(model, config, std::move(traces));
            save_plan(plan, out);
            std::cout << dump_json(plan_summary(plan));
        } else if (*sim) {
            const auto model = load_bundle(model_dir);
            emit(report_to_json(simulate(model, load_plan(plan_dir))), out);
        } else if (*rep) {
            write_report_files(load_plan(plan_dir), plan_dir);
        } else if (*gm) {
            if (!dims_text.empty()) {
                mspec.dims.clear();
                for (const auto& d : dims_text) {
                    long long o = 0, i = 0;
                    char x = 0;
                    if (std::sscanf(d.c_str(), "%lld%c%lld", &o, &x, &i) != 3 || x != 'x') {
                        throw Error(ErrorCode::ValidationError, "--dims: expected OUTxIN, got '" + d + "'");
                    }
                    mspec.dims.emplace_back(o, i);
                }
            }
            save_bundle(generate_synthetic_model(mspec), out);
        } else if (*gt) {
            tspec.profile = parse_trace_profile(profile);
            if (!model_dir.empty()) {
                tspec.layer_ids.clear();
                for (const auto& l : load_bundle(model_dir).layers) tspec.layer_ids.push_back(l.id);
            }
            emit(traces_to_json(generate_synthetic_traces(tspec)), out);
        } else if (*orc) {
            Json j;
            if (*o_mc || *o_strat) {
                const double a = o_clip ? *o_clip
                                        : o_sigma * build_distortion_table(std::vector<int>{o_bits}).a_star(o_bits);
                const auto r = *o_mc ? oracle::mc_gaussian_mse(o_sigma, o_bits, a, o_samples, o_seed)
                                     : oracle::stratified_gaussian_mse(o_sigma, o_bits, a, o_samples, o_seed);
                j = oracle_json(r);
                j["clip"] = a;
            } else if (*o_an) {
                const double a = o_clip ? *o_clip : build_distortion_table(std::vector<int>{o_bits}).a_star(o_bits);
                j = oracle_json(oracle::analytic_gaussian_mse(a, o_bits));
                j["clip"] = a;
            } else if (*o_alloc) {
                const auto s = model_stats(load_bundle(model_dir));
                const auto r = oracle::exhaustive_allocation(s, pw_bits, pw_min, pw_max);
                j = oracle_json({r.objective, oracle::Method::Exhaustive, r.states});
                j["feasible"] = r.feasible;
                j["bits"] = Json::array();
                for (const auto& b : r.bits) j["bits"].push_back(b ? Json(*b) : Json(nullptr));
            } else if (*o_sched) {
                const auto traces = traces_from_json(parse_json_file(traces_path));
                const auto table = build_distortion_table(pa_set);
                const TemporalTrace* tr = nullptr;
                for (const auto& t : traces)
                    if (t.layer_id == layer_id) tr = &t;
                if (tr == nullptr) throw Error(ErrorCode::ValidationError, "no trace for layer '" + layer_id + "'");
                const auto r = oracle::exhaustive_schedule(
                    tr->variances, pa_bits, pa_set, [&](int b) { return table.kappa(b); }, pa_segments);
                j = oracle_json({r.cost, oracle::Method::Exhaustive, r.states});
                j["feasible"] = r.feasible;
                j["bits"] = r.bits;
                j["segments"] = r.segments;
            } else if (*o_block) {
                const auto r = oracle::exhaustive_block_search(read_tensor(tensor_path), o_rank);
                j = oracle_json({r.error, oracle::Method::Exhaustive, r.candidates});
                j["s_o"] = r.config.s_o;
                j["s_i"] = r.config.s_i;
                j["budget"] = r.config.budget;
            }
            std::cout << dump_json(j);
        }
    } catch (const Error& e) {
        std::cerr << "qplan: " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "qplan: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
