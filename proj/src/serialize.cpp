#include "qplan/serialize.hpp"

#include <map>
#include <sstream>

#include "qplan/tensor_io.hpp"

namespace qplan {

namespace {

template <typename F>
auto guarded(const char* what, F&& f)
{
    try {
        return f();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::FormatError, std::string(what) + ": " + e.what());
    }
}

}  // namespace

std::string dump_json(const Json& j)
{
    return j.dump(2) + "\n";
}

Json parse_json_file(const std::filesystem::path& path)
{
    const std::string text = read_text(path);
    return guarded(path.string().c_str(), [&] { return Json::parse(text); });
}

Json table_to_json(const DistortionTable& table)
{
    Json arr = Json::array();
    for (const auto& [b, e] : table.entries()) {
        arr.push_back({{"bits", b}, {"kappa", e.kappa}, {"a_star", e.a_star}});
    }
    return arr;
}

DistortionTable table_from_json(const Json& j)
{
    return guarded("distortion table", [&] {
        std::map<int, DistortionEntry> entries;
        for (const auto& e : j) {
            entries[e.at("bits").get<int>()] = {e.at("kappa").get<double>(), e.at("a_star").get<double>()};
        }
        return DistortionTable(std::move(entries));
    });
}

Json stats_to_json(const std::vector<LayerStats>& stats)
{
    Json arr = Json::array();
    for (const auto& s : stats) {
        arr.push_back({{"layer", s.layer_id}, {"mean_var", s.mean_var}, {"params", s.param_count}, {"active", s.active}});
    }
    return arr;
}

std::vector<LayerStats> stats_from_json(const Json& j)
{
    return guarded("layer stats", [&] {
        std::vector<LayerStats> out;
        for (const auto& e : j) {
            out.push_back({e.at("layer").get<std::string>(), e.at("mean_var").get<double>(),
                           e.at("params").get<std::int64_t>(), e.value("active", true)});
        }
        return out;
    });
}

Json allocation_to_json(const BitAllocation& a)
{
    Json layers = Json::array();
    for (std::size_t i = 0; i < a.stats.size(); ++i) {
        const auto& s = a.stats[i];
        Json e = {{"layer", s.layer_id}, {"mean_var", s.mean_var}, {"params", s.param_count}, {"active", s.active}};
        e["b_continuous"] = a.continuous[i] ? Json(*a.continuous[i]) : Json(nullptr);
        e["b_discrete"] = a.discrete[i] ? Json(*a.discrete[i]) : Json(nullptr);
        layers.push_back(std::move(e));
    }
    Json summary = {{"target", a.target_avg},     {"realized_avg", a.realized_avg()},
                    {"objective", a.objective()}, {"budget", a.budget},
                    {"used", a.used},             {"over_budget", a.over_budget},
                    {"bit_min", a.b_min},         {"bit_max", a.b_max}};
    return {{"layers", std::move(layers)}, {"summary", std::move(summary)}};
}

BitAllocation allocation_from_json(const Json& j)
{
    return guarded("allocation", [&] {
        BitAllocation a;
        for (const auto& e : j.at("layers")) {
            a.stats.push_back({e.at("layer").get<std::string>(), e.at("mean_var").get<double>(),
                               e.at("params").get<std::int64_t>(), e.value("active", true)});
            const auto& c = e.at("b_continuous");
            const auto& d = e.at("b_discrete");
            a.continuous.push_back(c.is_null() ? std::nullopt : std::optional<double>(c.get<double>()));
            a.discrete.push_back(d.is_null() ? std::nullopt : std::optional<int>(d.get<int>()));
        }
        const auto& s = j.at("summary");
        a.target_avg = s.at("target").get<double>();
        a.budget = s.at("budget").get<std::int64_t>();
        a.used = s.at("used").get<std::int64_t>();
        a.over_budget = s.at("over_budget").get<bool>();
        a.b_min = s.at("bit_min").get<int>();
        a.b_max = s.at("bit_max").get<int>();
        return a;
    });
}

Json schedules_to_json(const std::vector<TemporalSchedule>& schedules)
{
    Json arr = Json::array();
    for (const auto& s : schedules) {
        Json segs = Json::array();
        for (const auto& g : s.segments) {
            segs.push_back({{"start", g.start}, {"end", g.end}, {"bits", g.bits}});
        }
        arr.push_back({{"layer", s.layer_id},
                       {"segments", std::move(segs)},
                       {"cost", s.cost},
                       {"budget", s.budget},
                       {"total_bits", s.total_bits}});
    }
    return arr;
}

std::vector<TemporalSchedule> schedules_from_json(const Json& j)
{
    return guarded("schedules", [&] {
        std::vector<TemporalSchedule> out;
        for (const auto& e : j) {
            TemporalSchedule s;
            s.layer_id = e.at("layer").get<std::string>();
            for (const auto& g : e.at("segments")) {
                s.segments.push_back({g.at("start").get<Index>(), g.at("end").get<Index>(), g.at("bits").get<int>()});
            }
            s.cost = e.at("cost").get<double>();
            s.budget = e.at("budget").get<std::int64_t>();
            s.total_bits = e.value("total_bits", std::int64_t{0});
            if (!e.contains("total_bits")) {
                for (const auto& g : s.segments) s.total_bits += g.bits * (g.end - g.start);
            }
            Index expect = 0;
            for (const auto& g : s.segments) {
                if (g.start != expect || g.end <= g.start) {
                    throw Error(ErrorCode::FormatError, "schedule '" + s.layer_id + "' segments are not contiguous");
                }
                expect = g.end;
            }
            out.push_back(std::move(s));
        }
        return out;
    });
}

Json traces_to_json(const std::vector<TemporalTrace>& traces)
{
    Json arr = Json::array();
    for (const auto& t : traces) {
        arr.push_back({{"layer", t.layer_id}, {"variances", t.variances}});
    }
    return arr;
}

std::vector<TemporalTrace> traces_from_json(const Json& j)
{
    return guarded("traces", [&] {
        std::vector<TemporalTrace> out;
        for (const auto& e : j) {
            TemporalTrace t{e.at("layer").get<std::string>(), e.at("variances").get<std::vector<double>>()};
            VariancePrefix{t.variances};
            out.push_back(std::move(t));
        }
        return out;
    });
}

std::string heatmap_csv(const std::vector<TemporalSchedule>& schedules)
{
    Index T = 0;
    for (const auto& s : schedules) T = std::max(T, s.length());
    std::ostringstream os;
    os << "layer";
    for (Index t = 0; t < T; ++t) os << ",t" << t;
    os << "\n";
    for (const auto& s : schedules) {
        os << s.layer_id;
        const auto bits = s.per_timestep();
        for (Index t = 0; t < T; ++t) {
            os << ",";
            if (t < static_cast<Index>(bits.size())) os << bits[static_cast<std::size_t>(t)];
        }
        os << "\n";
    }
    return os.str();
}

void save_quantized_weight(const QuantizedWeight& qw, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    write_tensor(qw.global.left, dir / "global_left.qdt", DType::F64);
    write_tensor(Matrix(qw.global.singular_values), dir / "global_sigma.qdt", DType::F64);
    write_tensor(qw.global.right, dir / "global_right.qdt", DType::F64);
    Json meta = {{"format", "qplan.weight/1"},
                 {"out", qw.out},
                 {"in", qw.in},
                 {"hadamard_size", qw.hadamard_size},
                 {"local_fallback", qw.local_fallback},
                 {"residual", {{"bits", qw.residual.bits},
                               {"step", qw.residual.step},
                               {"axis", qw.residual.axis == QuantAxis::PerChannel ? "per-channel" : "per-token"}}}};
    if (qw.local) {
        const auto& lb = *qw.local;
        const auto n = static_cast<Index>(lb.blocks.size());
        Matrix us(n, lb.config.s_o), vs(n, lb.config.s_i), sig(n, 1);
        for (Index k = 0; k < n; ++k) {
            const auto& b = lb.blocks[static_cast<std::size_t>(k)];
            us.row(k) = b.u.transpose();
            vs.row(k) = b.v.transpose();
            sig(k, 0) = b.sigma;
        }
        write_tensor(us, dir / "local_u.qdt", DType::F64);
        write_tensor(vs, dir / "local_v.qdt", DType::F64);
        write_tensor(sig, dir / "local_sigma.qdt", DType::F64);
        meta["local"] = {{"s_o", lb.config.s_o}, {"s_i", lb.config.s_i}, {"budget", lb.config.budget}};
    } else {
        meta["local"] = nullptr;
    }
    write_tensor(qw.residual.codes, dir / "residual_codes.qdt");
    write_tensor(Matrix(qw.residual.scales), dir / "residual_scales.qdt", DType::F64);
    write_text(dir / "meta.json", dump_json(meta));
}

QuantizedWeight load_quantized_weight(const std::filesystem::path& dir)
{
    const Json meta = parse_json_file(dir / "meta.json");
    return guarded("weight meta", [&] {
        QuantizedWeight qw;
        qw.out = meta.at("out").get<Index>();
        qw.in = meta.at("in").get<Index>();
        qw.hadamard_size = meta.at("hadamard_size").get<Index>();
        qw.local_fallback = meta.at("local_fallback").get<bool>();
        qw.global.left = read_tensor(dir / "global_left.qdt");
        qw.global.singular_values = read_tensor(dir / "global_sigma.qdt").col(0);
        qw.global.right = read_tensor(dir / "global_right.qdt");
        if (!meta.at("local").is_null()) {
            LocalBranch lb;
            lb.config = {meta["local"].at("s_o").get<Index>(), meta["local"].at("s_i").get<Index>(),
                         meta["local"].at("budget").get<std::int64_t>()};
            lb.rows = qw.out;
            lb.cols = qw.in;
            const Matrix us = read_tensor(dir / "local_u.qdt");
            const Matrix vs = read_tensor(dir / "local_v.qdt");
            const Matrix sig = read_tensor(dir / "local_sigma.qdt");
            for (Index k = 0; k < us.rows(); ++k) {
                lb.blocks.push_back({us.row(k).transpose(), vs.row(k).transpose(), sig(k, 0)});
            }
            qw.local = std::move(lb);
        }
        const auto& r = meta.at("residual");
        qw.residual.codes = read_int_tensor(dir / "residual_codes.qdt");
        qw.residual.scales = read_tensor(dir / "residual_scales.qdt").col(0);
        qw.residual.bits = r.at("bits").get<int>();
        qw.residual.step = r.at("step").get<double>();
        qw.residual.axis = r.at("axis").get<std::string>() == "per-token" ? QuantAxis::PerToken : QuantAxis::PerChannel;
        if (qw.residual.codes.rows() != qw.out || qw.residual.codes.cols() != qw.in) {
            throw Error(ErrorCode::CorruptFile, "residual shape does not match meta.json");
        }
        return qw;
    });
}

}  // namespace qplan
