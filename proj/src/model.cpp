#include "qplan/model.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "qplan/tensor_io.hpp"
#include "qplan/vasmp.hpp"

namespace qplan {

using nlohmann::json;

const ModelLayer& ModelBundle::layer(const std::string& id) const
{
    for (const auto& l : layers) {
        if (l.id == id) return l;
    }
    throw Error(ErrorCode::InvalidInput, "no layer '" + id + "'");
}

void validate_layer_id(const std::string& id)
{
    const bool ok = !id.empty() && id != "." && id != ".." &&
                    std::all_of(id.begin(), id.end(), [](char c) {
                        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
                    });
    if (!ok) {
        throw Error(ErrorCode::ValidationError, "layer id '" + id + "' must match [A-Za-z0-9_.-]+");
    }
}

void validate_bundle(const ModelBundle& bundle)
{
    std::set<std::string> seen;
    for (const auto& l : bundle.layers) {
        validate_layer_id(l.id);
        if (!seen.insert(l.id).second) {
            throw Error(ErrorCode::ValidationError, "duplicate layer id '" + l.id + "'");
        }
        if (l.weight.size() == 0 || !l.weight.allFinite()) {
            throw Error(ErrorCode::ValidationError, "layer '" + l.id + "' has an empty or non-finite weight");
        }
    }
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir)
{
    validate_bundle(bundle);
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format"] = "qplan.model/1";
    manifest["name"] = bundle.name;
    manifest["params"] = bundle.params_json.empty() ? json::object() : json::parse(bundle.params_json);
    manifest["layers"] = json::array();
    for (const auto& l : bundle.layers) {
        const std::string file = l.id + ".qdt";
        write_tensor(l.weight, dir / file, DType::F32);
        manifest["layers"].push_back(
            {{"id", l.id}, {"file", file}, {"out", l.weight.rows()}, {"in", l.weight.cols()}, {"active", l.active}});
    }
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

ModelBundle load_bundle(const std::filesystem::path& dir)
{
    json manifest;
    try {
        manifest = json::parse(read_text(dir / "manifest.json"));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::FormatError, "manifest.json: " + std::string(e.what()));
    }
    ModelBundle b;
    try {
        b.name = manifest.at("name").get<std::string>();
        b.params_json = manifest.value("params", json::object()).dump();
        for (const auto& entry : manifest.at("layers")) {
            ModelLayer l;
            l.id = entry.at("id").get<std::string>();
            validate_layer_id(l.id);
            l.active = entry.value("active", true);
            l.weight = read_tensor(dir / entry.at("file").get<std::string>());
            b.layers.push_back(std::move(l));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::FormatError, "manifest.json: " + std::string(e.what()));
    }
    validate_bundle(b);
    return b;
}

namespace {

Matrix scaled_to_energy(Matrix m, double energy)
{
    const double n = m.squaredNorm();
    return n > 0.0 ? Matrix(m * std::sqrt(energy / n)) : m;
}

// Orthonormal basis of `cols` random directions orthogonal to span(taken).
Matrix complement_basis(const Matrix& taken, Index dim, Index cols, Rng& rng)
{
    Matrix g = rng.normal_matrix(dim, cols);
    if (taken.cols() + cols <= dim) {
        g -= taken * (taken.transpose() * g);
    }
    return svd(g).left.leftCols(cols);
}

Matrix range_basis(const Matrix& m)
{
    const auto f = svd(m);
    Index k = 0;
    while (k < f.singular_values.size() && f.singular_values(k) > 1e-10 * f.singular_values(0)) ++k;
    return f.left.leftCols(k);
}

}  // namespace

Matrix planted_block_matrix(Index out, Index in, Index rank, Index block_rows, Index block_cols, Rng& rng)
{
    check_block_size(out, in, block_rows, block_cols);
    if (rank < 0 || rank > std::min(out, in)) {
        throw Error(ErrorCode::RankExceedsDimension, "planted rank exceeds the matrix dimensions");
    }
    const double total = static_cast<double>(out * in);

    Matrix tiles(out, in);
    for (Index p = 0; p < out / block_rows; ++p) {
        for (Index q = 0; q < in / block_cols; ++q) {
            const Vector u = rng.normal_vector(block_rows);
            const Vector v = rng.normal_vector(block_cols);
            tiles.block(p * block_rows, q * block_cols, block_rows, block_cols) = u * v.transpose();
        }
    }
    tiles = scaled_to_energy(std::move(tiles), 0.40 * total);

    Matrix global = Matrix::Zero(out, in);
    if (rank > 0) {
        const Matrix u = complement_basis(range_basis(tiles), out, rank, rng);
        const Matrix v = complement_basis(range_basis(tiles.transpose()), in, rank, rng);
        global = scaled_to_energy(u * v.transpose(), 0.55 * total);
    }
    Matrix noise = scaled_to_energy(rng.normal_matrix(out, in), 0.05 * total);
    return global + tiles + noise;
}

ModelBundle generate_synthetic_model(const SyntheticModelSpec& spec)
{
    if (spec.layers < 1) {
        throw Error(ErrorCode::ValidationError, "spec.layers must be >= 1");
    }
    if (spec.dims.empty()) {
        throw Error(ErrorCode::ValidationError, "spec.dims must not be empty");
    }
    for (const auto& [o, i] : spec.dims) {
        if (o < 1 || !is_power_of_two(i)) {
            throw Error(ErrorCode::ValidationError, "spec.dims: input dimension must be a power of two");
        }
    }
    if (!(spec.variance_spread >= 1.0) || !(spec.base_variance > 0.0)) {
        throw Error(ErrorCode::ValidationError, "spec.variance_spread must be >= 1 and base_variance > 0");
    }

    Rng rng(spec.seed);
    // Geometric variance ladder, visited in a seeded random order.
    const auto L = static_cast<std::size_t>(spec.layers);
    std::vector<std::size_t> order(L);
    for (std::size_t i = 0; i < L; ++i) order[i] = i;
    for (std::size_t i = L; i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.below(i))]);
    }

    ModelBundle bundle;
    bundle.name = spec.name;
    json params = {{"generator", "synthetic"},
                   {"layers", spec.layers},
                   {"variance_spread", spec.variance_spread},
                   {"base_variance", spec.base_variance},
                   {"block_structured", spec.block_structured},
                   {"block_rows", spec.block_rows},
                   {"block_cols", spec.block_cols},
                   {"planted_rank", spec.planted_rank},
                   {"inactive", spec.inactive},
                   {"seed", spec.seed}};
    params["dims"] = json::array();
    for (const auto& [o, i] : spec.dims) params["dims"].push_back({o, i});
    bundle.params_json = params.dump();

    for (std::size_t l = 0; l < L; ++l) {
        const auto [out, in] = spec.dims[l % spec.dims.size()];
        const double frac = L > 1 ? static_cast<double>(order[l]) / static_cast<double>(L - 1) : 0.0;
        const double target = spec.base_variance * std::pow(spec.variance_spread, frac);

        Matrix w_h = spec.block_structured
                         ? planted_block_matrix(out, in, std::min({spec.planted_rank, out, in}),
                                                std::min(spec.block_rows, out), std::min(spec.block_cols, in), rng)
                         : rng.normal_matrix(out, in);
        const double realized = layer_stats(w_h, "tmp").mean_var;
        if (realized > 0.0) {
            w_h *= std::sqrt(target / realized);
        }
        char id[32];
        std::snprintf(id, sizeof id, "layer%02zu", l);
        const bool active = std::find(spec.inactive.begin(), spec.inactive.end(), static_cast<int>(l)) ==
                            spec.inactive.end();
        bundle.layers.push_back({id, to_float_precision(w_h * hadamard_matrix(in).transpose()), active});
    }
    return bundle;
}

TraceProfile parse_trace_profile(const std::string& s)
{
    if (s == "monotone") return TraceProfile::Monotone;
    if (s == "bump") return TraceProfile::Bump;
    if (s == "constant") return TraceProfile::Constant;
    throw Error(ErrorCode::ValidationError, "unknown trace profile '" + s + "' (monotone|bump|constant)");
}

std::string to_string(TraceProfile p)
{
    switch (p) {
    case TraceProfile::Monotone: return "monotone";
    case TraceProfile::Bump: return "bump";
    case TraceProfile::Constant: return "constant";
    }
    return "unknown";
}

std::vector<TemporalTrace> generate_synthetic_traces(const SyntheticTraceSpec& spec)
{
    if (spec.timesteps < 1) {
        throw Error(ErrorCode::ValidationError, "spec.timesteps must be >= 1");
    }
    if (!(spec.scale > 0.0)) {
        throw Error(ErrorCode::ValidationError, "spec.scale must be positive");
    }
    Rng rng(spec.seed);
    const Index T = spec.timesteps;
    std::vector<TemporalTrace> traces;
    for (const auto& id : spec.layer_ids) {
        const double level = spec.scale * std::exp(rng.uniform(-std::log(2.0), std::log(2.0)));
        const double center = static_cast<double>(T) / 3.0 * (1.0 + rng.uniform());
        const double width = std::max(static_cast<double>(T) / 8.0, 1.0);
        TemporalTrace tr{id, std::vector<double>(static_cast<std::size_t>(T))};
        for (Index t = 0; t < T; ++t) {
            double v = level;
            if (spec.profile == TraceProfile::Monotone && T > 1) {
                v = level * std::exp(-std::log(10.0) * static_cast<double>(t) / static_cast<double>(T - 1));
            } else if (spec.profile == TraceProfile::Bump) {
                const double d = (static_cast<double>(t) - center) / width;
                v = level * (0.2 + std::exp(-0.5 * d * d));
            }
            tr.variances[static_cast<std::size_t>(t)] = v;
        }
        traces.push_back(std::move(tr));
    }
    return traces;
}

}  // namespace qplan
