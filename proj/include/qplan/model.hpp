#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "qplan/linalg.hpp"
#include "qplan/rng.hpp"
#include "qplan/vatmp.hpp"

namespace qplan {

struct ModelLayer {
    std::string id;
    Matrix weight;  // out x in, original (non-rotated) domain
    bool active = true;
};

/// Ordered set of linear layers standing in for a real network. Inactive layers
/// are pinned to a fixed precision and excluded from bit allocation.
struct ModelBundle {
    std::string name;
    std::string params_json;  // creation parameters, echoed verbatim
    std::vector<ModelLayer> layers;

    const ModelLayer& layer(const std::string& id) const;
};

/// Layer ids double as file names, so they are limited to [A-Za-z0-9_.-].
void validate_layer_id(const std::string& id);
void validate_bundle(const ModelBundle& bundle);

/// Writes manifest.json plus one float32 tensor per layer.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);
ModelBundle load_bundle(const std::filesystem::path& dir);

struct SyntheticModelSpec {
    std::string name = "synthetic";
    int layers = 8;
    /// (out, in) pairs cycled over the layers; in must be a power of two.
    std::vector<std::pair<Index, Index>> dims{{64, 64}};
    /// Ratio between the largest and smallest mean output-channel variance.
    double variance_spread = 100.0;
    double base_variance = 1e-2;
    /// Plant a low-rank global part plus rank-1 tiles in the Hadamard domain.
    bool block_structured = false;
    Index block_rows = 8;
    Index block_cols = 16;
    Index planted_rank = 8;
    std::vector<int> inactive;  // indices of pinned layers
    std::uint64_t seed = 0;
};

ModelBundle generate_synthetic_model(const SyntheticModelSpec& spec);

/// Hadamard-domain matrix: a rank-`rank` part (55% of the energy), rank-1 tiles
/// of size block_rows x block_cols (40%) and an i.i.d. floor (5%). The low-rank
/// part is drawn orthogonal to the row and column spaces of the tiles when
/// there is room, so what a rank-`rank` SVD leaves behind is tiles plus noise.
Matrix planted_block_matrix(Index out, Index in, Index rank, Index block_rows, Index block_cols, Rng& rng);

enum class TraceProfile { Monotone, Bump, Constant };

TraceProfile parse_trace_profile(const std::string& s);
std::string to_string(TraceProfile p);

struct SyntheticTraceSpec {
    Index timesteps = 50;
    TraceProfile profile = TraceProfile::Bump;
    double scale = 1.0;
    std::uint64_t seed = 0;
    std::vector<std::string> layer_ids{"layer00"};
};

/// One trace per layer id. Monotone traces strictly decrease, bump traces peak
/// in the middle third, constant traces are flat.
std::vector<TemporalTrace> generate_synthetic_traces(const SyntheticTraceSpec& spec);

}  // namespace qplan
