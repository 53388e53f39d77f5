#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "qplan/hsvd.hpp"
#include "qplan/quantizer.hpp"
#include "qplan/vasmp.hpp"
#include "qplan/vatmp.hpp"

namespace qplan {

using Json = nlohmann::json;

/// [{"bits": b, "kappa": k, "a_star": a}, ...]
Json table_to_json(const DistortionTable& table);
DistortionTable table_from_json(const Json& j);

Json stats_to_json(const std::vector<LayerStats>& stats);
std::vector<LayerStats> stats_from_json(const Json& j);

/// {"layers": [{"layer", "b_continuous", "b_discrete", "mean_var", "params", "active"}],
///  "summary": {"target", "realized_avg", "objective", ...}}
Json allocation_to_json(const BitAllocation& a);
BitAllocation allocation_from_json(const Json& j);

/// [{"layer", "segments": [{"start", "end", "bits"}], "cost", "budget", "total_bits"}]
Json schedules_to_json(const std::vector<TemporalSchedule>& schedules);
std::vector<TemporalSchedule> schedules_from_json(const Json& j);

/// [{"layer", "variances": [...]}]
Json traces_to_json(const std::vector<TemporalTrace>& traces);
std::vector<TemporalTrace> traces_from_json(const Json& j);

/// Layer x timestep activation bit grid; first column is the layer id.
std::string heatmap_csv(const std::vector<TemporalSchedule>& schedules);

/// One tensor file per branch plus meta.json. Full-precision parts are stored
/// as float64 so that a reloaded decomposition dequantizes bit-identically.
void save_quantized_weight(const QuantizedWeight& qw, const std::filesystem::path& dir);
QuantizedWeight load_quantized_weight(const std::filesystem::path& dir);

/// Stable textual form used for every JSON artifact (two-space indent, newline).
std::string dump_json(const Json& j);
Json parse_json_file(const std::filesystem::path& path);

}  // namespace qplan
