#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "ror/attack.hpp"
#include "ror/container.hpp"
#include "ror/defense.hpp"
#include "ror/model.hpp"
#include "ror/outlier_stats.hpp"

namespace ror {

// Shortest round-trip text for a double; non-finite values become "inf",
// "-inf" and "nan".
std::string format_real(double v);
// JSON number, or one of the strings above when not finite.
nlohmann::json real_json(double v);
double parse_real(const nlohmann::json& v, const std::string& field);

nlohmann::json to_json(const FlipLocation& f);
FlipLocation flip_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ChannelStats& s, const std::string& layer_id);
ChannelStats stats_from_json(const nlohmann::json& j);

nlohmann::json to_json(const AttackOutcome& o);
AttackOutcome outcome_from_json(const nlohmann::json& j);

// Summary only; per-trial rows go to the CSV.
nlohmann::json to_json(const EvalReport& r);

// Columns: trial, seed, n_flips, metric_before, metric_after, failed.
void write_report_csv(const std::filesystem::path& path, const EvalReport& r);
std::string report_csv(const EvalReport& r);

std::string alpha_sweep_csv(const std::vector<AlphaRow>& rows);

// Writes JSON with a trailing newline, keys in sorted order.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

// Complete JSON lines of an append-only log. A torn final line (no newline
// or unparsable) is dropped and the file truncated to the last good line.
std::vector<nlohmann::json> recover_jsonl(const std::filesystem::path& path);

/// A model as stored on disk: RORT tensors plus a JSON sidecar at
/// "<path>.json". Protected layers may hold dense (unquantized) fused weights.
struct StoredModel {
  ToyModel model;  // weights are filled only when every layer is quantized
  std::vector<ProtectedLayer> layers;
  bool is_protected = false;
  bool quantized = true;
};

std::filesystem::path sidecar_path(const std::filesystem::path& path);

void save_model(const std::filesystem::path& path, const ToyModel& model);
void save_protected(const std::filesystem::path& path, const ToyModel& baseline,
                    const std::vector<ProtectedLayer>& layers);
StoredModel load_stored(const std::filesystem::path& path);
// Requires quantized weights.
ToyModel load_model(const std::filesystem::path& path);

}  // namespace ror
