#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mbw/metrics.hpp"
#include "mbw/pipeline.hpp"
#include "mbw/synth.hpp"

/// Annotation files, dataset files, manifests and reports on disk.
///
/// Annotation files hold one JSON object per line with exactly the keys W_GT, W_Predictions,
/// S_Pred, BBox and confidence, in frame-major order (line n * V + v + 1 is frame n, view v).
/// Missing points are [null, null]; an absent S_Pred or BBox is null.
namespace mbw::io {

namespace fs = std::filesystem;

/// Writes `contents` to a sibling temp file and renames it over `path`. Throws IoError.
void write_file_atomic(const fs::path& path, const std::string& contents);
std::string read_file(const fs::path& path);

std::string format_record(const pipeline::FrameRecord& record);
/// Throws SchemaError naming `line_no` and the offending key.
pipeline::FrameRecord parse_record(const std::string& line, std::size_t line_no);

void save_annotations(std::span<const pipeline::FrameRecord> records, const fs::path& path);
std::vector<pipeline::FrameRecord> load_annotations(const fs::path& path);

nlohmann::json dataset_to_json(const synth::SynthDataset& ds);
/// Throws SchemaError (line 0) when the document is not a dataset.
synth::SynthDataset dataset_from_json(const nlohmann::json& j);
void save_dataset(const synth::SynthDataset& ds, const fs::path& path);
synth::SynthDataset load_dataset(const fs::path& path);

void save_manifest(const nlohmann::json& manifest, const fs::path& path);
void save_report(std::span<const metrics::ReportRow> rows, const fs::path& path);

}  // namespace mbw::io
