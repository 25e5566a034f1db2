#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "finta/autoencoder.hpp"
#include "finta/baselines.hpp"
#include "finta/geometry.hpp"
#include "finta/latent_index.hpp"
#include "finta/metrics.hpp"

namespace finta::io {

/// Throws FileNotFound / IoError.
std::string read_file(const std::filesystem::path& path);
/// Creates parent directories. Throws IoError.
void write_file(const std::filesystem::path& path, std::string_view bytes);

/// 64-bit FNV-1a; used for artifact fingerprints in manifests.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

// ---------------------------------------------------------------------------
// Track files.
//
//   mrtrix tracks\n
//   count: <n>\n
//   datatype: Float32LE\n
//   file: . <offset>\n
//   END\n
//   <body at offset>
//
// The body is little-endian float32 (x, y, z) triples; every streamline is
// followed by a (NaN, NaN, NaN) triple and the stream ends with
// (Inf, Inf, Inf). Coordinates round-trip exactly when they are representable
// as float32.

std::string encode_tracks(const Tractogram& t);
/// Unknown header keys are reported through `warnings` (if given), not thrown.
Tractogram decode_tracks(std::string_view bytes, std::vector<std::string>* warnings = nullptr);

void write_tracks(const Tractogram& t, const std::filesystem::path& path);
Tractogram read_tracks(const std::filesystem::path& path,
                       std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------------------
// Label sidecar (JSON): {"format": "finta-labels", "version": 1, "count": n,
// "streamlines": [{"id": 0, "label": ..., "group_id": ...}, ...]}

inline constexpr int kLabelsVersion = 1;

struct LabelSidecar {
  std::optional<std::vector<std::string>> labels;
  std::optional<std::vector<std::string>> group_ids;
  std::size_t count = 0;
};

std::string encode_labels(const Tractogram& t);
LabelSidecar decode_labels(std::string_view bytes);
void write_labels(const Tractogram& t, const std::filesystem::path& path);
LabelSidecar read_labels(const std::filesystem::path& path);

/// Attaches a sidecar to a tractogram; throws ShapeMismatch on count mismatch.
void attach_labels(Tractogram& t, const LabelSidecar& sidecar);

// ---------------------------------------------------------------------------
// Model files: "FNTA", u16 version, config, normalization, anchor, then each
// parameter tensor as (u32 rank, u32 dims..., float32 data), and an FNV-1a
// trailer over everything before it. All little-endian.

inline constexpr std::uint16_t kModelVersion = 1;

std::string encode_model(const AutoencoderModel& model);
AutoencoderModel decode_model(std::string_view bytes);
void write_model(const AutoencoderModel& model, const std::filesystem::path& path);
AutoencoderModel read_model(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Mask volumes: text header terminated by "END\n", then one u8 tag per voxel
// in x-fastest order.

inline constexpr int kMaskVersion = 1;

std::string encode_mask(const MaskVolume& mask);
MaskVolume decode_mask(std::string_view bytes);
void write_mask(const MaskVolume& mask, const std::filesystem::path& path);
MaskVolume read_mask(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Latent dump: CSV with header `id,label,z0..z{d-1}`, 9 significant digits
// (exact for float32).

std::string encode_latents(const LatentTable& table);
LatentTable decode_latents(std::string_view text);
void write_latents(const LatentTable& table, const std::filesystem::path& path);
LatentTable read_latents(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Reports.

std::string encode_decisions(const std::vector<FilterDecision>& decisions);
std::vector<FilterDecision> decode_decisions(std::string_view text);

std::string encode_threshold(const Threshold& threshold, std::size_t n_pos, std::size_t n_neg);
Threshold decode_threshold(std::string_view text);
std::string encode_roc(const Threshold& threshold);

std::string encode_train_report(const TrainReport& report, const ModelConfig& config);

/// One `key: value` line per metric.
std::string encode_eval_report(const EvalReport& report);
/// `metric,value` rows for plotting.
std::string encode_eval_table(const EvalReport& report);

/// Shortest decimal that round-trips.
std::string format_double(double v);

}  // namespace finta::io
