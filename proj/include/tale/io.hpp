#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "tale/model.hpp"
#include "tale/search.hpp"

namespace tale {

std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& bytes);

// ---- weight container ------------------------------------------------------
// Layout (all integers little-endian):
//   magic "TALE" | version u32 | config length u32 | config text (key-value)
//   | tensor count u32 | per tensor: name length u32, name, rank u32,
//   dims u64 each, dtype u8 | payloads contiguous in directory order.
// Round-trips are bitwise: load(save(m)) then save gives identical bytes.

inline constexpr std::uint32_t weight_format_version = 1;
inline constexpr std::uint8_t dtype_f64 = 0;
inline constexpr std::uint8_t dtype_f32 = 1;  // reserved for inference-mode files

std::string serialize_model(const TransformerModel& model);
TransformerModel deserialize_model(const std::string& bytes);

void save_model(const TransformerModel& model, const std::string& path);
TransformerModel load_model(const std::string& path);

// lowercase hex sha-256 of the weight-file bytes
std::string model_digest(const TransformerModel& model);

// ---- trajectory ------------------------------------------------------------

// with_timestamps=false yields the canonical content form used for
// comparisons and digests; saved files keep timestamps.
std::string trajectory_json(const PruneTrajectory& t, bool with_timestamps = true);
PruneTrajectory trajectory_from_json(const std::string& text);

void save_trajectory(const PruneTrajectory& t, const std::string& path);
PruneTrajectory load_trajectory(const std::string& path);

// per-iteration CSV: iteration,selected_layer,accuracy,proxy_speedup
std::string trajectory_csv(const PruneTrajectory& t);

// ---- small file helpers ------------------------------------------------

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

// canonical float formatting: '.' decimal separator, shortest round-trip
std::string format_double(double v);

}  // namespace tale
