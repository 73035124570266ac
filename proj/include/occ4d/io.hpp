#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "occ4d/baselines.hpp"
#include "occ4d/dataset.hpp"
#include "occ4d/grid.hpp"
#include "occ4d/scene.hpp"

namespace occ4d {

struct EvalReport;
struct SynthConfig;

// GridFile ("C4DO") and FlowFile ("C4DF"), little-endian:
//   magic[4] | format_version u32 | mode u8 | Np u8 | Nf u8 |
//   nx u32 | ny u32 | nz u32 | x_min f64 | y_min f64 | z_min f64 |
//   resolution f64 | flags u32
// GridFile payload, per frame t = 0..Nf: nx*ny*nz label bytes, then (flags
// bit 0) nx*ny*nz u16 IDs. FlowFile payload, per frame: nx*ny*nz * 3 f32
// vectors followed by nx*ny*nz validity bytes.
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderBytes = 59;
inline constexpr std::uint32_t kFlagInstanceIds = 1u;

struct GridFileData {
  TaskMode mode = TaskMode::InflatedGMO;
  OccupancySequence frames;
};

struct FlowFileData {
  TaskMode mode = TaskMode::InflatedGMO;
  std::vector<FlowVolume> flows;
};

std::vector<std::uint8_t> encode_grid_file(const OccupancySequence& seq,
                                           TaskMode mode);
GridFileData decode_grid_file(std::span<const std::uint8_t> bytes);

// Vectors are written as f32 (zero on invalid voxels).
std::vector<std::uint8_t> encode_flow_file(const std::vector<FlowVolume>& flows,
                                           TaskMode mode);
FlowFileData decode_flow_file(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);

void save_grid_file(const std::filesystem::path& path,
                    const OccupancySequence& seq, TaskMode mode);
GridFileData load_grid_file(const std::filesystem::path& path);
void save_flow_file(const std::filesystem::path& path,
                    const std::vector<FlowVolume>& flows, TaskMode mode);
FlowFileData load_flow_file(const std::filesystem::path& path);

// A sample on disk: <stem>.c4do (occupancy + IDs), <stem>.c4df (flow) and
// <stem>.json (metadata).
struct SamplePaths {
  std::filesystem::path occupancy, flow, meta;
};
SamplePaths sample_paths(const std::filesystem::path& dir,
                         const std::string& stem);
// Accepts the .c4do path or the bare stem.
SamplePaths sample_paths(const std::filesystem::path& any);
void save_sample(const SamplePaths& paths, const Sample& sample);
Sample load_sample(const SamplePaths& paths);

// BEV file ("C4DB"): magic[4] | version u32 | nx u32 | ny u32 | x_min f64 |
// y_min f64 | resolution f64 | frames u32 | flags u32, then per frame nx*ny
// occupancy bytes and (flags bit 0) nx*ny u16 IDs.
std::vector<std::uint8_t> encode_bev_file(const std::vector<BevMap>& frames);
std::vector<BevMap> decode_bev_file(std::span<const std::uint8_t> bytes);
void save_bev_file(const std::filesystem::path& path,
                   const std::vector<BevMap>& frames);
std::vector<BevMap> load_bev_file(const std::filesystem::path& path);

// Labeled point list: text, header line "x,y,z,label", one point per line,
// label as its numeric code.
void save_point_cloud(const std::filesystem::path& path,
                      const LabeledPointCloud& cloud);
LabeledPointCloud load_point_cloud(const std::filesystem::path& path);

// Scene interchange document (JSON). Fine label volumes and clouds are
// written next to the document and referenced by relative path.
inline constexpr int kSceneSchemaVersion = 1;
void save_scene_document(const std::filesystem::path& path, const Scene& scene);
Scene load_scene_document(const std::filesystem::path& path);
std::string scene_to_json_text(const Scene& scene);  // no external files

// Evaluation report: JSON object and a comma-separated per-step table.
std::string report_to_json_text(const EvalReport& report);
EvalReport report_from_json_text(const std::string& text);
void save_report_json(const std::filesystem::path& path,
                      const EvalReport& report);
EvalReport load_report_json(const std::filesystem::path& path);
std::string report_to_csv_text(const EvalReport& report);
void save_report_csv(const std::filesystem::path& path,
                     const EvalReport& report);

SynthConfig synth_config_from_json_text(const std::string& text);
SynthConfig load_synth_config(const std::filesystem::path& path);

// Delimiter-separated voxel list "t,ix,iy,iz,x,y,z,label,instance" of all
// non-Free voxels, for external plotting.
std::string export_voxels_csv(const OccupancySequence& seq);

}  // namespace occ4d
