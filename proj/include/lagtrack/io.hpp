#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lagtrack/geometry.hpp"
#include "lagtrack/imaging.hpp"
#include "lagtrack/motion.hpp"

namespace lagtrack {

void to_json(nlohmann::json& j, const CameraModel& c);
void from_json(const nlohmann::json& j, CameraModel& c);

/// Flat key-value camera file: `position = x y z`, `orientation = yaw pitch
/// roll`, `focal_length`, `principal_point`, `sensor_size`, `k1`, `k2`,
/// `p1`, `p2`. Lines starting with '#' are comments.
CameraModel read_camera_file(const std::filesystem::path& path);
CameraModel parse_camera(std::string_view text);
std::string format_camera(const CameraModel& camera);
void write_camera_file(const std::filesystem::path& path, const CameraModel& camera);

/// CSV with header `label,x,y,z,u,v`.
std::vector<GroundControlPoint> read_gcp_csv(const std::filesystem::path& path);
void write_gcp_csv(const std::filesystem::path& path, const std::vector<GroundControlPoint>& gcps);

/// ESRI ASCII grid; nodes are taken at cell centers.
Raster read_esri_ascii(const std::filesystem::path& path);
void write_esri_ascii(const std::filesystem::path& path, const Raster& raster);

struct ManifestEntry {
  Days time = 0.0;
  int camera_id = 0;
  std::filesystem::path path;
};

/// CSV `timestamp_iso8601,camera_id,path`; relative paths resolve against
/// the manifest's directory. Entries are returned sorted by time.
std::vector<ManifestEntry> read_image_manifest(const std::filesystem::path& path);
void write_image_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// ISO 8601 `YYYY-MM-DDTHH:MM[:SS[.fff]][Z|+hh:mm]` to fractional days since 1970-01-01 UTC.
Days parse_iso8601(std::string_view text);
std::string format_iso8601(Days time);

RgbImage read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const RgbImage& image);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL);
std::uint64_t file_digest(const std::filesystem::path& path);
std::string hex64(std::uint64_t value);

std::string read_text(const std::filesystem::path& path);

}  // namespace lagtrack
