#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "manipflow/point_cloud.hpp"

namespace manipflow::io {

enum class PlyFormat { Ascii, BinaryLittleEndian };

/// Reads vertex x,y,z and, when present, nx,ny,nz and red,green,blue.
/// Accepts float/double coordinates and uchar/float colors.
PointCloud read_ply(const std::filesystem::path& path);

/// Writes x,y,z (double) plus normals (double) and colors (uchar) when present.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud,
               PlyFormat format = PlyFormat::BinaryLittleEndian);

/// 16-bit grayscale PNG -> meters (raw / scale). Zero stays zero (invalid).
std::vector<double> read_depth_png(const std::filesystem::path& path, double scale,
                                   int& width, int& height);
void write_depth_png(const std::filesystem::path& path, const std::vector<double>& depth,
                     int width, int height, double scale);

/// 8-bit RGB PNG -> colors in [0,1].
std::vector<Vec3> read_color_png(const std::filesystem::path& path, int& width, int& height);
void write_color_png(const std::filesystem::path& path, const std::vector<Vec3>& color,
                     int width, int height);

CameraIntrinsics read_intrinsics_json(const std::filesystem::path& path);
void write_intrinsics_json(const std::filesystem::path& path, const CameraIntrinsics& k);

RGBDFrame read_rgbd_frame(const std::filesystem::path& depth_png,
                          const std::filesystem::path& color_png,
                          const CameraIntrinsics& intrinsics, double depth_scale);

std::string read_text(const std::filesystem::path& path);
/// Writes via a temporary file then renames, so readers never see partial files.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace manipflow::io
