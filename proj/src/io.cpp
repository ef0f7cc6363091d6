#include "manipflow/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <png.h>
#include "json.hpp"

#include "manipflow/error.hpp"

namespace manipflow::io {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary PLY I/O assumes a little-endian host");

namespace {

enum class ScalarType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

ScalarType parse_type(const std::string& name) {
  if (name == "char" || name == "int8") return ScalarType::Int8;
  if (name == "uchar" || name == "uint8") return ScalarType::UInt8;
  if (name == "short" || name == "int16") return ScalarType::Int16;
  if (name == "ushort" || name == "uint16") return ScalarType::UInt16;
  if (name == "int" || name == "int32") return ScalarType::Int32;
  if (name == "uint" || name == "uint32") return ScalarType::UInt32;
  if (name == "float" || name == "float32") return ScalarType::Float32;
  if (name == "double" || name == "float64") return ScalarType::Float64;
  throw input_error("ply: unknown property type '" + name + "'");
}

std::size_t type_size(ScalarType t) {
  switch (t) {
    case ScalarType::Int8: case ScalarType::UInt8: return 1;
    case ScalarType::Int16: case ScalarType::UInt16: return 2;
    case ScalarType::Int32: case ScalarType::UInt32: case ScalarType::Float32: return 4;
    case ScalarType::Float64: return 8;
  }
  return 0;
}

template <typename T>
T load(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

double decode(ScalarType t, const char* p) {
  switch (t) {
    case ScalarType::Int8: return load<std::int8_t>(p);
    case ScalarType::UInt8: return load<std::uint8_t>(p);
    case ScalarType::Int16: return load<std::int16_t>(p);
    case ScalarType::UInt16: return load<std::uint16_t>(p);
    case ScalarType::Int32: return load<std::int32_t>(p);
    case ScalarType::UInt32: return load<std::uint32_t>(p);
    case ScalarType::Float32: return load<float>(p);
    case ScalarType::Float64: return load<double>(p);
  }
  return 0;
}

struct Property {
  std::string name;
  ScalarType type{};
  bool is_list = false;
  ScalarType count_type{};
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> props;
};

double color_scale(ScalarType t) {
  return (t == ScalarType::Float32 || t == ScalarType::Float64) ? 1.0 : 1.0 / 255.0;
}

}  // namespace

PointCloud read_ply(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("ply: cannot open " + path.string());

  std::string line;
  std::getline(in, line);
  if (line.rfind("ply", 0) != 0) throw input_error("ply: missing magic in " + path.string());
  bool ascii = false;
  std::vector<Element> elements;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") ascii = true;
      else if (fmt != "binary_little_endian")
        throw input_error("ply: unsupported format '" + fmt + "'");
    } else if (tok == "element") {
      Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (tok == "property") {
      if (elements.empty()) throw input_error("ply: property before element");
      Property p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string ct, it;
        ls >> ct >> it >> p.name;
        p.is_list = true;
        p.count_type = parse_type(ct);
        p.type = parse_type(it);
      } else {
        p.type = parse_type(type);
        ls >> p.name;
      }
      elements.back().props.push_back(p);
    } else if (tok == "end_header") {
      break;
    }
  }

  PointCloud cloud;
  for (const auto& e : elements) {
    const bool vertex = e.name == "vertex";
    int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1, ir = -1, ig = -1, ib = -1;
    for (int k = 0; k < static_cast<int>(e.props.size()); ++k) {
      const auto& n = e.props[k].name;
      if (n == "x") ix = k; else if (n == "y") iy = k; else if (n == "z") iz = k;
      else if (n == "nx") inx = k; else if (n == "ny") iny = k; else if (n == "nz") inz = k;
      else if (n == "red" || n == "r") ir = k;
      else if (n == "green" || n == "g") ig = k;
      else if (n == "blue" || n == "b") ib = k;
    }
    const bool has_n = vertex && inx >= 0 && iny >= 0 && inz >= 0;
    const bool has_c = vertex && ir >= 0 && ig >= 0 && ib >= 0;
    if (vertex && (ix < 0 || iy < 0 || iz < 0)) throw input_error("ply: vertex lacks x/y/z");
    const double cscale = has_c ? color_scale(e.props[ir].type) : 1.0;
    std::vector<double> vals(e.props.size());

    for (std::size_t r = 0; r < e.count; ++r) {
      if (ascii) {
        if (!std::getline(in, line)) throw input_error("ply: truncated ascii body");
        std::istringstream ls(line);
        for (std::size_t k = 0; k < e.props.size(); ++k) {
          if (e.props[k].is_list) {
            double cnt = 0, dummy = 0;
            ls >> cnt;
            for (int c = 0; c < static_cast<int>(cnt); ++c) ls >> dummy;
            vals[k] = cnt;
          } else if (!(ls >> vals[k])) {
            throw input_error("ply: malformed ascii row");
          }
        }
      } else {
        for (std::size_t k = 0; k < e.props.size(); ++k) {
          const auto& p = e.props[k];
          char buf[8];
          if (p.is_list) {
            in.read(buf, static_cast<std::streamsize>(type_size(p.count_type)));
            const auto cnt = static_cast<std::size_t>(decode(p.count_type, buf));
            in.ignore(static_cast<std::streamsize>(cnt * type_size(p.type)));
            vals[k] = static_cast<double>(cnt);
          } else {
            in.read(buf, static_cast<std::streamsize>(type_size(p.type)));
            vals[k] = decode(p.type, buf);
          }
          if (!in) throw input_error("ply: truncated binary body in " + path.string());
        }
      }
      if (!vertex) continue;
      cloud.positions.emplace_back(vals[ix], vals[iy], vals[iz]);
      if (has_n) cloud.normals.emplace_back(vals[inx], vals[iny], vals[inz]);
      if (has_c) cloud.colors.emplace_back(vals[ir] * cscale, vals[ig] * cscale, vals[ib] * cscale);
    }
  }
  // stored normals may have been written in single precision
  for (auto& n : cloud.normals) {
    const double len = n.norm();
    if (len > 0) n /= len;
  }
  return cloud;
}

void write_ply(const fs::path& path, const PointCloud& cloud, PlyFormat format) {
  cloud.validate();
  std::ostringstream out;
  out << "ply\nformat " << (format == PlyFormat::Ascii ? "ascii" : "binary_little_endian")
      << " 1.0\nelement vertex " << cloud.size() << "\n"
      << "property double x\nproperty double y\nproperty double z\n";
  if (cloud.has_normals()) out << "property double nx\nproperty double ny\nproperty double nz\n";
  if (cloud.has_colors()) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "end_header\n";

  auto to_byte = [](double c) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(c, 0.0, 1.0) * 255.0));
  };
  if (format == PlyFormat::Ascii) {
    out.precision(17);
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const auto& p = cloud.positions[i];
      out << p.x() << ' ' << p.y() << ' ' << p.z();
      if (cloud.has_normals()) {
        const auto& n = cloud.normals[i];
        out << ' ' << n.x() << ' ' << n.y() << ' ' << n.z();
      }
      if (cloud.has_colors()) {
        const auto& c = cloud.colors[i];
        out << ' ' << int(to_byte(c.x())) << ' ' << int(to_byte(c.y())) << ' ' << int(to_byte(c.z()));
      }
      out << '\n';
    }
  } else {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      out.write(reinterpret_cast<const char*>(cloud.positions[i].data()), 3 * sizeof(double));
      if (cloud.has_normals())
        out.write(reinterpret_cast<const char*>(cloud.normals[i].data()), 3 * sizeof(double));
      if (cloud.has_colors()) {
        const std::uint8_t rgb[3] = {to_byte(cloud.colors[i].x()), to_byte(cloud.colors[i].y()),
                                     to_byte(cloud.colors[i].z())};
        out.write(reinterpret_cast<const char*>(rgb), 3);
      }
    }
  }
  write_text(path, out.str());
}

namespace {

struct PngImage {
  int width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<std::uint8_t> data;  // raw rows, big-endian for 16 bit
};

PngImage read_png(const fs::path& path) {
  PngImage out;
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw input_error("png: cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw input_error("png: decode failure in " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  out.channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.data.resize(rowbytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int r = 0; r < out.height; ++r) rows[r] = out.data.data() + r * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return out;
}

void write_png(const fs::path& path, int width, int height, int channels, int bit_depth,
               const std::vector<std::uint8_t>& data) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw input_error("png: cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw input_error("png: encode failure for " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, width, height, bit_depth,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  for (int r = 0; r < height; ++r)
    png_write_row(png, const_cast<png_bytep>(data.data() + r * rowbytes));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace

std::vector<double> read_depth_png(const fs::path& path, double scale, int& width, int& height) {
  const PngImage img = read_png(path);
  if (img.channels != 1 || img.bit_depth != 16)
    throw input_error("png: depth image must be 16-bit single channel: " + path.string());
  width = img.width;
  height = img.height;
  std::vector<double> depth(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const unsigned raw = (unsigned(img.data[2 * i]) << 8) | img.data[2 * i + 1];
    depth[i] = raw / scale;
  }
  return depth;
}

void write_depth_png(const fs::path& path, const std::vector<double>& depth, int width,
                     int height, double scale) {
  if (depth.size() != static_cast<std::size_t>(width) * height)
    throw input_error("png: depth size mismatch");
  std::vector<std::uint8_t> data(depth.size() * 2);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const auto raw = static_cast<std::uint16_t>(std::clamp(std::lround(depth[i] * scale), 0L, 65535L));
    data[2 * i] = static_cast<std::uint8_t>(raw >> 8);
    data[2 * i + 1] = static_cast<std::uint8_t>(raw & 0xff);
  }
  write_png(path, width, height, 1, 16, data);
}

std::vector<Vec3> read_color_png(const fs::path& path, int& width, int& height) {
  const PngImage img = read_png(path);
  if (img.bit_depth != 8 || (img.channels != 3 && img.channels != 1))
    throw input_error("png: color image must be 8-bit RGB: " + path.string());
  width = img.width;
  height = img.height;
  std::vector<Vec3> color(static_cast<std::size_t>(width) * height);
  for (std::size_t i = 0; i < color.size(); ++i) {
    if (img.channels == 3)
      color[i] = Vec3(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]) / 255.0;
    else
      color[i] = Vec3::Constant(img.data[i] / 255.0);
  }
  return color;
}

void write_color_png(const fs::path& path, const std::vector<Vec3>& color, int width, int height) {
  if (color.size() != static_cast<std::size_t>(width) * height)
    throw input_error("png: color size mismatch");
  std::vector<std::uint8_t> data(color.size() * 3);
  for (std::size_t i = 0; i < color.size(); ++i)
    for (int c = 0; c < 3; ++c)
      data[3 * i + c] = static_cast<std::uint8_t>(std::lround(std::clamp(color[i][c], 0.0, 1.0) * 255.0));
  write_png(path, width, height, 3, 8, data);
}

CameraIntrinsics read_intrinsics_json(const fs::path& path) {
  try {
    const auto j = nlohmann::json::parse(read_text(path));
    CameraIntrinsics k;
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    k.validate();
    return k;
  } catch (const nlohmann::json::exception& e) {
    throw input_error("intrinsics " + path.string() + ": " + e.what());
  }
}

void write_intrinsics_json(const fs::path& path, const CameraIntrinsics& k) {
  const nlohmann::json j = {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx},
                            {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
  write_text(path, j.dump(2) + "\n");
}

RGBDFrame read_rgbd_frame(const fs::path& depth_png, const fs::path& color_png,
                          const CameraIntrinsics& intrinsics, double depth_scale) {
  RGBDFrame f;
  f.intrinsics = intrinsics;
  int w = 0, h = 0;
  f.depth = read_depth_png(depth_png, depth_scale, w, h);
  if (w != intrinsics.width || h != intrinsics.height)
    throw input_error("rgbd: depth image size differs from intrinsics: " + depth_png.string());
  if (!color_png.empty()) {
    f.color = read_color_png(color_png, w, h);
    if (w != intrinsics.width || h != intrinsics.height)
      throw input_error("rgbd: color image size differs from intrinsics: " + color_png.string());
  }
  return f;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw input_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw input_error("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw input_error("write failed for " + path.string());
  }
  fs::rename(tmp, path);
}

}  // namespace manipflow::io
