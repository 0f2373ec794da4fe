#pragma once

// Files: 3DGS-layout binary PLY scenes, camera JSON, 8-bit PNG/JPEG images and
// FLW1 flow fields.

#include "brushflow/flowfield.hpp"
#include "brushflow/gs_core.hpp"
#include "brushflow/image.hpp"

#include "json.hpp"

#include <jpeglib.h>
#include <png.h>

#include <array>
#include <bit>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace brushflow {

namespace fs = std::filesystem;

/// Unreadable, missing or malformed input.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kShC0 = 0.28209479177387814;

namespace detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

template <class T>
void append_raw(std::string& out, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  out.append(bytes, sizeof(T));
}

template <class T>
T read_raw(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// PLY

namespace ply {

inline const std::array<const char*, 17>& property_names() {
  static const std::array<const char*, 17> names = {
      "x",       "y",       "z",       "nx",      "ny",    "nz",    "f_dc_0", "f_dc_1", "f_dc_2",
      "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",  "rot_3"};
  return names;
}

inline std::size_t type_size(const std::string& type) {
  static const std::map<std::string, std::size_t> sizes = {
      {"char", 1},  {"uchar", 1},  {"int8", 1},  {"uint8", 1},   {"short", 2},   {"ushort", 2},
      {"int16", 2}, {"uint16", 2}, {"int", 4},   {"uint", 4},    {"int32", 4},   {"uint32", 4},
      {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
  const auto it = sizes.find(type);
  if (it == sizes.end()) throw IoError("PLY: unsupported property type '" + type + "'");
  return it->second;
}

inline double read_scalar(const std::string& type, const char* p) {
  if (type == "float" || type == "float32") return detail::read_raw<float>(p);
  if (type == "double" || type == "float64") return detail::read_raw<double>(p);
  if (type == "char" || type == "int8") return detail::read_raw<std::int8_t>(p);
  if (type == "uchar" || type == "uint8") return detail::read_raw<std::uint8_t>(p);
  if (type == "short" || type == "int16") return detail::read_raw<std::int16_t>(p);
  if (type == "ushort" || type == "uint16") return detail::read_raw<std::uint16_t>(p);
  if (type == "int" || type == "int32") return detail::read_raw<std::int32_t>(p);
  return detail::read_raw<std::uint32_t>(p);
}

// Stored float32 <-> in-memory field conversions. The encoders iterate to a
// fixed point of decode(encode(.)) so a file that was read back re-encodes to
// the same bytes.
inline double decode_color(float f_dc) { return std::clamp(0.5 + kShC0 * static_cast<double>(f_dc), 0.0, 1.0); }
inline float encode_color(double c) {
  float f = static_cast<float>((c - 0.5) / kShC0);
  for (int i = 0; i < 8; ++i) {
    const float again = static_cast<float>((decode_color(f) - 0.5) / kShC0);
    if (again == f) break;
    f = again;
  }
  return f;
}

inline Vec4 decode_rotation(const std::array<float, 4>& q) {
  const Vec4 v(q[0], q[1], q[2], q[3]);
  if (!(v.norm() > 0.0)) throw IoError("PLY: zero-norm rotation quaternion");
  return normalized_quaternion<double>(v);
}
/// float32 quaternion that decodes (normalises) to within float rounding of
/// q and re-encodes to itself. A plain cast can carry a norm error of a few
/// 1e-8, enough for repeated decode/encode cycles to drift, so the one-ulp
/// neighbourhood is searched for the closest self-consistent candidate.
inline std::array<float, 4> encode_rotation(const Vec4& q) {
  auto cast = [](const Vec4& v) {
    return std::array<float, 4>{static_cast<float>(v(0)), static_cast<float>(v(1)), static_cast<float>(v(2)),
                                static_cast<float>(v(3))};
  };
  auto stable = [&](const std::array<float, 4>& f) { return cast(decode_rotation(f)) == f; };
  const Vec4 unit = normalized_quaternion<double>(q);
  const std::array<float, 4> base = cast(unit);
  if (stable(base)) return base;
  std::optional<std::array<float, 4>> best;
  double best_error = std::numeric_limits<double>::infinity();
  for (int code = 0; code < 81; ++code) {
    std::array<float, 4> f = base;
    int c = code;
    for (int k = 0; k < 4; ++k, c /= 3) {
      const int step = c % 3 - 1;
      if (step != 0) f[k] = std::nextafter(f[k], step > 0 ? 2.0f : -2.0f);
    }
    if (!stable(f)) continue;
    const double error = (decode_rotation(f) - unit).cwiseAbs().maxCoeff();
    if (error < best_error) {
      best_error = error;
      best = f;
    }
  }
  return best ? *best : base;
}

}  // namespace ply

/// Reads a binary little-endian 3DGS PLY. Extra vertex properties (normals,
/// higher-order SH) are skipped; colors come from the DC coefficients only.
inline Scene decode_ply(const std::string& bytes, const std::string& source = "PLY data") {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string::npos) throw IoError("PLY: truncated header in " + source);
    std::string line = bytes.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  if (next_line() != "ply") throw IoError("PLY: missing magic in " + source);

  struct Property {
    std::string name, type;
    std::size_t offset;
  };
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> properties;
    std::size_t stride = 0;
    bool has_list = false;
  };
  std::vector<Element> elements;
  bool binary_le = false;
  for (;;) {
    const std::string line = next_line();
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") break;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "binary_little_endian")
        throw IoError("PLY: unsupported format '" + fmt + "' (only binary_little_endian is read)");
      binary_le = true;
    } else if (word == "element") {
      Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (word == "property") {
      if (elements.empty()) throw IoError("PLY: property before element");
      std::string type, name;
      ls >> type;
      if (type == "list") {
        elements.back().has_list = true;
        continue;
      }
      ls >> name;
      Element& e = elements.back();
      e.properties.push_back({name, type, e.stride});
      e.stride += ply::type_size(type);
    } else if (word != "comment" && word != "obj_info" && !word.empty()) {
      throw IoError("PLY: unexpected header line '" + line + "'");
    }
  }
  if (!binary_le) throw IoError("PLY: missing format line");

  std::size_t data = pos;
  for (const Element& e : elements) {
    if (e.name != "vertex") {
      if (e.has_list) break;  // cannot skip variable-size records; vertex must precede
      data += e.count * e.stride;
      continue;
    }
    if (e.has_list) throw IoError("PLY: list properties on vertex are not supported");
    std::map<std::string, const Property*> by_name;
    for (const auto& p : e.properties) by_name[p.name] = &p;
    std::vector<const Property*> required;
    for (const char* name : ply::property_names()) {
      const std::string n(name);
      if (n == "nx" || n == "ny" || n == "nz") {
        required.push_back(nullptr);
        continue;
      }
      const auto it = by_name.find(n);
      if (it == by_name.end()) throw IoError("PLY: missing vertex property '" + n + "'");
      required.push_back(it->second);
    }
    if (bytes.size() < data + e.count * e.stride) throw IoError("PLY: truncated vertex data in " + source);
    Scene scene;
    scene.reserve(e.count);
    for (std::size_t v = 0; v < e.count; ++v) {
      const char* rec = bytes.data() + data + v * e.stride;
      std::array<double, 17> f{};
      for (std::size_t k = 0; k < required.size(); ++k)
        if (required[k]) {
          f[k] = ply::read_scalar(required[k]->type, rec + required[k]->offset);
          if (!std::isfinite(f[k]))
            throw IoError("PLY: non-finite '" + required[k]->name + "' in vertex " + std::to_string(v));
        }
      GaussianPrimitive g;
      g.mean = Vec3(f[0], f[1], f[2]);
      for (int c = 0; c < 3; ++c) g.color(c) = ply::decode_color(static_cast<float>(f[6 + c]));
      g.opacity_logit = std::clamp(f[9], -kMaxOpacityLogit, kMaxOpacityLogit);
      g.log_scale = Vec3(f[10], f[11], f[12]);
      g.rotation = ply::decode_rotation({static_cast<float>(f[13]), static_cast<float>(f[14]),
                                         static_cast<float>(f[15]), static_cast<float>(f[16])});
      sort_axes(g);
      scene.push_back(g);
    }
    return scene;
  }
  throw IoError("PLY: no vertex element in " + source);
}

inline Scene read_ply(const fs::path& path) { return decode_ply(detail::read_file(path), path.string()); }

inline std::string encode_ply(const Scene& scene) {
  std::string out = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(scene.size()) + "\n";
  for (const char* name : ply::property_names()) out += std::string("property float ") + name + "\n";
  out += "end_header\n";
  for (GaussianPrimitive g : scene) {
    sort_axes(g);
    for (int k = 0; k < 3; ++k) detail::append_raw(out, static_cast<float>(g.mean(k)));
    for (int k = 0; k < 3; ++k) detail::append_raw(out, 0.0f);
    for (int k = 0; k < 3; ++k) detail::append_raw(out, ply::encode_color(g.color(k)));
    detail::append_raw(out, static_cast<float>(std::clamp(g.opacity_logit, -kMaxOpacityLogit, kMaxOpacityLogit)));
    for (int k = 0; k < 3; ++k) detail::append_raw(out, static_cast<float>(g.log_scale(k)));
    for (const float q : ply::encode_rotation(g.rotation)) detail::append_raw(out, q);
  }
  return out;
}

inline void write_ply(const fs::path& path, const Scene& scene) { detail::write_file(path, encode_ply(scene)); }

/// The scene exactly as it reads back after write_ply.
inline Scene quantize_like_ply(const Scene& scene) { return decode_ply(encode_ply(scene)); }

// ---------------------------------------------------------------------------
// Cameras

inline constexpr double kMaxCameraOrthoResidual = 1e-3;

inline Camera camera_from_json(const nlohmann::json& j) {
  try {
    Camera cam;
    cam.name = j.at("name").get<std::string>();
    cam.width = j.at("width").get<int>();
    cam.height = j.at("height").get<int>();
    cam.focal = Vec2(j.at("fx").get<double>(), j.at("fy").get<double>());
    cam.principal_point = Vec2(j.at("cx").get<double>(), j.at("cy").get<double>());
    const auto r = j.at("rotation").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) throw IoError("camera '" + cam.name + "': rotation needs 9 and translation 3 values");
    for (int i = 0; i < 9; ++i) cam.rotation(i / 3, i % 3) = r[i];
    cam.translation = Vec3(t[0], t[1], t[2]);
    if (j.contains("z_near")) cam.z_near = j.at("z_near").get<double>();
    const double residual = cam.orthonormality_residual();
    if (!(residual <= kMaxCameraOrthoResidual))
      throw IoError("camera '" + cam.name + "': rotation is not orthonormal (residual " + std::to_string(residual) + ")");
    // Polar decomposition: nearest orthonormal matrix.
    const Eigen::JacobiSVD<Mat3> svd(cam.rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
    cam.rotation = svd.matrixU() * svd.matrixV().transpose();
    cam.validate();
    return cam;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("camera JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("camera JSON: ") + e.what());
  }
}

inline nlohmann::json camera_to_json(const Camera& cam) {
  std::vector<double> r(9);
  for (int i = 0; i < 9; ++i) r[i] = cam.rotation(i / 3, i % 3);
  return {{"name", cam.name},
          {"width", cam.width},
          {"height", cam.height},
          {"fx", cam.focal(0)},
          {"fy", cam.focal(1)},
          {"cx", cam.principal_point(0)},
          {"cy", cam.principal_point(1)},
          {"rotation", r},
          {"translation", {cam.translation(0), cam.translation(1), cam.translation(2)}}};
}

inline std::vector<Camera> read_cameras(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("cameras " + path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw IoError("cameras " + path.string() + ": expected a JSON array");
  std::vector<Camera> cams;
  for (const auto& c : j) cams.push_back(camera_from_json(c));
  return cams;
}

inline void write_cameras(const fs::path& path, const std::vector<Camera>& cams) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : cams) j.push_back(camera_to_json(c));
  detail::write_file(path, j.dump(2) + "\n");
}

/// 1.1 x the largest camera-center distance from their centroid, as in
/// common 3DGS practice; falls back to the scene's bounding radius.
inline double scene_extent(const std::vector<Camera>& cams, const Scene& scene) {
  double radius = 0.0;
  if (!cams.empty()) {
    Vec3 centroid = Vec3::Zero();
    for (const auto& c : cams) centroid += c.center();
    centroid /= static_cast<double>(cams.size());
    for (const auto& c : cams) radius = std::max(radius, (c.center() - centroid).norm());
  }
  if (radius <= 0.0 && !scene.empty()) {
    Vec3 centroid = Vec3::Zero();
    for (const auto& g : scene) centroid += g.mean;
    centroid /= static_cast<double>(scene.size());
    for (const auto& g : scene) radius = std::max(radius, (g.mean - centroid).norm());
  }
  return radius > 0.0 ? 1.1 * radius : 1.0;
}

// ---------------------------------------------------------------------------
// Images

inline Image read_png(const fs::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.string().c_str()))
    throw IoError("cannot read PNG " + path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&png);
    throw IoError("cannot decode PNG " + path.string() + ": " + png.message);
  }
  Image img(static_cast<int>(png.width), static_cast<int>(png.height), 3);
  for (std::size_t i = 0; i < buf.size(); ++i) img.data()[i] = buf[i] / 255.0;
  return img;
}

inline Image read_jpeg(const fs::path& path) {
  FILE* file = std::fopen(path.string().c_str(), "rb");
  if (!file) throw IoError("cannot open " + path.string());
  jpeg_decompress_struct cinfo{};
  struct ErrorManager {
    jpeg_error_mgr base;
    char message[JMSG_LENGTH_MAX];
  } err{};
  cinfo.err = jpeg_std_error(&err.base);
  // libjpeg reports errors through a callback that must not return; throwing
  // from it is the usual C++ route.
  err.base.error_exit = [](j_common_ptr info) {
    char msg[JMSG_LENGTH_MAX];
    (*info->err->format_message)(info, msg);
    throw IoError(std::string("JPEG: ") + msg);
  };
  Image img;
  try {
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file);
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    img = Image(static_cast<int>(cinfo.output_width), static_cast<int>(cinfo.output_height), 3);
    std::vector<unsigned char> row(cinfo.output_width * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
      JSAMPROW rows[1] = {row.data()};
      const int y = static_cast<int>(cinfo.output_scanline);
      jpeg_read_scanlines(&cinfo, rows, 1);
      for (std::size_t i = 0; i < row.size(); ++i) img.data()[y * row.size() + i] = row[i] / 255.0;
    }
    jpeg_finish_decompress(&cinfo);
  } catch (...) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(file);
    throw;
  }
  jpeg_destroy_decompress(&cinfo);
  std::fclose(file);
  return img;
}

/// PNG or JPEG, by content.
inline Image read_image(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path.string());
  unsigned char magic[4] = {};
  in.read(reinterpret_cast<char*>(magic), 4);
  if (magic[0] == 0x89 && magic[1] == 'P' && magic[2] == 'N' && magic[3] == 'G') return read_png(path);
  if (magic[0] == 0xFF && magic[1] == 0xD8) return read_jpeg(path);
  throw IoError("unrecognised image format: " + path.string());
}

inline unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// 8-bit PNG of a 1- or 3-channel image; values clamped to [0,1].
inline void write_png(const fs::path& path, const Image& img) {
  if (img.channels() != 1 && img.channels() != 3) throw std::invalid_argument("write_png: 1 or 3 channels");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::vector<unsigned char> buf(img.data().size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = to_byte(img.data()[i]);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width());
  png.height = static_cast<png_uint_32>(img.height());
  png.format = img.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + png.message);
}

// ---------------------------------------------------------------------------
// Flow fields

inline void write_flow(const fs::path& path, const FlowField& flow) {
  std::string out = "FLW1";
  detail::append_raw(out, static_cast<std::uint32_t>(flow.width()));
  detail::append_raw(out, static_cast<std::uint32_t>(flow.height()));
  detail::append_raw(out, std::uint32_t{0});
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      detail::append_raw(out, static_cast<float>(flow.orientation(x, y)(0)));
      detail::append_raw(out, static_cast<float>(flow.orientation(x, y)(1)));
      detail::append_raw(out, static_cast<float>(flow.coherence(x, y)));
    }
  detail::write_file(path, out);
}

/// Orientations are renormalised after the float32 round trip.
inline FlowField read_flow(const fs::path& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 16 || bytes.compare(0, 4, "FLW1") != 0) throw IoError("not an FLW1 file: " + path.string());
  const auto w = detail::read_raw<std::uint32_t>(bytes.data() + 4);
  const auto h = detail::read_raw<std::uint32_t>(bytes.data() + 8);
  if (bytes.size() != 16 + std::size_t{w} * h * 12) throw IoError("FLW1 size mismatch: " + path.string());
  FlowField flow(static_cast<int>(w), static_cast<int>(h));
  const char* p = bytes.data() + 16;
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x, p += 12) {
      const Vec2 v(detail::read_raw<float>(p), detail::read_raw<float>(p + 4));
      const double n = v.norm();
      flow.orientation(x, y) = n > 0.0 ? Vec2(v / n) : Vec2::Zero();
      flow.coherence(x, y) = std::clamp(static_cast<double>(detail::read_raw<float>(p + 8)), 0.0, 1.0);
      if (n == 0.0) flow.coherence(x, y) = 0.0;
    }
  return flow;
}

/// hue = orientation angle mod 180 (mapped to the full hue circle),
/// saturation = coherence, value = 1.
inline Image flow_visualization(const FlowField& flow) {
  Image img(flow.width(), flow.height(), 3);
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      const Vec2& v = flow.orientation(x, y);
      const double hue = v.isZero(0.0) ? 0.0 : orientation_degrees(v) * 2.0;  // [0, 360)
      const double s = flow.coherence(x, y);
      const double h6 = hue / 60.0;
      const double f = h6 - std::floor(h6);
      const double p = 1.0 - s, q = 1.0 - s * f, t = 1.0 - s * (1.0 - f);
      Vec3 rgb;
      switch (static_cast<int>(h6) % 6) {
        case 0: rgb = {1, t, p}; break;
        case 1: rgb = {q, 1, p}; break;
        case 2: rgb = {p, 1, t}; break;
        case 3: rgb = {p, q, 1}; break;
        case 4: rgb = {t, p, 1}; break;
        default: rgb = {1, p, q}; break;
      }
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = rgb(c);
    }
  return img;
}

}  // namespace brushflow
