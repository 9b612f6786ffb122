#pragma once

#include "msreg/cloud.hpp"

#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>

namespace msreg {

enum class CloudFormat { ply_ascii, ply_binary_le, xyz_text };

/// Malformed input; the message names the offending line or byte offset.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline CloudFormat format_from_path(const std::string& path) {
  auto ends_with = [&](std::string_view s) {
    return path.size() >= s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0;
  };
  if (ends_with(".xyz") || ends_with(".txt")) return CloudFormat::xyz_text;
  if (ends_with(".ply")) return CloudFormat::ply_binary_le;
  throw std::invalid_argument("cannot infer cloud format from '" + path + "'");
}

namespace detail {

inline bool parse_double(std::string_view tok, double& out) {
  // from_chars rejects a leading '+', strtod accepts "nan"/"inf"; both are
  // caught by the finiteness check below.
  if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> toks;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) toks.push_back(line.substr(i, j - i));
    i = j;
  }
  return toks;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Vec3 checked_point(double x, double y, double z, const std::string& where) {
  Vec3 p(x, y, z);
  if (!p.allFinite()) throw ParseError("non-finite coordinate at " + where);
  return p;
}

struct PlyProperty {
  std::string name;
  std::string type;
  size_t size = 0;
  bool is_list = false;
};

inline size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "float" || t == "int32" || t == "uint32" || t == "float32") return 4;
  if (t == "double" || t == "float64") return 8;
  return 0;
}

template <typename T>
T read_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    auto* b = reinterpret_cast<unsigned char*>(&v);
    std::reverse(b, b + sizeof(T));
  }
  return v;
}

inline double read_scalar(const char* p, const std::string& t) {
  if (t == "float" || t == "float32") return read_le<float>(p);
  if (t == "double" || t == "float64") return read_le<double>(p);
  if (t == "char" || t == "int8") return read_le<int8_t>(p);
  if (t == "uchar" || t == "uint8") return read_le<uint8_t>(p);
  if (t == "short" || t == "int16") return read_le<int16_t>(p);
  if (t == "ushort" || t == "uint16") return read_le<uint16_t>(p);
  if (t == "int" || t == "int32") return read_le<int32_t>(p);
  return read_le<uint32_t>(p);
}

inline PointCloud load_ply(const std::string& data, std::optional<CloudFormat> expected) {
  size_t pos = 0;
  size_t line_no = 0;
  auto next_line = [&]() -> std::string_view {
    if (pos >= data.size()) throw ParseError("unexpected end of PLY header at line " + std::to_string(line_no + 1));
    size_t end = data.find('\n', pos);
    if (end == std::string::npos) end = data.size();
    std::string_view line(data.data() + pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return line;
  };
  if (next_line() != "ply") throw ParseError("missing 'ply' magic at line 1");

  std::string format;
  size_t vertex_count = 0;
  bool have_vertex = false;
  // Elements before the vertex element are not supported; ones after are ignored.
  std::string current;
  std::vector<PlyProperty> props;
  for (;;) {
    auto toks = split_ws(next_line());
    if (toks.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (toks[0] == "end_header") break;
    if (toks[0] == "comment" || toks[0] == "obj_info") continue;
    if (toks[0] == "format") {
      if (toks.size() < 3) throw ParseError("malformed format at " + where);
      format = std::string(toks[1]);
      if (format != "ascii" && format != "binary_little_endian")
        throw ParseError("unsupported PLY format '" + format + "' at " + where);
    } else if (toks[0] == "element") {
      if (toks.size() != 3) throw ParseError("malformed element at " + where);
      current = std::string(toks[1]);
      if (current == "vertex") {
        if (have_vertex) throw ParseError("duplicate vertex element at " + where);
        size_t n = 0;
        auto r = std::from_chars(toks[2].data(), toks[2].data() + toks[2].size(), n);
        if (r.ec != std::errc() || r.ptr != toks[2].data() + toks[2].size())
          throw ParseError("bad vertex count at " + where);
        vertex_count = n;
        have_vertex = true;
      } else if (!have_vertex) {
        throw ParseError("element '" + current + "' before vertex is not supported at " + where);
      }
    } else if (toks[0] == "property") {
      if (current != "vertex") continue;
      PlyProperty p;
      if (toks.size() >= 2 && toks[1] == "list") {
        if (toks.size() != 5) throw ParseError("malformed list property at " + where);
        p.is_list = true;
        p.type = std::string(toks[3]);
        p.name = std::string(toks[4]);
      } else {
        if (toks.size() != 3) throw ParseError("malformed property at " + where);
        p.type = std::string(toks[1]);
        p.name = std::string(toks[2]);
        p.size = ply_type_size(p.type);
        if (p.size == 0) throw ParseError("unknown property type '" + p.type + "' at " + where);
      }
      props.push_back(p);
    } else {
      throw ParseError("unexpected header keyword '" + std::string(toks[0]) + "' at " + where);
    }
  }
  if (format.empty()) throw ParseError("PLY header has no format line");
  if (!have_vertex) throw ParseError("PLY header has no vertex element");
  const bool binary = format == "binary_little_endian";
  if (expected) {
    if (*expected == CloudFormat::ply_ascii && binary) throw ParseError("expected ascii PLY, found binary");
    if (*expected == CloudFormat::ply_binary_le && !binary) throw ParseError("expected binary PLY, found ascii");
  }
  int ix = -1, iy = -1, iz = -1;
  for (size_t k = 0; k < props.size(); ++k) {
    if (props[k].is_list) continue;
    if (props[k].name == "x") ix = static_cast<int>(k);
    if (props[k].name == "y") iy = static_cast<int>(k);
    if (props[k].name == "z") iz = static_cast<int>(k);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw ParseError("PLY vertex element lacks x/y/z properties");

  PointCloud cloud;
  cloud.points.reserve(std::min(vertex_count, data.size()));
  if (!binary) {
    std::vector<double> vals(props.size());
    for (size_t i = 0; i < vertex_count; ++i) {
      if (pos >= data.size())
        throw ParseError("expected " + std::to_string(vertex_count) + " vertices, file ends at line " +
                         std::to_string(line_no + 1));
      auto line = next_line();
      const std::string where = "line " + std::to_string(line_no);
      auto toks = split_ws(line);
      size_t t = 0;
      for (size_t k = 0; k < props.size(); ++k) {
        if (props[k].is_list) {
          double n = 0;
          if (t >= toks.size() || !parse_double(toks[t++], n)) throw ParseError("bad list count at " + where);
          t += static_cast<size_t>(n);
          continue;
        }
        if (t >= toks.size()) throw ParseError("too few values at " + where);
        if (!parse_double(toks[t], vals[k])) {
          // Accept textual nan/inf so the finiteness check can report them.
          std::string s(toks[t]);
          char* end = nullptr;
          vals[k] = std::strtod(s.c_str(), &end);
          if (end == s.c_str() || *end != '\0') throw ParseError("bad number '" + s + "' at " + where);
        }
        ++t;
      }
      cloud.points.push_back(checked_point(vals[ix], vals[iy], vals[iz], where));
    }
  } else {
    bool fixed = std::none_of(props.begin(), props.end(), [](const PlyProperty& p) { return p.is_list; });
    size_t stride = 0;
    for (const auto& p : props) stride += p.size;
    for (size_t i = 0; i < vertex_count; ++i) {
      const size_t start = pos;
      if (fixed && pos + stride > data.size())
        throw ParseError("truncated binary vertex data at byte " + std::to_string(pos) + " (vertex " +
                         std::to_string(i) + " of " + std::to_string(vertex_count) + ")");
      double v[3] = {0, 0, 0};
      for (size_t k = 0; k < props.size(); ++k) {
        const auto& p = props[k];
        if (p.is_list) {
          size_t cs = 1;  // list count types are uchar in practice
          if (pos + cs > data.size()) throw ParseError("truncated list at byte " + std::to_string(pos));
          size_t n = static_cast<uint8_t>(data[pos]);
          pos += cs + n * ply_type_size(p.type);
          continue;
        }
        if (pos + p.size > data.size()) throw ParseError("truncated binary vertex data at byte " + std::to_string(pos));
        double val = read_scalar(data.data() + pos, p.type);
        if (static_cast<int>(k) == ix) v[0] = val;
        if (static_cast<int>(k) == iy) v[1] = val;
        if (static_cast<int>(k) == iz) v[2] = val;
        pos += p.size;
      }
      cloud.points.push_back(checked_point(v[0], v[1], v[2], "byte " + std::to_string(start)));
    }
  }
  return cloud;
}

inline PointCloud load_xyz(const std::string& data) {
  PointCloud cloud;
  size_t pos = 0;
  size_t line_no = 0;
  while (pos < data.size()) {
    size_t end = data.find('\n', pos);
    if (end == std::string::npos) end = data.size();
    std::string_view line(data.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    if (toks.size() < 3) throw ParseError("expected 'x y z' at " + where);
    double v[3];
    for (int k = 0; k < 3; ++k) {
      std::string s(toks[k]);
      char* e = nullptr;
      v[k] = std::strtod(s.c_str(), &e);
      if (e == s.c_str() || *e != '\0') throw ParseError("bad number '" + s + "' at " + where);
    }
    cloud.points.push_back(checked_point(v[0], v[1], v[2], where));
  }
  return cloud;
}

}  // namespace detail

inline PointCloud load_cloud(const std::string& path, CloudFormat format) {
  std::string data = detail::read_file(path);
  try {
    if (format == CloudFormat::xyz_text) return detail::load_xyz(data);
    return detail::load_ply(data, format);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

/// Loads PLY (ascii or binary, detected from the header) or XYZ by extension.
inline PointCloud load_cloud(const std::string& path) {
  std::string data = detail::read_file(path);
  try {
    if (format_from_path(path) == CloudFormat::xyz_text) return detail::load_xyz(data);
    return detail::load_ply(data, std::nullopt);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

/// Binary PLY stores float64 coordinates so a round trip is bit-exact; text
/// formats use 17 significant digits.
inline void save_cloud(const PointCloud& cloud, const std::string& path, CloudFormat format) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  if (format == CloudFormat::xyz_text) {
    out << std::setprecision(17);
    for (const auto& p : cloud.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  } else {
    const bool binary = format == CloudFormat::ply_binary_le;
    out << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
        << "element vertex " << cloud.size() << "\n"
        << "property double x\nproperty double y\nproperty double z\nend_header\n";
    if (binary) {
      std::vector<char> buf(cloud.size() * 24);
      for (size_t i = 0; i < cloud.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
          double v = cloud.points[i][k];
          if constexpr (std::endian::native == std::endian::big) {
            auto* b = reinterpret_cast<unsigned char*>(&v);
            std::reverse(b, b + 8);
          }
          std::memcpy(buf.data() + i * 24 + k * 8, &v, 8);
        }
      }
      out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    } else {
      out << std::setprecision(17);
      for (const auto& p : cloud.points) out << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    }
  }
  out.flush();
  if (!out) throw IoError("write failed for '" + path + "'");
}

}  // namespace msreg
