#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vxsplat/io/binary.hpp"
#include "vxsplat/voxel_map.hpp"

namespace vxsplat::io {

enum class PlyFormat { Ascii, BinaryLittleEndian };

struct PlyWriteOptions {
  PlyFormat format = PlyFormat::BinaryLittleEndian;
  /// Coordinates as double; false writes float.
  bool double_precision = true;
};

struct PlyCloud {
  std::vector<ColoredPoint> points;
  bool has_color = false;
};

namespace ply_detail {

enum class Scalar { I8, U8, I16, U16, I32, U32, F32, F64 };

inline std::optional<Scalar> scalar_from(std::string_view s) {
  if (s == "char" || s == "int8") return Scalar::I8;
  if (s == "uchar" || s == "uint8") return Scalar::U8;
  if (s == "short" || s == "int16") return Scalar::I16;
  if (s == "ushort" || s == "uint16") return Scalar::U16;
  if (s == "int" || s == "int32") return Scalar::I32;
  if (s == "uint" || s == "uint32") return Scalar::U32;
  if (s == "float" || s == "float32") return Scalar::F32;
  if (s == "double" || s == "float64") return Scalar::F64;
  return std::nullopt;
}

inline std::size_t scalar_size(Scalar s) {
  switch (s) {
    case Scalar::I8:
    case Scalar::U8:
      return 1;
    case Scalar::I16:
    case Scalar::U16:
      return 2;
    case Scalar::I32:
    case Scalar::U32:
    case Scalar::F32:
      return 4;
    case Scalar::F64:
      return 8;
  }
  return 0;
}

inline bool is_integer(Scalar s) { return s != Scalar::F32 && s != Scalar::F64; }

inline double decode(Scalar s, const char* p) {
  switch (s) {
    case Scalar::I8:
      return static_cast<std::int8_t>(*p);
    case Scalar::U8:
      return static_cast<std::uint8_t>(*p);
    case Scalar::I16:
      return get_le<std::int16_t>(p);
    case Scalar::U16:
      return get_le<std::uint16_t>(p);
    case Scalar::I32:
      return get_le<std::int32_t>(p);
    case Scalar::U32:
      return get_le<std::uint32_t>(p);
    case Scalar::F32:
      return get_le<float>(p);
    case Scalar::F64:
      return get_le<double>(p);
  }
  return 0.0;
}

struct Property {
  std::string name;
  Scalar type = Scalar::F32;
  bool is_list = false;
  Scalar count_type = Scalar::U8;
};

struct Element {
  std::string name;
  std::uint64_t count = 0;
  std::vector<Property> props;
};

struct Header {
  bool ascii = false;
  std::vector<Element> elements;
  std::size_t body = 0;
};

class Reader {
 public:
  Reader(std::string_view bytes, std::string name) : b_(bytes), name_(std::move(name)) {}

  [[noreturn]] void fail(std::uint64_t offset, const std::string& why) const {
    throw ParseError(name_, ParseError::Location::Offset, offset, why);
  }

  Header header() {
    Header h;
    bool have_format = false;
    std::size_t pos = 0;
    bool first = true;
    for (;;) {
      const std::size_t nl = b_.find('\n', pos);
      if (nl == std::string_view::npos) fail(pos, first ? "missing ply magic" : "header is not terminated by end_header");
      std::string_view line = b_.substr(pos, nl - pos);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      const std::size_t at = pos;
      pos = nl + 1;
      const auto tok = words(line);
      if (first) {
        if (tok.size() != 1 || tok[0] != "ply") fail(at, "missing ply magic");
        first = false;
        continue;
      }
      if (tok.empty()) continue;
      const std::string_view kw = tok[0];
      if (kw == "comment" || kw == "obj_info") continue;
      if (kw == "format") {
        if (tok.size() != 3) fail(at, "malformed format line");
        if (tok[1] == "ascii") h.ascii = true;
        else if (tok[1] == "binary_little_endian") h.ascii = false;
        else fail(at, "unsupported format '" + std::string(tok[1]) + "'");
        if (tok[2] != "1.0") fail(at, "unsupported version '" + std::string(tok[2]) + "'");
        have_format = true;
      } else if (kw == "element") {
        if (tok.size() != 3) fail(at, "malformed element line");
        Element e;
        e.name = tok[1];
        const auto [p, ec] = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), e.count);
        if (ec != std::errc() || p != tok[2].data() + tok[2].size()) fail(at, "bad element count");
        h.elements.push_back(std::move(e));
      } else if (kw == "property") {
        if (h.elements.empty()) fail(at, "property before any element");
        Property pr;
        if (tok.size() == 5 && tok[1] == "list") {
          const auto ct = scalar_from(tok[2]);
          const auto it = scalar_from(tok[3]);
          if (!ct || !it || !is_integer(*ct)) fail(at, "bad list property types");
          pr.is_list = true;
          pr.count_type = *ct;
          pr.type = *it;
          pr.name = tok[4];
        } else if (tok.size() == 3) {
          const auto t = scalar_from(tok[1]);
          if (!t) fail(at, "unknown property type '" + std::string(tok[1]) + "'");
          pr.type = *t;
          pr.name = tok[2];
        } else {
          fail(at, "malformed property line");
        }
        for (const auto& q : h.elements.back().props) {
          if (q.name == pr.name) fail(at, "duplicate property '" + pr.name + "'");
        }
        h.elements.back().props.push_back(pr);
      } else if (kw == "end_header") {
        if (tok.size() != 1) fail(at, "malformed end_header");
        if (!have_format) fail(at, "missing format line");
        h.body = pos;
        return h;
      } else {
        fail(at, "unknown header keyword '" + std::string(kw) + "'");
      }
    }
  }

  PlyCloud body(const Header& h) {
    const Element* vertex = nullptr;
    for (const auto& e : h.elements) {
      if (e.name == "vertex") vertex = &e;
    }
    if (!vertex) fail(h.body, "no vertex element");
    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
    for (int i = 0; i < static_cast<int>(vertex->props.size()); ++i) {
      const auto& p = vertex->props[i];
      if (p.is_list) continue;
      if (p.name == "x") ix = i;
      else if (p.name == "y") iy = i;
      else if (p.name == "z") iz = i;
      else if (p.name == "red") ir = i;
      else if (p.name == "green") ig = i;
      else if (p.name == "blue") ib = i;
    }
    if (ix < 0 || iy < 0 || iz < 0) fail(h.body, "vertex element lacks x, y or z");
    const int colors = (ir >= 0) + (ig >= 0) + (ib >= 0);
    if (colors != 0 && colors != 3) fail(h.body, "vertex element has a partial red/green/blue set");

    PlyCloud out;
    out.has_color = colors == 3;
    pos_ = h.body;
    std::vector<double> vals;
    for (const auto& e : h.elements) {
      const bool is_vertex = &e == vertex;
      if (!h.ascii && !is_vertex) {
        skip_binary(e);
        continue;
      }
      if (is_vertex) {
        // Guard the reservation against absurd counts.
        const std::uint64_t min_bytes = h.ascii ? 2 * e.props.size() : fixed_size(e);
        if (min_bytes > 0 && e.count > (b_.size() - std::min(b_.size(), pos_)) / min_bytes + 1) {
          fail(pos_, "vertex count " + std::to_string(e.count) + " exceeds the file size");
        }
        out.points.reserve(e.count);
      }
      for (std::uint64_t n = 0; n < e.count; ++n) {
        const std::size_t rec = pos_;
        vals.assign(e.props.size(), 0.0);
        for (std::size_t i = 0; i < e.props.size(); ++i) {
          const auto& p = e.props[i];
          if (p.is_list) {
            const double c = h.ascii ? ascii_value(p.count_type) : binary_value(p.count_type);
            if (c < 0) fail(pos_, "negative list length");
            for (std::uint64_t k = 0; k < static_cast<std::uint64_t>(c); ++k) {
              if (h.ascii) ascii_value(p.type);
              else binary_value(p.type);
            }
          } else {
            vals[i] = h.ascii ? ascii_value(p.type) : binary_value(p.type);
          }
        }
        if (!is_vertex) continue;
        ColoredPoint cp;
        cp.position = Vec3(vals[ix], vals[iy], vals[iz]);
        if (!all_finite(cp.position)) fail(rec, "non-finite vertex coordinate");
        if (out.has_color) {
          const std::array<int, 3> ci{ir, ig, ib};
          for (int c = 0; c < 3; ++c) {
            const auto& p = e.props[ci[c]];
            double v = vals[ci[c]];
            if (!std::isfinite(v)) fail(rec, "non-finite color");
            if (is_integer(p.type)) v /= 255.0;
            cp.color[c] = std::clamp(v, 0.0, 1.0);
          }
        }
        out.points.push_back(cp);
      }
      if (is_vertex) break;
    }
    return out;
  }

 private:
  static std::vector<std::string_view> words(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
      while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
      const std::size_t j = i;
      while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
      if (i > j) out.push_back(s.substr(j, i - j));
    }
    return out;
  }

  static std::uint64_t fixed_size(const Element& e) {
    std::uint64_t n = 0;
    for (const auto& p : e.props) n += p.is_list ? scalar_size(p.count_type) : scalar_size(p.type);
    return n;
  }

  void skip_binary(const Element& e) {
    bool has_list = false;
    for (const auto& p : e.props) has_list |= p.is_list;
    if (!has_list) {
      const std::uint64_t n = fixed_size(e);
      const std::uint64_t left = b_.size() - std::min(b_.size(), pos_);
      if (n > 0 && e.count > left / n) fail(pos_, "truncated data in element '" + e.name + "'");
      pos_ += static_cast<std::size_t>(e.count * n);
      return;
    }
    for (std::uint64_t i = 0; i < e.count; ++i) {
      for (const auto& p : e.props) {
        if (!p.is_list) {
          binary_value(p.type);
          continue;
        }
        const double c = binary_value(p.count_type);
        if (c < 0) fail(pos_, "negative list length");
        const std::uint64_t bytes = static_cast<std::uint64_t>(c) * scalar_size(p.type);
        if (bytes > b_.size() - std::min(b_.size(), pos_)) fail(pos_, "truncated list data");
        pos_ += static_cast<std::size_t>(bytes);
      }
    }
  }

  double binary_value(Scalar s) {
    const std::size_t n = scalar_size(s);
    if (pos_ + n > b_.size()) fail(pos_, "unexpected end of binary data");
    const double v = decode(s, b_.data() + pos_);
    pos_ += n;
    return v;
  }

  double ascii_value(Scalar s) {
    while (pos_ < b_.size() && std::isspace(static_cast<unsigned char>(b_[pos_]))) ++pos_;
    if (pos_ >= b_.size()) fail(pos_, "unexpected end of ascii data");
    const std::size_t start = pos_;
    while (pos_ < b_.size() && !std::isspace(static_cast<unsigned char>(b_[pos_]))) ++pos_;
    const std::string_view tok = b_.substr(start, pos_ - start);
    double v = 0.0;
    if (is_integer(s)) {
      long long i = 0;
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), i);
      if (ec != std::errc() || p != tok.data() + tok.size()) fail(start, "bad integer '" + std::string(tok) + "'");
      v = static_cast<double>(i);
    } else {
      const auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || p != tok.data() + tok.size()) fail(start, "bad number '" + std::string(tok) + "'");
    }
    return v;
  }

  std::string_view b_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline unsigned char color_byte(double c) {
  return static_cast<unsigned char>(std::lround(std::clamp(std::isfinite(c) ? c : 0.0, 0.0, 1.0) * 255.0));
}

}  // namespace ply_detail

inline PlyCloud parse_ply(std::string_view bytes, const std::string& name = "<ply>") {
  ply_detail::Reader r(bytes, name);
  const auto h = r.header();
  return r.body(h);
}

inline PlyCloud read_ply(const std::filesystem::path& path) { return parse_ply(read_file_bytes(path), path.string()); }

inline std::string format_ply(std::span<const ColoredPoint> points, const PlyWriteOptions& opt = {}) {
  const char* ctype = opt.double_precision ? "double" : "float";
  std::string out = "ply\n";
  out += opt.format == PlyFormat::Ascii ? "format ascii 1.0\n" : "format binary_little_endian 1.0\n";
  out += "element vertex " + std::to_string(points.size()) + "\n";
  for (const char* axis : {"x", "y", "z"}) out += std::string("property ") + ctype + " " + axis + "\n";
  out += "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char buf[160];
  for (const ColoredPoint& p : points) {
    const unsigned char r = ply_detail::color_byte(p.color.x());
    const unsigned char g = ply_detail::color_byte(p.color.y());
    const unsigned char b = ply_detail::color_byte(p.color.z());
    if (opt.format == PlyFormat::Ascii) {
      if (opt.double_precision) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g %u %u %u\n", p.position.x(), p.position.y(), p.position.z(),
                      r, g, b);
      } else {
        std::snprintf(buf, sizeof buf, "%.9g %.9g %.9g %u %u %u\n", static_cast<float>(p.position.x()),
                      static_cast<float>(p.position.y()), static_cast<float>(p.position.z()), r, g, b);
      }
      out += buf;
    } else {
      for (int k = 0; k < 3; ++k) {
        if (opt.double_precision) put_le<double>(out, p.position[k]);
        else put_le<float>(out, static_cast<float>(p.position[k]));
      }
      out += static_cast<char>(r);
      out += static_cast<char>(g);
      out += static_cast<char>(b);
    }
  }
  return out;
}

inline void write_ply(const std::filesystem::path& path, std::span<const ColoredPoint> points,
                      const PlyWriteOptions& opt = {}) {
  write_file_bytes(path, format_ply(points, opt));
}

}  // namespace vxsplat::io
