#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "glyphstyle/core/tensor.hpp"

namespace glyphstyle {

/// Raised for unreadable or unsupported font files.
struct FontError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Minimal TrueType reader: sfnt directory, head/maxp, cmap formats 0/4/6/12,
// loca, and glyf with simple and composite glyphs. Quadratic contours are
// flattened to polylines in font units (y-up). Hinting, kerning and CFF
// outlines are out of scope; 'OTTO' files are rejected up front.
// ---------------------------------------------------------------------------

class TtfFont {
 public:
  struct Outline {
    // closed contours, each a polyline of (x, y) in font units
    std::vector<std::vector<std::array<double, 2>>> contours;
    bool empty() const {
      for (const auto& c : contours)
        if (c.size() >= 3) return false;
      return true;
    }
  };

  static TtfFont load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is.good()) throw FontError("cannot open font file: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    if (bytes.empty()) throw FontError("empty font file: " + path.string());
    return TtfFont(std::move(bytes), path.string());
  }

  explicit TtfFont(std::vector<std::uint8_t> bytes, std::string origin = "<memory>")
      : data_(std::move(bytes)), origin_(std::move(origin)) {
    parse_directory();
    parse_head();
    parse_maxp();
    parse_cmap();
    parse_loca();
  }

  int units_per_em() const { return units_per_em_; }
  int glyph_count() const { return num_glyphs_; }

  /// 0 means "not mapped" (the .notdef glyph).
  std::uint16_t glyph_index(char32_t cp) const {
    auto it = cmap_.find(static_cast<std::uint32_t>(cp));
    return it == cmap_.end() ? 0 : it->second;
  }

  bool has_glyph(char32_t cp) const { return glyph_index(cp) != 0; }

  Outline glyph_outline(std::uint16_t gid) const {
    Outline out;
    append_glyph(gid, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0, out);
    return out;
  }

 private:
  // --- byte access -------------------------------------------------------
  std::uint8_t u8(std::size_t off) const {
    if (off >= data_.size()) throw FontError("font out of bounds: " + origin_);
    return data_[off];
  }
  std::uint16_t u16(std::size_t off) const {
    return static_cast<std::uint16_t>((u8(off) << 8) | u8(off + 1));
  }
  std::int16_t i16(std::size_t off) const { return static_cast<std::int16_t>(u16(off)); }
  std::uint32_t u32(std::size_t off) const {
    return (static_cast<std::uint32_t>(u16(off)) << 16) | u16(off + 2);
  }

  std::size_t table(const char* tag) const {
    auto it = tables_.find(tag);
    if (it == tables_.end()) throw FontError(std::string("font missing table ") + tag +
                                             ": " + origin_);
    return it->second.first;
  }
  bool has_table(const char* tag) const { return tables_.count(tag) != 0; }

  // --- parsing -----------------------------------------------------------
  void parse_directory() {
    const std::uint32_t ver = u32(0);
    if (ver == 0x4f54544f)  // 'OTTO'
      throw FontError("CFF-outline OpenType fonts are not supported: " + origin_);
    if (ver != 0x00010000 && ver != 0x74727565)  // 1.0 or 'true'
      throw FontError("not a TrueType font: " + origin_);
    const int num_tables = u16(4);
    for (int i = 0; i < num_tables; ++i) {
      const std::size_t rec = 12 + static_cast<std::size_t>(i) * 16;
      std::string tag;
      for (int j = 0; j < 4; ++j) tag.push_back(static_cast<char>(u8(rec + j)));
      tables_[tag] = {u32(rec + 8), u32(rec + 12)};
    }
  }

  void parse_head() {
    const std::size_t head = table("head");
    units_per_em_ = u16(head + 18);
    if (units_per_em_ <= 0) throw FontError("bad unitsPerEm: " + origin_);
    index_to_loc_long_ = i16(head + 50) != 0;
  }

  void parse_maxp() { num_glyphs_ = u16(table("maxp") + 4); }

  void parse_cmap() {
    const std::size_t cmap = table("cmap");
    const int n = u16(cmap + 2);
    std::size_t best = 0;
    int best_score = -1;
    for (int i = 0; i < n; ++i) {
      const std::size_t rec = cmap + 4 + static_cast<std::size_t>(i) * 8;
      const int platform = u16(rec), encoding = u16(rec + 2);
      const std::size_t sub = cmap + u32(rec + 4);
      const int format = u16(sub);
      int score = -1;
      if (platform == 3 && encoding == 10 && format == 12) score = 5;
      else if (platform == 0 && format == 12) score = 4;
      else if (platform == 3 && encoding == 1 && format == 4) score = 3;
      else if (platform == 0 && format == 4) score = 2;
      else if (format == 4 || format == 12 || format == 6 || format == 0) score = 1;
      if (score > best_score) {
        best_score = score;
        best = sub;
      }
    }
    if (best_score < 0) throw FontError("no usable cmap subtable: " + origin_);
    read_cmap_subtable(best);
    if (cmap_.empty()) throw FontError("cmap maps no characters: " + origin_);
  }

  void read_cmap_subtable(std::size_t sub) {
    const int format = u16(sub);
    if (format == 0) {
      for (std::uint32_t c = 0; c < 256; ++c) {
        std::uint8_t g = u8(sub + 6 + c);
        if (g) cmap_[c] = g;
      }
    } else if (format == 4) {
      const int segx2 = u16(sub + 6);
      const std::size_t ends = sub + 14;
      const std::size_t starts = ends + segx2 + 2;
      const std::size_t deltas = starts + segx2;
      const std::size_t ranges = deltas + segx2;
      for (int s = 0; s < segx2; s += 2) {
        const std::uint16_t end = u16(ends + s), start = u16(starts + s);
        const std::int16_t delta = i16(deltas + s);
        const std::uint16_t range_off = u16(ranges + s);
        if (start == 0xffff) continue;
        for (std::uint32_t c = start; c <= end && c != 0x10000; ++c) {
          std::uint16_t g;
          if (range_off == 0) {
            g = static_cast<std::uint16_t>(c + delta);
          } else {
            const std::size_t addr = ranges + s + range_off + 2 * (c - start);
            g = u16(addr);
            if (g != 0) g = static_cast<std::uint16_t>(g + delta);
          }
          if (g) cmap_[c] = g;
        }
      }
    } else if (format == 6) {
      const std::uint16_t first = u16(sub + 6), count = u16(sub + 8);
      for (std::uint16_t i = 0; i < count; ++i) {
        std::uint16_t g = u16(sub + 10 + 2 * static_cast<std::size_t>(i));
        if (g) cmap_[first + i] = g;
      }
    } else if (format == 12) {
      const std::uint32_t groups = u32(sub + 12);
      for (std::uint32_t i = 0; i < groups; ++i) {
        const std::size_t rec = sub + 16 + static_cast<std::size_t>(i) * 12;
        const std::uint32_t start = u32(rec), end = u32(rec + 4), gid = u32(rec + 8);
        for (std::uint32_t c = start; c <= end; ++c) {
          const std::uint32_t g = gid + (c - start);
          if (g && g < static_cast<std::uint32_t>(num_glyphs_))
            cmap_[c] = static_cast<std::uint16_t>(g);
        }
      }
    } else {
      throw FontError("unsupported cmap format " + std::to_string(format) + ": " + origin_);
    }
  }

  void parse_loca() {
    const std::size_t loca = table("loca");
    loca_.resize(static_cast<std::size_t>(num_glyphs_) + 1);
    for (int i = 0; i <= num_glyphs_; ++i) {
      loca_[static_cast<std::size_t>(i)] =
          index_to_loc_long_ ? u32(loca + 4 * static_cast<std::size_t>(i))
                             : 2u * u16(loca + 2 * static_cast<std::size_t>(i));
    }
  }

  // --- glyph outlines ----------------------------------------------------
  struct GlyphPoint {
    double x, y;
    bool on_curve;
  };

  void append_glyph(std::uint16_t gid, double a, double b, double c, double d, double e,
                    double f, int depth, Outline& out) const {
    if (depth > 5) throw FontError("composite glyph nesting too deep: " + origin_);
    if (gid >= num_glyphs_) throw FontError("glyph index out of range: " + origin_);
    const std::uint32_t off = loca_[gid], end = loca_[gid + 1];
    if (off == end) return;  // empty glyph (e.g. space)
    const std::size_t glyf = table("glyf") + off;
    const int ncont = i16(glyf);
    if (ncont >= 0)
      append_simple(glyf, ncont, a, b, c, d, e, f, out);
    else
      append_composite(glyf, a, b, c, d, e, f, depth, out);
  }

  void append_simple(std::size_t glyf, int ncont, double a, double b, double c, double d,
                     double e, double f, Outline& out) const {
    std::vector<int> ends(static_cast<std::size_t>(ncont));
    for (int i = 0; i < ncont; ++i) ends[static_cast<std::size_t>(i)] = u16(glyf + 10 + 2 * static_cast<std::size_t>(i));
    const int npts = ncont ? ends.back() + 1 : 0;
    std::size_t p = glyf + 10 + 2 * static_cast<std::size_t>(ncont);
    const int instr = u16(p);
    p += 2 + static_cast<std::size_t>(instr);

    // flags with repeat encoding
    std::vector<std::uint8_t> flags;
    flags.reserve(static_cast<std::size_t>(npts));
    while (static_cast<int>(flags.size()) < npts) {
      std::uint8_t fl = u8(p++);
      flags.push_back(fl);
      if (fl & 0x08) {
        std::uint8_t rep = u8(p++);
        for (int r = 0; r < rep; ++r) flags.push_back(fl);
      }
    }
    // coordinates
    std::vector<GlyphPoint> pts(static_cast<std::size_t>(npts));
    int x = 0;
    for (int i = 0; i < npts; ++i) {
      const std::uint8_t fl = flags[static_cast<std::size_t>(i)];
      if (fl & 0x02) {
        const int dx = u8(p++);
        x += (fl & 0x10) ? dx : -dx;
      } else if (!(fl & 0x10)) {
        x += i16(p);
        p += 2;
      }
      pts[static_cast<std::size_t>(i)].x = x;
    }
    int y = 0;
    for (int i = 0; i < npts; ++i) {
      const std::uint8_t fl = flags[static_cast<std::size_t>(i)];
      if (fl & 0x04) {
        const int dy = u8(p++);
        y += (fl & 0x20) ? dy : -dy;
      } else if (!(fl & 0x20)) {
        y += i16(p);
        p += 2;
      }
      pts[static_cast<std::size_t>(i)].y = y;
      pts[static_cast<std::size_t>(i)].on_curve = (fl & 0x01) != 0;
    }
    // apply transform
    for (auto& pt : pts) {
      const double tx = a * pt.x + c * pt.y + e;
      const double ty = b * pt.x + d * pt.y + f;
      pt.x = tx;
      pt.y = ty;
    }

    int start = 0;
    for (int ci = 0; ci < ncont; ++ci) {
      const int stop = ends[static_cast<std::size_t>(ci)];
      emit_contour(pts, start, stop, out);
      start = stop + 1;
    }
  }

  /// Expand a TrueType contour (quadratics with implied midpoints) into a
  /// flattened polyline.
  void emit_contour(const std::vector<GlyphPoint>& pts, int start, int stop,
                    Outline& out) const {
    const int n = stop - start + 1;
    if (n < 2) return;
    auto at = [&](int i) { return pts[static_cast<std::size_t>(start + ((i % n) + n) % n)]; };

    // find an on-curve starting point; if none exists, start from the
    // implied midpoint between the first two control points
    int first_on = -1;
    for (int i = 0; i < n; ++i)
      if (at(i).on_curve) {
        first_on = i;
        break;
      }
    std::vector<std::array<double, 2>> poly;
    auto push = [&poly](double px, double py) {
      if (!poly.empty() && poly.back()[0] == px && poly.back()[1] == py) return;
      poly.push_back({px, py});
    };

    double cur_x, cur_y;
    int idx;
    if (first_on >= 0) {
      cur_x = at(first_on).x;
      cur_y = at(first_on).y;
      idx = first_on;
    } else {
      // all-off-curve contour: anchor at the implied midpoint of p0,p1 and
      // treat every stored point as a control
      cur_x = (at(0).x + at(1).x) / 2.0;
      cur_y = (at(0).y + at(1).y) / 2.0;
      idx = 0;
    }
    push(cur_x, cur_y);

    const double tol = static_cast<double>(units_per_em_) / 512.0;
    // walk positions idx+1 .. idx+n; position idx+n is the anchor again
    int k = 1;
    while (k <= n) {
      GlyphPoint pt = at(idx + k);
      if (pt.on_curve) {
        push(pt.x, pt.y);
        cur_x = pt.x;
        cur_y = pt.y;
        k += 1;
      } else {
        // quadratic: control = pt, endpoint = next on-curve or implied mid
        GlyphPoint nxt = at(idx + k + 1);
        double ex, ey;
        if (nxt.on_curve) {
          ex = nxt.x;
          ey = nxt.y;
          k += 2;
        } else {
          ex = (pt.x + nxt.x) / 2.0;
          ey = (pt.y + nxt.y) / 2.0;
          k += 1;
        }
        flatten_quad(cur_x, cur_y, pt.x, pt.y, ex, ey, tol, 0, poly);
        cur_x = ex;
        cur_y = ey;
      }
    }
    if (poly.size() >= 2 && poly.front() == poly.back()) poly.pop_back();
    if (poly.size() >= 3) out.contours.push_back(std::move(poly));
  }

  static void flatten_quad(double x0, double y0, double cx, double cy, double x1,
                           double y1, double tol, int depth,
                           std::vector<std::array<double, 2>>& poly) {
    // deviation of the control point from the chord midpoint bounds the
    // curve/chord error within a constant factor
    const double mx = (x0 + 2.0 * cx + x1) / 4.0;
    const double my = (y0 + 2.0 * cy + y1) / 4.0;
    const double dx = mx - (x0 + x1) / 2.0;
    const double dy = my - (y0 + y1) / 2.0;
    if (depth >= 8 || dx * dx + dy * dy <= tol * tol) {
      poly.push_back({x1, y1});
      return;
    }
    const double lcx = (x0 + cx) / 2.0, lcy = (y0 + cy) / 2.0;
    const double rcx = (cx + x1) / 2.0, rcy = (cy + y1) / 2.0;
    const double midx = (lcx + rcx) / 2.0, midy = (lcy + rcy) / 2.0;
    flatten_quad(x0, y0, lcx, lcy, midx, midy, tol, depth + 1, poly);
    flatten_quad(midx, midy, rcx, rcy, x1, y1, tol, depth + 1, poly);
  }

  void append_composite(std::size_t glyf, double a, double b, double c, double d,
                        double e, double f, int depth, Outline& out) const {
    std::size_t p = glyf + 10;
    while (true) {
      const std::uint16_t flags = u16(p);
      const std::uint16_t sub_gid = u16(p + 2);
      p += 4;
      double dx = 0, dy = 0;
      if (flags & 0x0001) {  // words
        if (flags & 0x0002) {
          dx = i16(p);
          dy = i16(p + 2);
        }
        p += 4;
      } else {
        if (flags & 0x0002) {
          dx = static_cast<std::int8_t>(u8(p));
          dy = static_cast<std::int8_t>(u8(p + 1));
        }
        p += 2;
      }
      double sa = 1, sb = 0, sc = 0, sd = 1;
      auto f2dot14 = [this](std::size_t off) { return i16(off) / 16384.0; };
      if (flags & 0x0008) {
        sa = sd = f2dot14(p);
        p += 2;
      } else if (flags & 0x0040) {
        sa = f2dot14(p);
        sd = f2dot14(p + 2);
        p += 4;
      } else if (flags & 0x0080) {
        sa = f2dot14(p);
        sb = f2dot14(p + 2);
        sc = f2dot14(p + 4);
        sd = f2dot14(p + 6);
        p += 8;
      }
      // compose child transform with the parent's
      const double na = a * sa + c * sb;
      const double nb = b * sa + d * sb;
      const double nc = a * sc + c * sd;
      const double nd = b * sc + d * sd;
      const double ne = a * dx + c * dy + e;
      const double nf = b * dx + d * dy + f;
      append_glyph(sub_gid, na, nb, nc, nd, ne, nf, depth + 1, out);
      if (!(flags & 0x0020)) break;  // MORE_COMPONENTS
    }
  }

  std::vector<std::uint8_t> data_;
  std::string origin_;
  std::map<std::string, std::pair<std::size_t, std::size_t>> tables_;
  std::map<std::uint32_t, std::uint16_t> cmap_;
  std::vector<std::uint32_t> loca_;
  int units_per_em_ = 0;
  int num_glyphs_ = 0;
  bool index_to_loc_long_ = false;
};

}  // namespace glyphstyle
