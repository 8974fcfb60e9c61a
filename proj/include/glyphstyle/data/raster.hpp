#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "glyphstyle/data/glyph.hpp"
#include "glyphstyle/data/ttf.hpp"

namespace glyphstyle {

struct RasterParams {
  int size = 64;
  double margin = 0.08;  // em-box margin on each side
  int subrows = 4;       // vertical oversampling per pixel row
};

namespace rasterdetail {

struct Edge {
  double x0, y0, x1, y1;
};

/// Non-zero-winding scanline fill with exact horizontal coverage and
/// `subrows` vertical samples per pixel. Result per pixel is ink coverage in
/// [0,1].
inline std::vector<double> fill_coverage(const std::vector<Edge>& edges, int size,
                                         int subrows) {
  std::vector<double> cov(static_cast<std::size_t>(size) * size, 0.0);
  if (edges.empty()) return cov;
  struct Crossing {
    double x;
    int dir;
  };
  std::vector<Crossing> xs;
  std::vector<double> row_cov(static_cast<std::size_t>(size));
  const double wsub = 1.0 / subrows;
  for (int py = 0; py < size; ++py) {
    std::fill(row_cov.begin(), row_cov.end(), 0.0);
    for (int s = 0; s < subrows; ++s) {
      const double sy = py + (s + 0.5) * wsub;
      xs.clear();
      for (const Edge& e : edges) {
        // half-open in y so shared vertices count once
        if (e.y0 <= sy && sy < e.y1)
          xs.push_back({e.x0 + (sy - e.y0) * (e.x1 - e.x0) / (e.y1 - e.y0), +1});
        else if (e.y1 <= sy && sy < e.y0)
          xs.push_back({e.x1 + (sy - e.y1) * (e.x0 - e.x1) / (e.y0 - e.y1), -1});
      }
      if (xs.empty()) continue;
      std::sort(xs.begin(), xs.end(),
                [](const Crossing& a, const Crossing& b) { return a.x < b.x; });
      int winding = 0;
      for (std::size_t i = 0; i + 1 <= xs.size(); ++i) {
        winding += xs[i].dir;
        if (winding == 0 || i + 1 == xs.size()) continue;
        double xa = xs[i].x, xb = xs[i + 1].x;
        if (xb <= 0.0 || xa >= size) continue;
        xa = std::max(xa, 0.0);
        xb = std::min(xb, static_cast<double>(size));
        int pa = static_cast<int>(xa), pb = static_cast<int>(xb);
        if (pb >= size) pb = size - 1;
        if (pa == pb) {
          row_cov[static_cast<std::size_t>(pa)] += (xb - xa) * wsub;
        } else {
          row_cov[static_cast<std::size_t>(pa)] += (pa + 1 - xa) * wsub;
          for (int px = pa + 1; px < pb; ++px) row_cov[static_cast<std::size_t>(px)] += wsub;
          row_cov[static_cast<std::size_t>(pb)] += (xb - pb) * wsub;
        }
      }
    }
    for (int px = 0; px < size; ++px)
      cov[static_cast<std::size_t>(py) * size + px] =
          std::clamp(row_cov[static_cast<std::size_t>(px)], 0.0, 1.0);
  }
  return cov;
}

}  // namespace rasterdetail

/// Rasterize one glyph outline onto a square canvas. The em box scales to
/// the canvas minus the margin (so stroke proportions are consistent across
/// the whole font) and the glyph centers by its own bounding box. Output is
/// quantized to the 8-bit storage grid: background +1, full ink -1.
inline Tensor<float> rasterize_outline(const TtfFont::Outline& outline, int upem,
                                       const RasterParams& p = {}) {
  Tensor<float> img({p.size, p.size}, 1.0f);
  if (outline.empty()) return img;

  const double scale = p.size * (1.0 - 2.0 * p.margin) / static_cast<double>(upem);
  double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
  for (const auto& c : outline.contours)
    for (const auto& pt : c) {
      const double x = pt[0] * scale, y = -pt[1] * scale;  // y-down device space
      min_x = std::min(min_x, x);
      max_x = std::max(max_x, x);
      min_y = std::min(min_y, y);
      max_y = std::max(max_y, y);
    }
  const double off_x = p.size / 2.0 - (min_x + max_x) / 2.0;
  const double off_y = p.size / 2.0 - (min_y + max_y) / 2.0;

  std::vector<rasterdetail::Edge> edges;
  for (const auto& c : outline.contours) {
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto& a = c[i];
      const auto& b = c[(i + 1) % c.size()];
      rasterdetail::Edge e{a[0] * scale + off_x, -a[1] * scale + off_y,
                           b[0] * scale + off_x, -b[1] * scale + off_y};
      if (e.y0 != e.y1) edges.push_back(e);  // horizontal edges never cross a scanline
    }
  }
  const auto cov = rasterdetail::fill_coverage(edges, p.size, p.subrows);
  for (std::int64_t i = 0; i < img.size(); ++i) {
    // quantize through the storage grid so rendering and file round trips agree
    const std::uint8_t b = static_cast<std::uint8_t>(
        std::clamp((1.0 - cov[static_cast<std::size_t>(i)]) * 255.0 + 0.5, 0.0, 255.0));
    img[i] = static_cast<float>(b) / 255.0f * 2.0f - 1.0f;
  }
  return img;
}

struct RenderOutcome {
  std::vector<GlyphImage> glyphs;
  std::vector<char32_t> missing;  // charset entries with no glyph in the font
};

/// Render a charset from an outline font. Characters the font does not map
/// are reported in `missing`; the caller decides whether that is fatal.
/// Unreadable or non-TrueType files throw FontError.
inline RenderOutcome render_font(const std::filesystem::path& font_file,
                                 const std::vector<char32_t>& charset,
                                 const FontLabel& label = {},
                                 const RasterParams& params = {}) {
  TtfFont font = TtfFont::load(font_file);
  RenderOutcome out;
  for (char32_t cp : charset) {
    const std::uint16_t gid = font.glyph_index(cp);
    if (gid == 0) {
      out.missing.push_back(cp);
      continue;
    }
    GlyphImage g;
    g.pixels = rasterize_outline(font.glyph_outline(gid), font.units_per_em(), params);
    g.font = label;
    g.ch = CharacterSpec::of(cp);
    out.glyphs.push_back(std::move(g));
  }
  return out;
}

}  // namespace glyphstyle
