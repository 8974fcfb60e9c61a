#pragma once

#include <cstdint>
#include <string>

#include "glyphstyle/core/tensor.hpp"

namespace glyphstyle {

/// Stable key for a character: zero-padded lowercase hex of the codepoint
/// (at least four digits, e.g. "0041", "4e00", "1f600").
inline std::string to_glyph_id(char32_t cp) {
  static const char* hex = "0123456789abcdef";
  std::string s;
  std::uint32_t v = static_cast<std::uint32_t>(cp);
  while (v) {
    s.insert(s.begin(), hex[v & 0xf]);
    v >>= 4;
  }
  while (s.size() < 4) s.insert(s.begin(), '0');
  return s;
}

inline char32_t glyph_id_to_codepoint(const std::string& id) {
  check(!id.empty() && id.size() <= 8, "glyph id must be 1..8 hex digits: " + id);
  std::uint32_t v = 0;
  for (char c : id) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint32_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint32_t>(c - 'a' + 10);
    else throw std::invalid_argument("glyph id must be lowercase hex: " + id);
  }
  return static_cast<char32_t>(v);
}

struct CharacterSpec {
  char32_t codepoint = 0;
  std::string glyph_id;  // zero-padded lowercase hex of codepoint

  static CharacterSpec of(char32_t cp) { return {cp, to_glyph_id(cp)}; }
};

/// y = 0 marks the designated source/standard font; target fonts take
/// 1..n. The label doubles as the mean of the font's style prior N(y*1, I).
struct FontLabel {
  int y = 0;
  std::string name;
};

/// One character in one font: single-channel 64x64 bitmap in [-1,1],
/// background +1 (paper white), full ink -1.
struct GlyphImage {
  Tensor<float> pixels;  // shape {64, 64}
  FontLabel font;
  CharacterSpec ch;

  void validate() const {
    check(pixels.rank() == 2 && pixels.dim(0) == 64 && pixels.dim(1) == 64,
          "GlyphImage: must be 64x64");
    for (std::int64_t i = 0; i < pixels.size(); ++i)
      check(pixels[i] >= -1.0f && pixels[i] <= 1.0f,
            "GlyphImage: pixel outside [-1,1]");
  }
};

}  // namespace glyphstyle
