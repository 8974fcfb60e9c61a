#pragma once

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "glyphstyle/core/tensor.hpp"

namespace glyphstyle {

// ---------------------------------------------------------------------------
// Glyph bitmaps are stored as 8-bit binary PGM (P5), one file per glyph.
// In-memory pixels live on the dequantized grid v/255*2-1 in [-1,1], so a
// save/load round trip is bit-exact in both directions.
// ---------------------------------------------------------------------------

inline std::uint8_t pixel_to_byte(float p) {
  float v = (p + 1.0f) * 0.5f * 255.0f;
  if (v < 0.0f) v = 0.0f;
  if (v > 255.0f) v = 255.0f;
  return static_cast<std::uint8_t>(v + 0.5f);
}

inline float byte_to_pixel(std::uint8_t b) {
  return static_cast<float>(b) / 255.0f * 2.0f - 1.0f;
}

inline void write_pgm(const std::filesystem::path& path, const Tensor<float>& img) {
  check(img.rank() == 2, "write_pgm: rank-2 image required");
  const int h = img.dim(0), w = img.dim(1);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), "write_pgm: cannot open " + path.string());
  os << "P5\n" << w << " " << h << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) row[static_cast<std::size_t>(x)] = pixel_to_byte(img[y * w + x]);
    os.write(reinterpret_cast<const char*>(row.data()), w);
  }
  check(os.good(), "write_pgm: write failed for " + path.string());
}

inline Tensor<float> read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "read_pgm: cannot open " + path.string());
  std::string magic;
  is >> magic;
  check(magic == "P5", "read_pgm: not a binary PGM: " + path.string());
  auto next_int = [&is, &path]() {
    // skip whitespace and '#' comments
    int c = is.get();
    while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
      if (c == '#')
        while (c != '\n' && c != EOF) c = is.get();
      c = is.get();
    }
    int v = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
      v = v * 10 + (c - '0');
      any = true;
      c = is.get();
    }
    check(any, "read_pgm: malformed header in " + path.string());
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  check(maxval == 255, "read_pgm: only maxval 255 supported");
  // next_int consumed exactly one whitespace byte after maxval
  Tensor<float> img({h, w});
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    is.read(reinterpret_cast<char*>(row.data()), w);
    check(is.gcount() == w, "read_pgm: truncated pixel data in " + path.string());
    for (int x = 0; x < w; ++x) img[y * w + x] = byte_to_pixel(row[static_cast<std::size_t>(x)]);
  }
  return img;
}

// ---------------------------------------------------------------------------
// Minimal PNG writer (8-bit grayscale or RGB), enough for comparison grids
// and loss plots. Deflate and CRC come from zlib.
// ---------------------------------------------------------------------------

namespace pngdetail {

inline void put_u32be(std::vector<std::uint8_t>& v, std::uint32_t x) {
  v.push_back(static_cast<std::uint8_t>(x >> 24));
  v.push_back(static_cast<std::uint8_t>(x >> 16));
  v.push_back(static_cast<std::uint8_t>(x >> 8));
  v.push_back(static_cast<std::uint8_t>(x));
}

inline void write_chunk(std::ofstream& os, const char type[4],
                        const std::vector<std::uint8_t>& payload) {
  std::vector<std::uint8_t> head;
  put_u32be(head, static_cast<std::uint32_t>(payload.size()));
  os.write(reinterpret_cast<const char*>(head.data()), 4);
  std::uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(type), 4);
  os.write(type, 4);
  if (!payload.empty()) {
    crc = crc32(crc, payload.data(), static_cast<uInt>(payload.size()));
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
  }
  std::vector<std::uint8_t> tail;
  put_u32be(tail, crc);
  os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace pngdetail

/// rgb: interleaved 8-bit rows, `channels` of 1 (gray) or 3 (RGB).
inline void write_png(const std::filesystem::path& path, const std::uint8_t* pixels,
                      int width, int height, int channels) {
  check(channels == 1 || channels == 3, "write_png: 1 or 3 channels");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  check(os.good(), "write_png: cannot open " + path.string());
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<std::uint8_t> ihdr;
  pngdetail::put_u32be(ihdr, static_cast<std::uint32_t>(width));
  pngdetail::put_u32be(ihdr, static_cast<std::uint32_t>(height));
  ihdr.push_back(8);                      // bit depth
  ihdr.push_back(channels == 1 ? 0 : 2);  // color type
  ihdr.push_back(0);                      // compression
  ihdr.push_back(0);                      // filter
  ihdr.push_back(0);                      // interlace
  pngdetail::write_chunk(os, "IHDR", ihdr);

  const std::size_t stride = static_cast<std::size_t>(width) * channels;
  std::vector<std::uint8_t> raw;
  raw.reserve((stride + 1) * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);  // filter type none
    raw.insert(raw.end(), pixels + y * stride, pixels + (y + 1) * stride);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> compressed(bound);
  int rc = compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9);
  check(rc == Z_OK, "write_png: deflate failed");
  compressed.resize(bound);
  pngdetail::write_chunk(os, "IDAT", compressed);
  pngdetail::write_chunk(os, "IEND", {});
  check(os.good(), "write_png: write failed for " + path.string());
}

}  // namespace glyphstyle
