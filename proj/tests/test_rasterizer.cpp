#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "glyphstyle/core/image_io.hpp"
#include "glyphstyle/data/raster.hpp"

using namespace glyphstyle;
namespace fs = std::filesystem;

namespace {

const fs::path kAssets = GS_ASSETS_DIR;
const fs::path kTestData = GS_TEST_DATA_DIR;
const fs::path kSans = kAssets / "fonts" / "DejaVuSans.ttf";

struct InkBox {
  int x0 = 1 << 20, y0 = 1 << 20, x1 = -1, y1 = -1;
  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  bool empty() const { return x1 < 0; }
};

InkBox ink_bbox(const Tensor<float>& img, float thresh = 0.0f) {
  InkBox b;
  for (int y = 0; y < img.dim(0); ++y)
    for (int x = 0; x < img.dim(1); ++x)
      if (img[y * img.dim(1) + x] < thresh) {
        b.x0 = std::min(b.x0, x);
        b.x1 = std::max(b.x1, x);
        b.y0 = std::min(b.y0, y);
        b.y1 = std::max(b.y1, y);
      }
  return b;
}

}  // namespace

TEST_CASE("glyph ids are zero-padded lowercase hex") {
  CHECK(to_glyph_id(U'A') == "0041");
  CHECK(to_glyph_id(static_cast<char32_t>(0x4e00)) == "4e00");
  CHECK(to_glyph_id(static_cast<char32_t>(0x1f600)) == "1f600");
  CHECK(glyph_id_to_codepoint("0041") == U'A');
  CHECK(glyph_id_to_codepoint("1f600") == static_cast<char32_t>(0x1f600));
  CHECK_THROWS_AS(glyph_id_to_codepoint("00G1"), std::invalid_argument);
}

TEST_CASE("space renders as pure background") {
  auto rc = render_font(kSans, {U' '});
  REQUIRE(rc.glyphs.size() == 1);
  REQUIRE(rc.missing.empty());
  for (std::int64_t i = 0; i < rc.glyphs[0].pixels.size(); ++i)
    REQUIRE(rc.glyphs[0].pixels[i] == 1.0f);
}

TEST_CASE("rendering is deterministic") {
  std::vector<char32_t> cs{U'A', U'g', U'#', U'0'};
  auto a = render_font(kSans, cs);
  auto b = render_font(kSans, cs);
  REQUIRE(a.glyphs.size() == b.glyphs.size());
  for (std::size_t i = 0; i < a.glyphs.size(); ++i)
    for (std::int64_t j = 0; j < a.glyphs[i].pixels.size(); ++j)
      REQUIRE(a.glyphs[i].pixels[j] == b.glyphs[i].pixels[j]);
}

TEST_CASE("wide-bar glyph rasterizes wider than tall") {
  // em dash: the reference rasterizer reports a 50x4 ink box at this scale
  auto rc = render_font(kSans, {static_cast<char32_t>(0x2014)});
  REQUIRE(rc.glyphs.size() == 1);
  auto box = ink_bbox(rc.glyphs[0].pixels);
  REQUIRE_FALSE(box.empty());
  CHECK(box.width() > 2 * box.height());
  CHECK(std::abs(box.width() - 50) <= 2);
  CHECK(std::abs(box.height() - 4) <= 2);
}

TEST_CASE("capital H matches the reference rasterizer") {
  auto rc = render_font(kSans, {U'H'});
  REQUIRE(rc.glyphs.size() == 1);
  const auto& ours = rc.glyphs[0].pixels;

  auto box = ink_bbox(ours);
  CHECK(std::abs(box.width() - 31) <= 2);
  CHECK(std::abs(box.height() - 39) <= 2);

  // frozen FreeType rendering with the same em scale and bbox centering
  Tensor<float> ref = read_pgm(kTestData / "ref_H_pil.pgm");
  REQUIRE(ref.shape() == ours.shape());
  double diff = 0.0;
  for (std::int64_t i = 0; i < ref.size(); ++i)
    diff += std::abs(static_cast<double>(ref[i]) - ours[i]);
  diff /= static_cast<double>(ref.size());
  CHECK(diff < 0.15);
}

TEST_CASE("glyph pixels stay in range and ink is present") {
  auto rc = render_font(kSans, {U'M', U'i', U'.'});
  for (const auto& g : rc.glyphs) {
    g.validate();
    REQUIRE_FALSE(ink_bbox(g.pixels).empty());
  }
}

TEST_CASE("missing glyphs are reported per character") {
  // DejaVu carries no CJK ideographs
  std::vector<char32_t> cs{U'A', static_cast<char32_t>(0x4e00),
                           static_cast<char32_t>(0x4e01)};
  auto rc = render_font(kSans, cs);
  CHECK(rc.glyphs.size() == 1);
  REQUIRE(rc.missing.size() == 2);
  CHECK(rc.missing[0] == static_cast<char32_t>(0x4e00));
  CHECK(rc.missing[1] == static_cast<char32_t>(0x4e01));
}

TEST_CASE("unreadable or non-font files are fatal") {
  CHECK_THROWS_AS(render_font(kAssets / "fonts" / "nonexistent.ttf", {U'A'}), FontError);
  const fs::path junk = fs::temp_directory_path() / "gs_not_a_font.ttf";
  {
    std::ofstream os(junk, std::ios::binary);
    os << "this is not a font";
  }
  CHECK_THROWS_AS(render_font(junk, {U'A'}), FontError);
  fs::remove(junk);
}

TEST_CASE("pgm save/load round trip is bit exact") {
  auto rc = render_font(kSans, {U'Q'});
  REQUIRE(rc.glyphs.size() == 1);
  const auto& img = rc.glyphs[0].pixels;
  const fs::path p = fs::temp_directory_path() / "gs_roundtrip.pgm";
  write_pgm(p, img);
  Tensor<float> back = read_pgm(p);
  REQUIRE(back.shape() == img.shape());
  for (std::int64_t i = 0; i < img.size(); ++i) REQUIRE(back[i] == img[i]);
  // saving the loaded image reproduces the identical file
  const fs::path p2 = fs::temp_directory_path() / "gs_roundtrip2.pgm";
  write_pgm(p2, back);
  std::ifstream f1(p, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  REQUIRE(s1 == s2);
  fs::remove(p);
  fs::remove(p2);
}

TEST_CASE("quantization grid is stable under byte round trip") {
  for (int b = 0; b <= 255; ++b)
    CHECK(pixel_to_byte(byte_to_pixel(static_cast<std::uint8_t>(b))) == b);
}

TEST_CASE("png writer emits a well-formed signature") {
  std::vector<std::uint8_t> px(32 * 16 * 3, 200);
  const fs::path p = fs::temp_directory_path() / "gs_plot.png";
  write_png(p, px.data(), 32, 16, 3);
  std::ifstream is(p, std::ios::binary);
  std::uint8_t sig[8];
  is.read(reinterpret_cast<char*>(sig), 8);
  CHECK(sig[0] == 0x89);
  CHECK(sig[1] == 'P');
  CHECK(sig[2] == 'N');
  CHECK(sig[3] == 'G');
  fs::remove(p);
}
