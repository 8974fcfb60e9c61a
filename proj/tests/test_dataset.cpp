#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "glyphstyle/data/dataset.hpp"

using namespace glyphstyle;
namespace fs = std::filesystem;

namespace {

const fs::path kAssets = GS_ASSETS_DIR;
const fs::path kSans = kAssets / "fonts" / "DejaVuSans.ttf";
const fs::path kSerif = kAssets / "fonts" / "DejaVuSerif.ttf";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("gs_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<char32_t> ten_chars() {
  return {U'A', U'B', U'C', U'D', U'E', U'F', U'G', U'H', U'I', U'J'};
}

std::vector<FontInput> two_fonts() {
  return {{kSans, {0, "sans"}}, {kSerif, {1, "serif"}}};
}

}  // namespace

TEST_CASE("split arithmetic and shared split across fonts") {
  TempDir dir("split");
  auto m = build_dataset(two_fonts(), ten_chars(), 0.8, 7, dir.path);
  CHECK(m.train_chars.size() == 8);
  CHECK(m.test_chars.size() == 2);
  CHECK(m.excluded_chars.empty());

  // every font holds exactly the same character files
  for (const auto& f : m.fonts)
    for (const auto& id : m.train_chars)
      CHECK(fs::exists(dir.path / "glyphs" / f.name / (id + ".pgm")));

  // disjoint, union covers the renderable charset
  std::set<std::string> train(m.train_chars.begin(), m.train_chars.end());
  std::set<std::string> test(m.test_chars.begin(), m.test_chars.end());
  for (const auto& id : test) CHECK(train.count(id) == 0);
  CHECK(train.size() + test.size() == 10);
}

TEST_CASE("identical inputs give identical manifests") {
  TempDir d1("det1"), d2("det2");
  auto m1 = build_dataset(two_fonts(), ten_chars(), 0.8, 7, d1.path);
  auto m2 = build_dataset(two_fonts(), ten_chars(), 0.8, 7, d2.path);
  CHECK(m1.train_chars == m2.train_chars);
  CHECK(m1.test_chars == m2.test_chars);
  CHECK(m1.content_hash == m2.content_hash);

  auto m3 = build_dataset(two_fonts(), ten_chars(), 0.8, 8, d2.path);
  CHECK(m3.train_chars != m1.train_chars);  // seed moves the split
}

TEST_CASE("characters missing from any font are excluded everywhere") {
  // find a codepoint Sans covers but Serif does not
  TtfFont sans = TtfFont::load(kSans);
  TtfFont serif = TtfFont::load(kSerif);
  char32_t uneven = 0;
  for (char32_t cp = 0x2190; cp < 0x3000 && !uneven; ++cp)
    if (sans.has_glyph(cp) && !serif.has_glyph(cp)) uneven = cp;
  REQUIRE(uneven != 0);

  auto charset = ten_chars();
  charset.push_back(uneven);
  TempDir dir("excl");
  auto m = build_dataset(two_fonts(), charset, 0.8, 7, dir.path);
  REQUIRE(m.excluded_chars.size() == 1);
  CHECK(m.excluded_chars[0] == to_glyph_id(uneven));
  CHECK(m.train_chars.size() + m.test_chars.size() == 10);
  for (const auto& f : m.fonts)
    CHECK_FALSE(fs::exists(dir.path / "glyphs" / f.name /
                           (to_glyph_id(uneven) + ".pgm")));

  // the split assignment of surviving characters does not move
  TempDir dir2("excl2");
  auto base = build_dataset(two_fonts(), ten_chars(), 0.8, 7, dir2.path);
  // base used a different charset, so splits may differ; what must hold is
  // that excluding is a pure filter over the same charset's split
  auto [train_full, test_full] = split_charset(charset, 0.8, 7);
  std::set<char32_t> excluded{uneven};
  std::vector<std::string> expect_train, expect_test;
  for (char32_t c : train_full)
    if (!excluded.count(c)) expect_train.push_back(to_glyph_id(c));
  for (char32_t c : test_full)
    if (!excluded.count(c)) expect_test.push_back(to_glyph_id(c));
  CHECK(m.train_chars == expect_train);
  CHECK(m.test_chars == expect_test);
}

TEST_CASE("label validation is fatal") {
  TempDir dir("labels");
  std::vector<FontInput> dup = {{kSans, {0, "a"}}, {kSerif, {0, "b"}}};
  CHECK_THROWS_AS(build_dataset(dup, ten_chars(), 0.8, 1, dir.path),
                  std::invalid_argument);
  std::vector<FontInput> no_source = {{kSans, {1, "a"}}, {kSerif, {2, "b"}}};
  CHECK_THROWS_AS(build_dataset(no_source, ten_chars(), 0.8, 1, dir.path),
                  std::invalid_argument);
  std::vector<FontInput> gap = {{kSans, {0, "a"}}, {kSerif, {2, "b"}}};
  CHECK_THROWS_AS(build_dataset(gap, ten_chars(), 0.8, 1, dir.path),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_dataset(two_fonts(), ten_chars(), 1.5, 1, dir.path),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_dataset(two_fonts(), {}, 0.8, 1, dir.path),
                  std::invalid_argument);
}

TEST_CASE("store round trip preserves pixels and ranges") {
  TempDir dir("store");
  build_dataset(two_fonts(), ten_chars(), 0.8, 7, dir.path);
  auto store = GlyphStore::open(dir.path);
  CHECK(store.font_count() == 2);
  for (Split sp : {Split::train, Split::test})
    for (char32_t cp : store.manifest().codepoints(sp))
      for (int label = 0; label < 2; ++label) {
        const GlyphImage& g = store.image(label, cp);
        g.validate();
        CHECK(g.font.y == label);
        CHECK(g.ch.codepoint == cp);
      }
  CHECK_THROWS_AS(store.image(0, U'Z'), std::invalid_argument);
}

TEST_CASE("paired samples satisfy the pairing invariants") {
  TempDir dir("pairs");
  build_dataset(two_fonts(), ten_chars(), 0.8, 7, dir.path);
  auto store = GlyphStore::open(dir.path);
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    auto batch = sample_batch(store, 4, Split::train, rng);
    REQUIRE(batch.size() == 4);
    for (const auto& s : batch) {
      CHECK(s.source->ch.codepoint == s.target_ref->ch.codepoint);
      CHECK(s.target->ch.codepoint == s.source_ref->ch.codepoint);
      CHECK(s.source->ch.codepoint != s.target->ch.codepoint);
      CHECK(s.source->font.y == 0);
      CHECK(s.source_ref->font.y == 0);
      CHECK(s.target->font.y >= 1);
      CHECK(s.target->font.y == s.target_ref->font.y);
    }
  }
}

TEST_CASE("sampling is deterministic under a fixed rng") {
  TempDir dir("rngdet");
  build_dataset(two_fonts(), ten_chars(), 0.8, 7, dir.path);
  auto store = GlyphStore::open(dir.path);
  Rng r1(5), r2(5);
  auto b1 = sample_batch(store, 6, Split::train, r1);
  auto b2 = sample_batch(store, 6, Split::train, r2);
  for (std::size_t i = 0; i < b1.size(); ++i) {
    CHECK(b1[i].source->ch.codepoint == b2[i].source->ch.codepoint);
    CHECK(b1[i].target->ch.codepoint == b2[i].target->ch.codepoint);
    CHECK(b1[i].target->font.y == b2[i].target->font.y);
  }
}

TEST_CASE("splits that cannot pair two characters are an error") {
  TempDir dir("tiny");
  // ratio 0.9 over 10 chars leaves a single test character
  build_dataset(two_fonts(), ten_chars(), 0.9, 7, dir.path);
  auto store = GlyphStore::open(dir.path);
  REQUIRE(store.manifest().test_chars.size() == 1);
  Rng rng(1);
  CHECK_THROWS_AS(sample_batch(store, 2, Split::test, rng), std::invalid_argument);
}

TEST_CASE("batch tensors carry layout and labels") {
  TempDir dir("batch");
  build_dataset(two_fonts(), ten_chars(), 0.8, 7, dir.path);
  auto store = GlyphStore::open(dir.path);
  Rng rng(3);
  auto batch = sample_batch(store, 3, Split::train, rng);
  auto bt = to_batch_tensors<float>(batch);
  CHECK(bt.source.shape() == std::vector<int>{3, 1, 64, 64});
  CHECK(bt.labels.size() == 3);
  for (int l : bt.labels) CHECK(l == 1);
  // pixels transfer verbatim
  for (int i = 0; i < 3; ++i)
    for (std::int64_t j = 0; j < 64 * 64; ++j)
      CHECK(bt.target[i * 64 * 64 + j] == batch[static_cast<std::size_t>(i)].target->pixels[j]);
}

TEST_CASE("charset parsing from utf-8 text") {
  auto cs = charset_from_utf8("AAB \n\tC\xC3\xA9");  // 'A','B','C', e-acute
  REQUIRE(cs.size() == 4);
  CHECK(cs[0] == U'A');
  CHECK(cs[3] == static_cast<char32_t>(0xe9));
  CHECK(default_charset().size() == 94);
  CHECK_THROWS_AS(charset_from_utf8("\xff"), std::invalid_argument);
}
