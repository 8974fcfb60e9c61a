#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "glyphstyle/core/image_io.hpp"
#include "glyphstyle/core/rng.hpp"
#include "glyphstyle/data/raster.hpp"

namespace glyphstyle {

enum class Split { train, test };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

// ---------------------------------------------------------------------------
// Charset helpers
// ---------------------------------------------------------------------------

/// Printable ASCII (94 characters): the default desk-scale demo charset.
inline std::vector<char32_t> default_charset() {
  std::vector<char32_t> out;
  for (char32_t c = 0x21; c <= 0x7e; ++c) out.push_back(c);
  return out;
}

/// Every distinct non-whitespace codepoint of a UTF-8 string, sorted.
inline std::vector<char32_t> charset_from_utf8(const std::string& text) {
  std::set<char32_t> seen;
  std::size_t i = 0;
  while (i < text.size()) {
    const unsigned char b = static_cast<unsigned char>(text[i]);
    char32_t cp = 0;
    int len = 1;
    if (b < 0x80) {
      cp = b;
    } else if ((b >> 5) == 0x6) {
      cp = b & 0x1f;
      len = 2;
    } else if ((b >> 4) == 0xe) {
      cp = b & 0x0f;
      len = 3;
    } else if ((b >> 3) == 0x1e) {
      cp = b & 0x07;
      len = 4;
    } else {
      throw std::invalid_argument("charset: invalid UTF-8 byte");
    }
    check(i + static_cast<std::size_t>(len) <= text.size(), "charset: truncated UTF-8");
    for (int k = 1; k < len; ++k) {
      const unsigned char cb = static_cast<unsigned char>(text[i + static_cast<std::size_t>(k)]);
      check((cb >> 6) == 0x2, "charset: invalid UTF-8 continuation");
      cp = (cp << 6) | (cb & 0x3f);
    }
    i += static_cast<std::size_t>(len);
    if (cp > 0x20 && cp != 0x7f) seen.insert(cp);
  }
  return {seen.begin(), seen.end()};
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct FontEntry {
  std::string name;
  int label = 0;
  std::string file;  // original font file path, informational
};

struct DatasetManifest {
  int version = 1;
  std::uint64_t seed = 0;
  double split_ratio = 0.8;
  std::vector<FontEntry> fonts;  // ordered by label 0..n
  std::vector<std::string> train_chars, test_chars, excluded_chars;  // glyph ids
  std::string content_hash;

  const std::vector<std::string>& chars(Split s) const {
    return s == Split::train ? train_chars : test_chars;
  }

  std::vector<char32_t> codepoints(Split s) const {
    std::vector<char32_t> out;
    for (const auto& id : chars(s)) out.push_back(glyph_id_to_codepoint(id));
    return out;
  }

  void save(const std::filesystem::path& path) const {
    nlohmann::json j;
    j["version"] = version;
    j["seed"] = seed;
    j["split_ratio"] = split_ratio;
    for (const auto& f : fonts)
      j["fonts"].push_back({{"name", f.name}, {"label", f.label}, {"file", f.file}});
    j["train_chars"] = train_chars;
    j["test_chars"] = test_chars;
    j["excluded_chars"] = excluded_chars;
    j["content_hash"] = content_hash;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
      std::ofstream os(tmp, std::ios::trunc);
      check(os.good(), "manifest: cannot write " + tmp.string());
      os << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
  }

  static DatasetManifest load(const std::filesystem::path& path) {
    std::ifstream is(path);
    check(is.good(), "manifest: cannot open " + path.string());
    nlohmann::json j = nlohmann::json::parse(is);
    DatasetManifest m;
    m.version = j.at("version").get<int>();
    check(m.version == 1, "manifest: unsupported version");
    m.seed = j.at("seed").get<std::uint64_t>();
    m.split_ratio = j.at("split_ratio").get<double>();
    for (const auto& f : j.at("fonts"))
      m.fonts.push_back({f.at("name").get<std::string>(), f.at("label").get<int>(),
                         f.value("file", std::string())});
    m.train_chars = j.at("train_chars").get<std::vector<std::string>>();
    m.test_chars = j.at("test_chars").get<std::vector<std::string>>();
    m.excluded_chars = j.value("excluded_chars", std::vector<std::string>{});
    m.content_hash = j.value("content_hash", std::string());
    return m;
  }
};

// ---------------------------------------------------------------------------
// Dataset construction
// ---------------------------------------------------------------------------

struct Fnv1a64 {
  std::uint64_t h = 1469598103934665603ull;
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  }
  void update(const std::string& s) { update(s.data(), s.size()); }
  std::string hex() const {
    static const char* d = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[15 - i] = d[(h >> (4 * i)) & 0xf];
    return out;
  }
};

struct FontInput {
  std::filesystem::path file;
  FontLabel label;
};

/// The character-level split is a pure function of (charset, ratio, seed):
/// canonicalize (sort, dedupe), shuffle with the seed, and cut at
/// round(ratio*n). Characters later excluded for renderability reasons do not
/// move the assignment of the rest.
inline std::pair<std::vector<char32_t>, std::vector<char32_t>> split_charset(
    std::vector<char32_t> charset, double ratio, std::uint64_t seed) {
  check(!charset.empty(), "split_charset: empty charset");
  check(ratio > 0.0 && ratio < 1.0, "split_charset: ratio must be in (0,1)");
  std::sort(charset.begin(), charset.end());
  charset.erase(std::unique(charset.begin(), charset.end()), charset.end());
  Rng rng(seed);
  rng.shuffle(charset);
  const auto k = static_cast<std::size_t>(
      std::llround(ratio * static_cast<double>(charset.size())));
  std::vector<char32_t> train(charset.begin(), charset.begin() + static_cast<std::ptrdiff_t>(k));
  std::vector<char32_t> test(charset.begin() + static_cast<std::ptrdiff_t>(k), charset.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {train, test};
}

/// Render every font over the charset, drop characters any font lacks, write
/// one PGM per glyph plus manifest.json under out_dir. The split is shared
/// across fonts so test characters are unseen in every font.
inline DatasetManifest build_dataset(const std::vector<FontInput>& fonts,
                                     const std::vector<char32_t>& charset,
                                     double split_ratio, std::uint64_t seed,
                                     const std::filesystem::path& out_dir,
                                     const RasterParams& params = {}) {
  check(!fonts.empty(), "build_dataset: no fonts");
  std::set<int> labels;
  std::set<std::string> names;
  int source_count = 0;
  for (const auto& f : fonts) {
    check(labels.insert(f.label.y).second,
          "build_dataset: duplicate font label " + std::to_string(f.label.y));
    check(!f.label.name.empty() &&
              f.label.name.find('/') == std::string::npos &&
              f.label.name.find('\\') == std::string::npos,
          "build_dataset: font name must be a valid directory name");
    check(names.insert(f.label.name).second,
          "build_dataset: duplicate font name " + f.label.name);
    if (f.label.y == 0) ++source_count;
  }
  check(source_count == 1, "build_dataset: exactly one font must carry label 0");
  check(*labels.rbegin() == static_cast<int>(fonts.size()) - 1 && *labels.begin() == 0,
        "build_dataset: labels must be contiguous 0..n");

  auto [train, test] = split_charset(charset, split_ratio, seed);

  // render all fonts; a character missing anywhere is excluded everywhere
  std::vector<FontInput> ordered = fonts;
  std::sort(ordered.begin(), ordered.end(),
            [](const FontInput& a, const FontInput& b) { return a.label.y < b.label.y; });
  std::vector<char32_t> all_chars = train;
  all_chars.insert(all_chars.end(), test.begin(), test.end());
  std::sort(all_chars.begin(), all_chars.end());

  std::set<char32_t> excluded;
  std::vector<std::map<char32_t, Tensor<float>>> rendered(ordered.size());
  for (std::size_t fi = 0; fi < ordered.size(); ++fi) {
    RenderOutcome rc = render_font(ordered[fi].file, all_chars, ordered[fi].label, params);
    for (char32_t cp : rc.missing) excluded.insert(cp);
    for (auto& g : rc.glyphs) rendered[fi].emplace(g.ch.codepoint, std::move(g.pixels));
  }

  auto drop_excluded = [&excluded](std::vector<char32_t>& v) {
    v.erase(std::remove_if(v.begin(), v.end(),
                           [&excluded](char32_t c) { return excluded.count(c) != 0; }),
            v.end());
  };
  drop_excluded(train);
  drop_excluded(test);

  DatasetManifest m;
  m.seed = seed;
  m.split_ratio = split_ratio;
  Fnv1a64 hash;
  for (std::size_t fi = 0; fi < ordered.size(); ++fi) {
    const auto& label = ordered[fi].label;
    m.fonts.push_back({label.name, label.y, ordered[fi].file.string()});
    hash.update(label.name);
    hash.update(&label.y, sizeof(label.y));
    for (char32_t cp : all_chars) {
      if (excluded.count(cp)) continue;
      const Tensor<float>& px = rendered[fi].at(cp);
      const std::string id = to_glyph_id(cp);
      write_pgm(out_dir / "glyphs" / label.name / (id + ".pgm"), px);
      hash.update(id);
      std::vector<std::uint8_t> quant(static_cast<std::size_t>(px.size()));
      for (std::int64_t i = 0; i < px.size(); ++i)
        quant[static_cast<std::size_t>(i)] = pixel_to_byte(px[i]);
      hash.update(quant.data(), quant.size());
    }
  }
  for (char32_t c : train) m.train_chars.push_back(to_glyph_id(c));
  for (char32_t c : test) m.test_chars.push_back(to_glyph_id(c));
  for (char32_t c : excluded) m.excluded_chars.push_back(to_glyph_id(c));
  m.content_hash = hash.hex();
  m.save(out_dir / "manifest.json");
  return m;
}

// ---------------------------------------------------------------------------
// In-memory store and paired sampling
// ---------------------------------------------------------------------------

class GlyphStore {
 public:
  static GlyphStore open(const std::filesystem::path& root) {
    GlyphStore s;
    s.root_ = root;
    s.manifest_ = DatasetManifest::load(root / "manifest.json");
    for (const auto& f : s.manifest_.fonts) {
      for (Split sp : {Split::train, Split::test}) {
        for (const auto& id : s.manifest_.chars(sp)) {
          GlyphImage g;
          g.pixels = read_pgm(root / "glyphs" / f.name / (id + ".pgm"));
          check(g.pixels.dim(0) == 64 && g.pixels.dim(1) == 64,
                "GlyphStore: glyph " + id + " of " + f.name + " is not 64x64");
          g.font = {f.label, f.name};
          g.ch = CharacterSpec{glyph_id_to_codepoint(id), id};
          s.images_.emplace(key(f.label, g.ch.codepoint), std::move(g));
        }
      }
    }
    return s;
  }

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& root() const { return root_; }

  /// Number of fonts including the standard font (labels 0..n).
  int font_count() const { return static_cast<int>(manifest_.fonts.size()); }

  bool has(int label, char32_t cp) const { return images_.count(key(label, cp)) != 0; }

  const GlyphImage& image(int label, char32_t cp) const {
    auto it = images_.find(key(label, cp));
    check(it != images_.end(), "GlyphStore: no glyph for label " + std::to_string(label) +
                                   " char " + to_glyph_id(cp));
    return it->second;
  }

 private:
  static std::uint64_t key(int label, char32_t cp) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(label)) << 32) |
           static_cast<std::uint32_t>(cp);
  }

  std::filesystem::path root_;
  DatasetManifest manifest_;
  std::map<std::uint64_t, GlyphImage> images_;
};

/// One training example: characters A != B, target font y > 0.
///   source     = (font 0, A)   target     = (font y, B)
///   source_ref = (font 0, B)   target_ref = (font y, A)
struct PairedSample {
  const GlyphImage* source = nullptr;
  const GlyphImage* target = nullptr;
  const GlyphImage* source_ref = nullptr;
  const GlyphImage* target_ref = nullptr;
};

inline std::vector<PairedSample> sample_batch(const GlyphStore& store, int batch_size,
                                              Split split, Rng& rng) {
  check(batch_size >= 1, "sample_batch: batch_size must be >= 1");
  check(store.font_count() >= 2, "sample_batch: need at least one target font");
  const auto chars = store.manifest().codepoints(split);
  check(chars.size() >= 2, std::string("sample_batch: ") + split_name(split) +
                               " split needs at least 2 characters");
  std::vector<PairedSample> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  const int n_targets = store.font_count() - 1;
  for (int i = 0; i < batch_size; ++i) {
    const int y = static_cast<int>(rng.uniform_int(1, n_targets));
    const auto ai = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(chars.size()) - 1));
    auto bi = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(chars.size()) - 2));
    if (bi >= ai) ++bi;  // without replacement: B != A
    PairedSample s;
    s.source = &store.image(0, chars[ai]);
    s.target = &store.image(y, chars[bi]);
    s.source_ref = &store.image(0, chars[bi]);
    s.target_ref = &store.image(y, chars[ai]);
    out.push_back(s);
  }
  return out;
}

/// Batch tensors in network layout [N,1,64,64], plus per-sample target labels.
template <class T>
struct BatchTensors {
  Tensor<T> source, target, source_ref, target_ref;
  std::vector<int> labels;
};

template <class T>
BatchTensors<T> to_batch_tensors(const std::vector<PairedSample>& batch) {
  check(!batch.empty(), "to_batch_tensors: empty batch");
  const int n = static_cast<int>(batch.size());
  BatchTensors<T> out;
  for (Tensor<T>* t : {&out.source, &out.target, &out.source_ref, &out.target_ref})
    *t = Tensor<T>({n, 1, 64, 64});
  for (int i = 0; i < n; ++i) {
    auto put = [i](Tensor<T>& dst, const GlyphImage& g) {
      for (std::int64_t j = 0; j < g.pixels.size(); ++j)
        dst[static_cast<std::int64_t>(i) * 64 * 64 + j] = static_cast<T>(g.pixels[j]);
    };
    put(out.source, *batch[static_cast<std::size_t>(i)].source);
    put(out.target, *batch[static_cast<std::size_t>(i)].target);
    put(out.source_ref, *batch[static_cast<std::size_t>(i)].source_ref);
    put(out.target_ref, *batch[static_cast<std::size_t>(i)].target_ref);
    out.labels.push_back(batch[static_cast<std::size_t>(i)].target->font.y);
  }
  return out;
}

}  // namespace glyphstyle
