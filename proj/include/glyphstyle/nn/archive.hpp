#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "glyphstyle/core/tensor.hpp"

namespace glyphstyle {

// ---------------------------------------------------------------------------
// TensorArchive: a versioned container of named arrays plus a JSON metadata
// block. Little-endian binary layout:
//
//   magic   "GSAR"            4 bytes
//   version u32               currently 1
//   meta    u64 length + UTF-8 JSON
//   count   u64
//   entry*  { name: u64 len + bytes,
//             dtype: u8 ('f' = float32, 'd' = float64),
//             rank:  u32, dims: i32 * rank,
//             data:  raw little-endian scalars }
//
// Writes go through a temp file and a rename so readers never observe a
// half-written archive.
// ---------------------------------------------------------------------------

class TensorArchive {
 public:
  nlohmann::json meta;

  template <class T>
  void put(const std::string& name, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "archive supports float32/float64 tensors");
    Entry e;
    e.dtype = std::is_same_v<T, float> ? 'f' : 'd';
    e.dims = t.shape();
    e.bytes.resize(static_cast<std::size_t>(t.size()) * sizeof(T));
    std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
    entries_[name] = std::move(e);
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  template <class T>
  Tensor<T> get(const std::string& name) const {
    auto it = entries_.find(name);
    check(it != entries_.end(), "archive: missing array '" + name + "'");
    const Entry& e = it->second;
    const char want = std::is_same_v<T, float> ? 'f' : 'd';
    check(e.dtype == want, "archive: dtype mismatch for '" + name + "'");
    Tensor<T> t(e.dims);
    check(e.bytes.size() == static_cast<std::size_t>(t.size()) * sizeof(T),
          "archive: corrupt payload for '" + name + "'");
    std::memcpy(t.data(), e.bytes.data(), e.bytes.size());
    return t;
  }

  void save(const std::filesystem::path& path) const {
    namespace fs = std::filesystem;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      check(os.good(), "archive: cannot open " + tmp.string() + " for writing");
      os.write("GSAR", 4);
      write_u32(os, 1);
      const std::string m = meta.dump();
      write_u64(os, m.size());
      os.write(m.data(), static_cast<std::streamsize>(m.size()));
      write_u64(os, entries_.size());
      for (const auto& [name, e] : entries_) {
        write_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(e.dtype);
        write_u32(os, static_cast<std::uint32_t>(e.dims.size()));
        for (int d : e.dims) write_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(e.bytes.data()),
                 static_cast<std::streamsize>(e.bytes.size()));
      }
      check(os.good(), "archive: write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
  }

  static TensorArchive load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.good(), "archive: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    check(is.good() && std::memcmp(magic, "GSAR", 4) == 0,
          "archive: bad magic in " + path.string());
    const std::uint32_t version = read_u32(is);
    check(version == 1, "archive: unsupported version " + std::to_string(version));
    TensorArchive a;
    const std::uint64_t mlen = read_u64(is);
    std::string m(mlen, '\0');
    is.read(m.data(), static_cast<std::streamsize>(mlen));
    a.meta = nlohmann::json::parse(m);
    const std::uint64_t count = read_u64(is);
    for (std::uint64_t i = 0; i < count; ++i) {
      const std::uint64_t nlen = read_u64(is);
      std::string name(nlen, '\0');
      is.read(name.data(), static_cast<std::streamsize>(nlen));
      Entry e;
      e.dtype = static_cast<char>(is.get());
      check(e.dtype == 'f' || e.dtype == 'd', "archive: bad dtype");
      const std::uint32_t rank = read_u32(is);
      check(rank <= 8, "archive: implausible rank");
      std::int64_t numel = 1;
      for (std::uint32_t r = 0; r < rank; ++r) {
        int d = static_cast<int>(read_u32(is));
        e.dims.push_back(d);
        numel *= d;
      }
      e.bytes.resize(static_cast<std::size_t>(numel) * (e.dtype == 'f' ? 4 : 8));
      is.read(reinterpret_cast<char*>(e.bytes.data()),
              static_cast<std::streamsize>(e.bytes.size()));
      check(is.good(), "archive: truncated payload in " + path.string());
      a.entries_[name] = std::move(e);
    }
    return a;
  }

 private:
  struct Entry {
    char dtype = 'f';
    std::vector<int> dims;
    std::vector<std::uint8_t> bytes;
  };

  static void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
  }
  static void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
  }
  static std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }
  static std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace glyphstyle
