#include "jqas/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "jqas/error.hpp"

namespace jqas {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes little-endian");

bool Archive::has(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return true;
  return false;
}

const Tensor<float>& Archive::get(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a.data;
  throw DataError("archive has no array named '" + std::string(name) + "'");
}

void Archive::put(std::string name, Tensor<float> data) {
  for (auto& a : arrays) {
    if (a.name == name) {
      a.data = std::move(data);
      return;
    }
  }
  arrays.push_back({std::move(name), std::move(data)});
}

namespace {

template <typename U>
void put_raw(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw DataError(std::string("archive truncated while reading ") + what + " at byte offset " +
                      std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  const auto* p = reinterpret_cast<const Bytef*>(bytes.data());
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1u << 30));
    crc = crc32(crc, p, chunk);
    p += chunk;
    left -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string encode_archive(const Archive& archive) {
  std::string out = "JQAR";
  put_raw<std::uint32_t>(out, kArchiveVersion);
  const std::string manifest = archive.manifest.dump();
  put_raw<std::uint64_t>(out, manifest.size());
  out += manifest;
  put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(archive.arrays.size()));
  for (const auto& a : archive.arrays) {
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(a.data.rank()));
    for (std::size_t d : a.data.shape()) put_raw<std::uint64_t>(out, d);
    out.append(reinterpret_cast<const char*>(a.data.raw()), a.data.size() * sizeof(float));
  }
  put_raw<std::uint32_t>(out, crc_of(out));
  return out;
}

Archive decode_archive(std::string_view bytes) {
  if (bytes.size() < 4 + 4 + 8 + 4 + 4 || bytes.substr(0, 4) != "JQAR") {
    throw DataError("not a tensor archive (bad magic or too short)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (stored != crc_of(body)) throw DataError("archive checksum mismatch (file is corrupt)");

  Reader r(body);
  r.take(4, "magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kArchiveVersion) {
    throw DataError("unsupported archive version " + std::to_string(version));
  }
  const auto manifest_len = r.get<std::uint64_t>("manifest length");
  Archive a;
  try {
    a.manifest = nlohmann::json::parse(r.take(manifest_len, "manifest"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("archive manifest is not valid JSON: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>("array count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("array name length");
    std::string name(r.take(name_len, "array name"));
    const auto rank = r.get<std::uint32_t>("array rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>("array dims");
    const std::size_t n = shape_size(shape);
    const auto raw = r.take(n * sizeof(float), "array data");
    std::vector<float> data(n);
    std::memcpy(data.data(), raw.data(), raw.size());
    a.arrays.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
  }
  if (r.pos() != body.size()) throw DataError("archive has trailing bytes before the checksum");
  return a;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  write_file(path, encode_archive(archive));
}

Archive read_archive(const std::filesystem::path& path) {
  try {
    return decode_archive(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace jqas
