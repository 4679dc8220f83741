#include "ftseg/weight_archive.hpp"

#include "ftseg/io_util.hpp"

#include <zlib.h>

#include <fstream>

namespace ftseg {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'S', 'W'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kPreamble = 16;

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

std::uint64_t get_le(const std::uint8_t* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

DType parse_dtype(const std::string& s, std::uint64_t offset) {
  if (s == "F32") return DType::F32;
  if (s == "F64") return DType::F64;
  throw ArchiveError("unknown dtype '" + s + "'", offset);
}

}  // namespace

std::string to_string(DType d) { return d == DType::F32 ? "F32" : "F64"; }
std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks
  while (n > 0) {
    const uInt chunk = uInt(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return std::uint32_t(crc);
}

void WeightArchive::add(ArchiveTensor t) {
  if (index_.count(t.name)) throw std::invalid_argument("duplicate tensor name '" + t.name + "'");
  if (t.bytes.size() != std::size_t(t.count()) * dtype_size(t.dtype))
    throw std::invalid_argument("tensor '" + t.name + "' payload does not match its shape");
  index_.emplace(t.name, tensors_.size());
  tensors_.push_back(std::move(t));
}

const ArchiveTensor& WeightArchive::at(const std::string& name) const {
  const auto* t = find(name);
  if (!t) throw std::out_of_range("tensor '" + name + "' not in archive");
  return *t;
}

const ArchiveTensor* WeightArchive::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &tensors_[it->second];
}

std::vector<std::uint8_t> WeightArchive::serialize() const {
  nlohmann::json entries = nlohmann::json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& t : tensors_) {
    entries.push_back({{"name", t.name},
                       {"dtype", to_string(t.dtype)},
                       {"shape", t.shape},
                       {"offset", payload.size()},
                       {"nbytes", t.bytes.size()}});
    payload.insert(payload.end(), t.bytes.begin(), t.bytes.end());
  }
  nlohmann::json header = {{"tensors", entries},
                           {"payload_crc32", crc32_of(payload.data(), payload.size())},
                           {"metadata", metadata_}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le(out, kVersion, 4);
  put_le(out, text.size(), 8);
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

WeightArchive WeightArchive::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kPreamble) throw ArchiveError("file shorter than preamble", bytes.size());
  if (!std::equal(kMagic, kMagic + 4, bytes.begin())) throw ArchiveError("bad magic", 0);
  const auto version = get_le(bytes.data() + 4, 4);
  if (version != kVersion) throw ArchiveError("unsupported version " + std::to_string(version), 4);
  const auto header_len = get_le(bytes.data() + 8, 8);
  if (header_len > bytes.size() - kPreamble) throw ArchiveError("truncated header", bytes.size());

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + kPreamble, bytes.begin() + kPreamble + std::ptrdiff_t(header_len));
  } catch (const nlohmann::json::parse_error& e) {
    throw ArchiveError(std::string("header is not valid JSON: ") + e.what(), kPreamble + e.byte);
  }
  if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_array())
    throw ArchiveError("header lacks a tensor list", kPreamble);

  const std::uint64_t payload_start = kPreamble + header_len;
  const std::uint64_t payload_len = bytes.size() - payload_start;
  WeightArchive archive;
  std::uint64_t expected_offset = 0;
  for (const auto& e : header["tensors"]) {
    try {
      ArchiveTensor t;
      t.name = e.at("name").get<std::string>();
      t.dtype = parse_dtype(e.at("dtype").get<std::string>(), kPreamble);
      t.shape = e.at("shape").get<Shape>();
      for (auto d : t.shape)
        if (d < 1) throw ArchiveError("tensor '" + t.name + "' has non-positive dimension", kPreamble);
      const auto offset = e.at("offset").get<std::uint64_t>();
      const auto nbytes = e.at("nbytes").get<std::uint64_t>();
      if (nbytes != std::uint64_t(t.count()) * dtype_size(t.dtype))
        throw ArchiveError("tensor '" + t.name + "' declares " + std::to_string(nbytes) + " bytes for shape " +
                               shape_string(t.shape),
                           payload_start + offset);
      if (offset != expected_offset)
        throw ArchiveError("tensor '" + t.name + "' is not contiguous", payload_start + offset);
      if (offset + nbytes > payload_len)
        throw ArchiveError("truncated payload in tensor '" + t.name + "'", bytes.size());
      if (archive.contains(t.name)) throw ArchiveError("duplicate tensor name '" + t.name + "'", payload_start + offset);
      const auto* begin = bytes.data() + payload_start + offset;
      t.bytes.assign(begin, begin + nbytes);
      expected_offset = offset + nbytes;
      archive.add(std::move(t));
    } catch (const nlohmann::json::exception& ex) {
      throw ArchiveError(std::string("malformed tensor entry: ") + ex.what(), kPreamble);
    }
  }
  if (expected_offset != payload_len)
    throw ArchiveError("trailing bytes after last tensor", payload_start + expected_offset);
  if (header.contains("payload_crc32")) {
    const auto stored = header["payload_crc32"].get<std::uint32_t>();
    if (stored != crc32_of(bytes.data() + payload_start, payload_len))
      throw ArchiveError("payload checksum mismatch (file corrupted)", payload_start);
  }
  if (header.contains("metadata")) archive.metadata_ = header["metadata"];
  return archive;
}

WeightArchive load_weight_archive(const std::filesystem::path& path) {
  return WeightArchive::deserialize(read_file_bytes(path));
}

void save_weight_archive(const WeightArchive& archive, const std::filesystem::path& path) {
  write_file_atomic(path, archive.serialize());
}

}  // namespace ftseg
