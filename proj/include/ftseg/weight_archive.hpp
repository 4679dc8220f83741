#ifndef FTSEG_WEIGHT_ARCHIVE_HPP
#define FTSEG_WEIGHT_ARCHIVE_HPP

#include "ftseg/tensor.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace ftseg {

enum class DType { F32, F64 };

std::string to_string(DType d);
std::size_t dtype_size(DType d);

/// Parse or validation failure, carrying the byte offset where it was detected.
class ArchiveError : public std::runtime_error {
 public:
  ArchiveError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

struct ArchiveTensor {
  std::string name;
  DType dtype = DType::F32;
  Shape shape;
  std::vector<std::uint8_t> bytes;  // little-endian payload

  std::int64_t count() const { return shape_count(shape); }

  template <typename Scalar>
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> values() const {
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> out(count());
    if (dtype == DType::F32) {
      for (std::int64_t i = 0; i < count(); ++i) {
        float f;
        std::memcpy(&f, bytes.data() + 4 * i, 4);
        out[i] = Scalar(f);
      }
    } else {
      for (std::int64_t i = 0; i < count(); ++i) {
        double d;
        std::memcpy(&d, bytes.data() + 8 * i, 8);
        out[i] = Scalar(d);
      }
    }
    return out;
  }

  template <typename Derived>
  static ArchiveTensor from_values(std::string name, Shape shape, const Eigen::MatrixBase<Derived>& v,
                                   DType dtype = DType::F32) {
    ArchiveTensor t{std::move(name), dtype, std::move(shape), {}};
    if (shape_count(t.shape) != v.size()) throw ShapeError("ArchiveTensor " + t.name + ": size does not match shape");
    t.bytes.resize(std::size_t(v.size()) * dtype_size(dtype));
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (dtype == DType::F32) {
        const float f = float(v[i]);
        std::memcpy(t.bytes.data() + 4 * i, &f, 4);
      } else {
        const double d = double(v[i]);
        std::memcpy(t.bytes.data() + 8 * i, &d, 8);
      }
    }
    return t;
  }

  bool operator==(const ArchiveTensor&) const = default;
};

/// Ordered named-tensor container; names are unique.
///
/// File layout (`.wts`):
///   magic "FTSW" | u32 version (1) | u64 header length L | L bytes of JSON header | payload
/// The header is {"tensors": [{"name", "dtype", "shape", "offset", "nbytes"}...],
/// "payload_crc32": u32, "metadata": {...}}; offsets are relative to the payload
/// start and tensors are stored back to back in header order.
class WeightArchive {
 public:
  void add(ArchiveTensor t);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const ArchiveTensor& at(const std::string& name) const;
  const ArchiveTensor* find(const std::string& name) const;
  const std::vector<ArchiveTensor>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  nlohmann::json& metadata() { return metadata_; }
  const nlohmann::json& metadata() const { return metadata_; }

  std::vector<std::uint8_t> serialize() const;
  static WeightArchive deserialize(const std::vector<std::uint8_t>& bytes);

  bool operator==(const WeightArchive& o) const { return tensors_ == o.tensors_ && metadata_ == o.metadata_; }

 private:
  std::vector<ArchiveTensor> tensors_;
  std::map<std::string, std::size_t> index_;
  nlohmann::json metadata_ = nlohmann::json::object();
};

WeightArchive load_weight_archive(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames, so readers never see a partial file.
void save_weight_archive(const WeightArchive& archive, const std::filesystem::path& path);

std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n);

}  // namespace ftseg

#endif  // FTSEG_WEIGHT_ARCHIVE_HPP
