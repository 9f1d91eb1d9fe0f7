// Copyright 2026 The scanstereo Authors. Apache 2.0 License.
//
// On-disk formats. Every multi-byte field is little-endian regardless of host.
//
// Tensor archive:
//   offset 0   "SSA2"                          4 bytes
//   offset 4   version = 1                     u32
//   offset 8   tensor count                    u32
//   then, per tensor, an index entry:
//     name length                              u16
//     name (UTF-8, no terminator)              name length bytes
//     dtype (0 = f32)                          u8
//     rank                                     u8
//     dims                                     rank x u32
//     data offset from start of file           u64
//   then the data section: each payload row-major, packed in index order.
//
// An empty archive is exactly kArchiveHeaderBytes long.
//
// PFM (single channel): "Pf\n<width> <height>\n-1.0\n" followed by
// width * height f32 values, bottom row first.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "scanstereo/tensor.hpp"

namespace scanstereo {

inline constexpr std::size_t kArchiveHeaderBytes = 12;
inline constexpr std::uint32_t kArchiveVersion = 1;

enum class DType : std::uint8_t { kFloat32 = 0 };

class ArchiveError : public std::runtime_error {
 public:
  enum class Kind {
    kDuplicateName,
    kTruncated,
    kBadMagic,
    kBadVersion,
    kUnknownDtype,
    kBadOffset,
    kMissingTensor,
    kShapeMismatch,
  };
  ArchiveError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  bool operator==(const NamedTensor&) const = default;
};

class TensorArchive {
 public:
  void add(NamedTensor tensor);
  void add(std::string name, std::vector<std::uint32_t> dims,
           std::span<const float> data);
  /// Narrows doubles to f32. Callers opt in explicitly since the conversion
  /// is lossy.
  void add_narrowed(std::string name, std::vector<std::uint32_t> dims,
                    std::span<const double> data);

  bool contains(const std::string& name) const;
  const NamedTensor& get(const std::string& name) const;
  /// Fetches a tensor as doubles after checking its dims.
  std::vector<double> get_doubles(const std::string& name,
                                  const std::vector<std::uint32_t>& dims) const;

  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  std::size_t size() const { return tensors_.size(); }

  std::vector<std::uint8_t> serialize() const;
  static TensorArchive deserialize(std::span<const std::uint8_t> bytes);

  void save(const std::filesystem::path& path) const;
  static TensorArchive load(const std::filesystem::path& path);

  bool operator==(const TensorArchive& o) const { return tensors_ == o.tensors_; }

 private:
  std::vector<NamedTensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

void put_matrix(TensorArchive& archive, const std::string& name,
                const Matrix<double>& m);
Matrix<double> get_matrix(const TensorArchive& archive, const std::string& name,
                          std::size_t rows, std::size_t cols);
void put_vector(TensorArchive& archive, const std::string& name,
                std::span<const double> v);
std::vector<double> get_vector(const TensorArchive& archive,
                               const std::string& name, std::size_t size);

class FormatError : public std::runtime_error {
 public:
  enum class Kind { kMalformedHeader, kSizeMismatch, kNonFinite };
  FormatError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Row 0 of the matrix is the top image row.
std::vector<std::uint8_t> pfm_encode(const Matrix<float>& map);
Matrix<float> pfm_decode(std::span<const std::uint8_t> bytes);

void pfm_write(const std::filesystem::path& path, const Matrix<float>& map);
Matrix<float> pfm_read(const std::filesystem::path& path);
/// Double convenience wrappers; values are narrowed to f32 on write.
void pfm_write_narrowed(const std::filesystem::path& path,
                        const Matrix<double>& map);
Matrix<double> pfm_read_double(const std::filesystem::path& path);

/// Binary P6, maxval 255. Intensities are clamped to [0, 1] and rounded.
std::vector<std::uint8_t> ppm_encode(const Image& image);
Image ppm_decode(std::span<const std::uint8_t> bytes);
void ppm_write(const std::filesystem::path& path, const Image& image);
Image ppm_read(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);

}  // namespace scanstereo
