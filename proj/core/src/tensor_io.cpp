// Copyright 2026 The scanstereo Authors. Apache 2.0 License.

#include "scanstereo/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

namespace scanstereo {
namespace {

constexpr char kMagic[4] = {'S', 'S', 'A', '2'};

void append_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

template <typename U>
void append_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  }
}

void append_f32(std::vector<std::uint8_t>& out, float f) {
  append_le(out, std::bit_cast<std::uint32_t>(f));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U read_le(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(U);
    return v;
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw ArchiveError(ArchiveError::Kind::kTruncated,
                         std::string("tensor archive truncated while reading ") + what);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t element_count(const std::vector<std::uint32_t>& dims) {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

float load_f32(const std::uint8_t* p, bool little_endian) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    const int shift = little_endian ? 8 * i : 8 * (3 - i);
    bits |= static_cast<std::uint32_t>(p[i]) << shift;
  }
  return std::bit_cast<float>(bits);
}

// Netpbm-style header tokenizer: whitespace separated, '#' comments.
class HeaderLexer {
 public:
  explicit HeaderLexer(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::string token() {
    skip_space();
    std::string tok;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) {
      tok.push_back(static_cast<char>(bytes_[pos_++]));
    }
    if (tok.empty()) {
      throw FormatError(FormatError::Kind::kMalformedHeader, "unexpected end of header");
    }
    return tok;
  }

  /// Consumes exactly one whitespace byte terminating the header.
  std::size_t finish() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError(FormatError::Kind::kMalformedHeader,
                        "header not terminated by whitespace");
    }
    return pos_ + 1;
  }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

long parse_positive(const std::string& tok, const char* what) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || ptr != tok.data() + tok.size() || v <= 0) {
    throw FormatError(FormatError::Kind::kMalformedHeader,
                      std::string("bad ") + what + " '" + tok + "'");
  }
  return v;
}

}  // namespace

void TensorArchive::add(NamedTensor tensor) {
  if (index_.contains(tensor.name)) {
    throw ArchiveError(ArchiveError::Kind::kDuplicateName,
                       "duplicate tensor name '" + tensor.name + "'");
  }
  if (tensor.name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw ArchiveError(ArchiveError::Kind::kShapeMismatch, "tensor name too long");
  }
  if (tensor.dims.size() > std::numeric_limits<std::uint8_t>::max()) {
    throw ArchiveError(ArchiveError::Kind::kShapeMismatch,
                       "tensor rank too large for '" + tensor.name + "'");
  }
  if (element_count(tensor.dims) != tensor.data.size()) {
    throw ArchiveError(ArchiveError::Kind::kShapeMismatch,
                       "dims do not match payload for '" + tensor.name + "'");
  }
  index_.emplace(tensor.name, tensors_.size());
  tensors_.push_back(std::move(tensor));
}

void TensorArchive::add(std::string name, std::vector<std::uint32_t> dims,
                        std::span<const float> data) {
  add(NamedTensor{std::move(name), std::move(dims), {data.begin(), data.end()}});
}

void TensorArchive::add_narrowed(std::string name, std::vector<std::uint32_t> dims,
                                 std::span<const double> data) {
  std::vector<float> narrowed(data.size());
  std::transform(data.begin(), data.end(), narrowed.begin(),
                 [](double v) { return static_cast<float>(v); });
  add(NamedTensor{std::move(name), std::move(dims), std::move(narrowed)});
}

bool TensorArchive::contains(const std::string& name) const {
  return index_.contains(name);
}

const NamedTensor& TensorArchive::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw ArchiveError(ArchiveError::Kind::kMissingTensor,
                       "tensor '" + name + "' not found in archive");
  }
  return tensors_[it->second];
}

std::vector<double> TensorArchive::get_doubles(
    const std::string& name, const std::vector<std::uint32_t>& dims) const {
  const NamedTensor& t = get(name);
  if (t.dims != dims) {
    throw ArchiveError(ArchiveError::Kind::kShapeMismatch,
                       "tensor '" + name + "' has unexpected dims");
  }
  return {t.data.begin(), t.data.end()};
}

std::vector<std::uint8_t> TensorArchive::serialize() const {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  append_le<std::uint32_t>(out, kArchiveVersion);
  append_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors_.size()));

  std::size_t index_bytes = 0;
  for (const auto& t : tensors_) {
    index_bytes += 2 + t.name.size() + 1 + 1 + 4 * t.dims.size() + 8;
  }
  std::uint64_t offset = kArchiveHeaderBytes + index_bytes;
  for (const auto& t : tensors_) {
    append_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out.insert(out.end(), t.name.begin(), t.name.end());
    append_u8(out, static_cast<std::uint8_t>(DType::kFloat32));
    append_u8(out, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) append_le<std::uint32_t>(out, d);
    append_le<std::uint64_t>(out, offset);
    offset += 4 * t.data.size();
  }
  out.reserve(offset);
  for (const auto& t : tensors_) {
    for (float f : t.data) append_f32(out, f);
  }
  return out;
}

TensorArchive TensorArchive::deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(4, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw ArchiveError(ArchiveError::Kind::kBadMagic, "not a tensor archive (bad magic)");
  }
  const auto version = r.read_le<std::uint32_t>("version");
  if (version != kArchiveVersion) {
    throw ArchiveError(ArchiveError::Kind::kBadVersion,
                       "unsupported archive version " + std::to_string(version));
  }
  const auto count = r.read_le<std::uint32_t>("tensor count");

  struct Entry {
    NamedTensor tensor;
    std::uint64_t offset;
  };
  std::vector<Entry> entries;
  entries.reserve(std::min<std::uint32_t>(count, 1u << 16));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.read_le<std::uint16_t>("name length");
    auto name_bytes = r.take(name_len, "name");
    Entry e;
    e.tensor.name.assign(name_bytes.begin(), name_bytes.end());
    const auto dtype = r.read_le<std::uint8_t>("dtype");
    if (dtype != static_cast<std::uint8_t>(DType::kFloat32)) {
      throw ArchiveError(ArchiveError::Kind::kUnknownDtype,
                         "unknown dtype " + std::to_string(dtype) + " for '" +
                             e.tensor.name + "'");
    }
    const auto rank = r.read_le<std::uint8_t>("rank");
    e.tensor.dims.resize(rank);
    for (auto& d : e.tensor.dims) d = r.read_le<std::uint32_t>("dims");
    e.offset = r.read_le<std::uint64_t>("data offset");
    entries.push_back(std::move(e));
  }

  const std::uint64_t data_start = r.pos();
  // Validate extents: in bounds and pairwise non-overlapping.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> extents;
  for (const auto& e : entries) {
    const std::uint64_t n = element_count(e.tensor.dims);
    const std::uint64_t len = 4 * n;
    if (e.offset < data_start) {
      throw ArchiveError(ArchiveError::Kind::kBadOffset,
                         "payload of '" + e.tensor.name + "' overlaps the index");
    }
    if (e.offset > bytes.size() || bytes.size() - e.offset < len) {
      throw ArchiveError(ArchiveError::Kind::kTruncated,
                         "payload of '" + e.tensor.name + "' runs past end of archive");
    }
    extents.emplace_back(e.offset, e.offset + len);
  }
  std::sort(extents.begin(), extents.end());
  for (std::size_t i = 1; i < extents.size(); ++i) {
    if (extents[i].first < extents[i - 1].second) {
      throw ArchiveError(ArchiveError::Kind::kBadOffset, "overlapping tensor payloads");
    }
  }

  TensorArchive archive;
  for (auto& e : entries) {
    const std::uint64_t n = element_count(e.tensor.dims);
    e.tensor.data.resize(n);
    const std::uint8_t* p = bytes.data() + e.offset;
    for (std::uint64_t k = 0; k < n; ++k) e.tensor.data[k] = load_f32(p + 4 * k, true);
    archive.add(std::move(e.tensor));
  }
  return archive;
}

void TensorArchive::save(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path));
}

void put_matrix(TensorArchive& archive, const std::string& name,
                const Matrix<double>& m) {
  archive.add_narrowed(name,
                       {static_cast<std::uint32_t>(m.rows()),
                        static_cast<std::uint32_t>(m.cols())},
                       m.data());
}

Matrix<double> get_matrix(const TensorArchive& archive, const std::string& name,
                          std::size_t rows, std::size_t cols) {
  return Matrix<double>(
      rows, cols,
      archive.get_doubles(name, {static_cast<std::uint32_t>(rows),
                                 static_cast<std::uint32_t>(cols)}));
}

void put_vector(TensorArchive& archive, const std::string& name,
                std::span<const double> v) {
  archive.add_narrowed(name, {static_cast<std::uint32_t>(v.size())}, v);
}

std::vector<double> get_vector(const TensorArchive& archive, const std::string& name,
                               std::size_t size) {
  return archive.get_doubles(name, {static_cast<std::uint32_t>(size)});
}

std::vector<std::uint8_t> pfm_encode(const Matrix<float>& map) {
  if (map.rows() == 0 || map.cols() == 0) {
    throw ShapeError("pfm_encode: empty map");
  }
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (!std::isfinite(map.data()[i])) {
      throw FormatError(FormatError::Kind::kNonFinite,
                        "pfm_encode: non-finite value at flat index " + std::to_string(i));
    }
  }
  const std::string header = "Pf\n" + std::to_string(map.cols()) + " " +
                             std::to_string(map.rows()) + "\n-1.0\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 4 * map.size());
  for (std::size_t r = map.rows(); r-- > 0;) {
    for (float f : map.row(r)) append_f32(out, f);
  }
  return out;
}

Matrix<float> pfm_decode(std::span<const std::uint8_t> bytes) {
  HeaderLexer lex(bytes);
  const std::string kind = lex.token();
  if (kind != "Pf") {
    throw FormatError(FormatError::Kind::kMalformedHeader,
                      "expected single-channel 'Pf' magic, got '" + kind + "'");
  }
  const long width = parse_positive(lex.token(), "width");
  const long height = parse_positive(lex.token(), "height");
  const std::string scale_tok = lex.token();
  double scale = 0.0;
  try {
    std::size_t used = 0;
    scale = std::stod(scale_tok, &used);
    if (used != scale_tok.size()) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw FormatError(FormatError::Kind::kMalformedHeader, "bad scale '" + scale_tok + "'");
  }
  if (scale == 0.0 || !std::isfinite(scale)) {
    throw FormatError(FormatError::Kind::kMalformedHeader, "scale must be non-zero");
  }
  const std::size_t start = lex.finish();
  const std::size_t w = static_cast<std::size_t>(width);
  const std::size_t h = static_cast<std::size_t>(height);
  const std::size_t expected = 4 * w * h;
  if (bytes.size() - start != expected) {
    throw FormatError(FormatError::Kind::kSizeMismatch,
                      "PFM payload is " + std::to_string(bytes.size() - start) +
                          " bytes, expected " + std::to_string(expected));
  }
  const bool little = scale < 0.0;
  Matrix<float> map(h, w);
  const std::uint8_t* p = bytes.data() + start;
  for (std::size_t r = h; r-- > 0;) {
    for (std::size_t c = 0; c < w; ++c, p += 4) map(r, c) = load_f32(p, little);
  }
  return map;
}

void pfm_write(const std::filesystem::path& path, const Matrix<float>& map) {
  write_file_bytes(path, pfm_encode(map));
}

Matrix<float> pfm_read(const std::filesystem::path& path) {
  return pfm_decode(read_file_bytes(path));
}

void pfm_write_narrowed(const std::filesystem::path& path, const Matrix<double>& map) {
  Matrix<float> f(map.rows(), map.cols());
  std::transform(map.data().begin(), map.data().end(), f.data().begin(),
                 [](double v) { return static_cast<float>(v); });
  pfm_write(path, f);
}

Matrix<double> pfm_read_double(const std::filesystem::path& path) {
  Matrix<float> f = pfm_read(path);
  return Matrix<double>(f.rows(), f.cols(),
                        std::vector<double>(f.data().begin(), f.data().end()));
}

std::vector<std::uint8_t> ppm_encode(const Image& image) {
  if (image.dim2() != 3 || image.dim0() == 0 || image.dim1() == 0) {
    throw ShapeError("ppm_encode: expected a non-empty H x W x 3 image");
  }
  const std::string header = "P6\n" + std::to_string(image.dim1()) + " " +
                             std::to_string(image.dim0()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.size());
  for (double v : image.data()) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    out.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0)));
  }
  return out;
}

Image ppm_decode(std::span<const std::uint8_t> bytes) {
  HeaderLexer lex(bytes);
  const std::string kind = lex.token();
  if (kind != "P6") {
    throw FormatError(FormatError::Kind::kMalformedHeader,
                      "expected binary 'P6' magic, got '" + kind + "'");
  }
  const long width = parse_positive(lex.token(), "width");
  const long height = parse_positive(lex.token(), "height");
  const long maxval = parse_positive(lex.token(), "maxval");
  if (maxval > 255) {
    throw FormatError(FormatError::Kind::kMalformedHeader, "only 8-bit PPM supported");
  }
  const std::size_t start = lex.finish();
  const std::size_t w = static_cast<std::size_t>(width);
  const std::size_t h = static_cast<std::size_t>(height);
  if (bytes.size() - start != 3 * w * h) {
    throw FormatError(FormatError::Kind::kSizeMismatch, "PPM payload size mismatch");
  }
  Image image(h, w, 3);
  const double inv = 1.0 / static_cast<double>(maxval);
  for (std::size_t k = 0; k < image.size(); ++k) {
    image.data()[k] = bytes[start + k] * inv;
  }
  return image;
}

void ppm_write(const std::filesystem::path& path, const Image& image) {
  write_file_bytes(path, ppm_encode(image));
}

Image ppm_read(const std::filesystem::path& path) {
  return ppm_decode(read_file_bytes(path));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading", path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed", path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing", path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed", path.string());
}

}  // namespace scanstereo
