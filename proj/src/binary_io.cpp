#include "superbloom/binary_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "superbloom/error.hpp"

namespace superbloom::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats assume a little-endian host");

template <typename T>
void append_raw(std::vector<std::uint8_t>& out, T v) {
  std::array<std::uint8_t, sizeof(T)> raw;
  std::memcpy(raw.data(), &v, sizeof(T));
  out.insert(out.end(), raw.begin(), raw.end());
}

}  // namespace

Writer::Writer(std::string_view magic, std::uint32_t version) {
  bytes_.assign(magic.begin(), magic.end());
  u32(version);
}

void Writer::u32(std::uint32_t v) { append_raw(bytes_, v); }
void Writer::u64(std::uint64_t v) { append_raw(bytes_, v); }
void Writer::f32(float v) { append_raw(bytes_, v); }
void Writer::f64(double v) { append_raw(bytes_, v); }

void Writer::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void Writer::u32_array(std::span<const std::uint32_t> values) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  bytes_.insert(bytes_.end(), p, p + values.size_bytes());
}

void Writer::f32_array(std::span<const float> values) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  bytes_.insert(bytes_.end(), p, p + values.size_bytes());
}

std::vector<std::uint8_t> Writer::finish() && {
  const std::uint32_t crc = crc32(bytes_);
  append_raw(bytes_, crc);
  return std::move(bytes_);
}

Reader::Reader(std::vector<std::uint8_t> bytes, std::string_view magic, std::uint32_t version,
               std::string_view what)
    : bytes_(std::move(bytes)), what_(what) {
  if (bytes_.size() < magic.size() + 8) {
    throw IoError(what_ + ": file truncated (" + std::to_string(bytes_.size()) + " bytes)");
  }
  if (std::memcmp(bytes_.data(), magic.data(), magic.size()) != 0) {
    throw IoError(what_ + ": bad magic, not a " + std::string(magic) + " file");
  }
  end_ = bytes_.size() - 4;
  pos_ = magic.size();
  const std::uint32_t found = u32();
  if (found != version) {
    throw IoError(what_ + ": format version " + std::to_string(found) + ", expected " +
                  std::to_string(version));
  }
  std::uint32_t stored;
  std::memcpy(&stored, bytes_.data() + end_, 4);
  if (stored != crc32(std::span(bytes_.data(), end_))) {
    throw IoError(what_ + ": checksum mismatch (file corrupt or truncated)");
  }
}

void Reader::need(std::size_t n) const {
  if (end_ - pos_ < n) throw IoError(what_ + ": unexpected end of payload");
}

std::uint8_t Reader::u8() {
  need(1);
  return bytes_[pos_++];
}

#define SUPERBLOOM_READ_SCALAR(T)              \
  need(sizeof(T));                             \
  T v;                                         \
  std::memcpy(&v, bytes_.data() + pos_, sizeof(T)); \
  pos_ += sizeof(T);                           \
  return v

std::uint32_t Reader::u32() { SUPERBLOOM_READ_SCALAR(std::uint32_t); }
std::uint64_t Reader::u64() { SUPERBLOOM_READ_SCALAR(std::uint64_t); }
float Reader::f32() { SUPERBLOOM_READ_SCALAR(float); }
double Reader::f64() { SUPERBLOOM_READ_SCALAR(double); }

#undef SUPERBLOOM_READ_SCALAR

std::string Reader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
  pos_ += n;
  return s;
}

void Reader::u32_array(std::span<std::uint32_t> out) {
  need(out.size_bytes());
  std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

void Reader::f32_array(std::span<float> out) {
  need(out.size_bytes());
  std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
  pos_ += out.size_bytes();
}

void Reader::expect_end() const {
  if (pos_ != end_) throw IoError(what_ + ": trailing bytes after payload");
}

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace superbloom::io
