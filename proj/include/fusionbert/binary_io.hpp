#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "fusionbert/error.hpp"
#include "fusionbert/rng.hpp"

namespace fusionbert::io {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes_.insert(bytes_.end(), buf, buf + sizeof(T));
  }

  template <typename T>
  void put_array(const T* p, std::size_t n) {
    const auto* b = reinterpret_cast<const unsigned char*>(p);
    bytes_.insert(bytes_.end(), b, b + n * sizeof(T));
  }

  void put_string(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }

  // Appends the FNV-1a checksum of everything written so far.
  void seal() { put<std::uint64_t>(fnv1a(bytes_.data(), bytes_.size())); }

  const std::vector<unsigned char>& bytes() const { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<unsigned char>& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  // Validates the trailing checksum and hides it from subsequent reads.
  void verify_seal() {
    if (bytes_.size() < 8) throw DataError(what_ + ": truncated (no checksum)");
    end_ = bytes_.size() - 8;
    std::uint64_t stored;
    std::memcpy(&stored, bytes_.data() + end_, 8);
    if (stored != fnv1a(bytes_.data(), end_)) throw DataError(what_ + ": checksum mismatch");
  }

  void expect_magic(std::string_view m) {
    need(m.size());
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
      throw DataError(what_ + ": bad magic, expected \"" + std::string(m) + "\"");
    pos_ += m.size();
  }

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  template <typename T>
  void get_array(T* out, std::size_t n) {
    need(n * sizeof(T));
    std::memcpy(out, bytes_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == end_; }
  void expect_end() const {
    if (!at_end()) throw DataError(what_ + ": trailing bytes before checksum");
  }
  const std::string& what() const { return what_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > end_) throw DataError(what_ + ": truncated");
  }

  const std::vector<unsigned char>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
  std::size_t end_ = SIZE_MAX;
};

inline std::vector<unsigned char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed: " + p.string());
}

inline std::string read_text(const std::filesystem::path& p) {
  auto b = read_file(p);
  return {b.begin(), b.end()};
}

inline void write_text(const std::filesystem::path& p, std::string_view s) {
  write_file(p, std::vector<unsigned char>(s.begin(), s.end()));
}

}  // namespace fusionbert::io
