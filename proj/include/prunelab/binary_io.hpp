#pragma once

// Little-endian binary helpers shared by the checkpoint, mask, dataset and
// components containers.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "prunelab/error.hpp"

namespace prunelab::io {

template <typename T>
T to_little(T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b.data(), sizeof(T));
  }
  return v;
}

class Writer {
 public:
  explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error("cannot open '" + path + "' for writing");
  }

  void magic(std::string_view m) { out_.write(m.data(), static_cast<std::streamsize>(m.size())); }

  template <typename T>
  void put(T v) {
    v = to_little(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  template <typename T>
  void put_all(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
      out_.write(reinterpret_cast<const char*>(values.data()),
                 static_cast<std::streamsize>(values.size_bytes()));
    } else {
      for (const T& v : values) put(v);
    }
  }

  void bytes(std::span<const unsigned char> b) {
    out_.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  }

  void finish() {
    out_.flush();
    if (!out_) throw Error("write failed for '" + path_ + "'");
  }

 private:
  std::string path_;
  std::ofstream out_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw Error("cannot open '" + path + "' for reading");
  }

  void expect_magic(std::string_view m) {
    std::string got(m.size(), '\0');
    in_.read(got.data(), static_cast<std::streamsize>(m.size()));
    if (!in_ || got != m)
      throw FormatError("'" + path_ + "': bad magic, expected " + std::string(m));
  }

  void expect_version(std::uint32_t supported) {
    auto v = get<std::uint32_t>();
    if (v != supported)
      throw FormatError("'" + path_ + "': unsupported format version " + std::to_string(v));
  }

  template <typename T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    check();
    return to_little(v);
  }

  template <typename T>
  void get_all(std::span<T> values) {
    if constexpr (std::endian::native == std::endian::little) {
      in_.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
      check();
    } else {
      for (T& v : values) v = get<T>();
    }
  }

  void bytes(std::span<unsigned char> b) {
    in_.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size()));
    check();
  }

  /// Guards allocations driven by counts read from the file.
  void expect_at_most(std::uint64_t count, std::uint64_t limit, std::string_view what) {
    if (count > limit) throw FormatError("'" + path_ + "': implausible " + std::string(what));
  }

 private:
  void check() {
    if (!in_) throw FormatError("'" + path_ + "': truncated file");
  }

  std::string path_;
  std::ifstream in_;
};

}  // namespace prunelab::io
