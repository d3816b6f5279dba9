#pragma once

// Little-endian byte packing shared by the dataset and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

#include "pearl/error.hpp"

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace pearl::binio {

class Writer {
 public:
  template <class T>
  void put(T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void put_bytes(std::string_view bytes) { out_.append(bytes); }
  void put_doubles(std::span<const double> values) {
    out_.append(reinterpret_cast<const char*>(values.data()), values.size() * sizeof(double));
  }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : in_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string_view get_bytes(std::size_t count) {
    need(count);
    auto s = in_.substr(pos_, count);
    pos_ += count;
    return s;
  }
  void get_doubles(std::span<double> out) {
    const std::size_t bytes = out.size() * sizeof(double);
    need(bytes);
    std::memcpy(out.data(), in_.data() + pos_, bytes);
    pos_ += bytes;
  }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t count) const {
    if (in_.size() - pos_ < count) throw DataError("truncated binary file");
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace pearl::binio
