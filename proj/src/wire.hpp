#pragma once

// Little-endian byte-stream helpers shared by the binary file formats.
// Internal to the library; the context string prefixes every diagnostic.

#include <bit>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace synprune::wire {

class Writer {
 public:
  Writer(const std::string& path, std::string context)
      : context_(std::move(context)), out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error(context_ + ": cannot open for writing: " + path);
  }
  void u8(std::uint8_t v) { out_.put(char(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.put(char((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.put(char((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) {
    u32(std::uint32_t(s.size()));
    out_.write(s.data(), std::streamsize(s.size()));
  }
  void bytes(const std::vector<std::uint8_t>& b) {
    out_.write(reinterpret_cast<const char*>(b.data()), std::streamsize(b.size()));
  }
  void close(const std::string& path) {
    out_.flush();
    if (!out_) throw std::runtime_error(context_ + ": write failure: " + path);
  }

 private:
  std::string context_;
  std::ofstream out_;
};

class Reader {
 public:
  Reader(const std::string& path, std::string context)
      : context_(std::move(context)), path_(path), in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error(context_ + ": cannot open: " + path);
  }
  std::uint8_t u8() { return take(1)[0]; }
  std::uint32_t u32() {
    auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[std::size_t(i)]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    auto b = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[std::size_t(i)]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str() {
    const std::uint32_t n = u32();
    auto b = take(n);
    return std::string(reinterpret_cast<const char*>(b.data()), b.size());
  }
  std::vector<std::uint8_t> take(std::size_t n) {
    std::vector<std::uint8_t> b(n);
    in_.read(reinterpret_cast<char*>(b.data()), std::streamsize(n));
    offset_ += std::size_t(in_.gcount());
    if (std::size_t(in_.gcount()) != n)
      throw std::runtime_error(context_ + ": " + path_ + " truncated at byte " +
                               std::to_string(offset_));
    return b;
  }
  bool at_eof() {
    if (in_.peek() == std::ifstream::traits_type::eof()) return true;
    return false;
  }

 private:
  std::string context_;
  std::string path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
};

}  // namespace synprune::wire
