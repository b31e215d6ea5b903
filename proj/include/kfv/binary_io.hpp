#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "kfv/common.hpp"

namespace kfv::bin {

// Little-endian encoder for checkpoint files.
class Writer {
 public:
  void magic(std::string_view m) { buf_.append(m); }
  void u64(std::uint64_t v);
  void f64(double v);
  void str(std::string_view s);
  // Shape (rows, cols) followed by column-major values.
  void matrix(const Mat& m);
  void vector(const Vec& v);

  const std::string& bytes() const { return buf_; }
  void append_raw(std::string_view b) { buf_.append(b); }

 private:
  std::string buf_;
};

// Bounds-checked decoder; every failure raises ParseError.
class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  void expect_magic(std::string_view m);
  std::uint64_t u64();
  double f64();
  std::string str();
  Mat matrix();
  Vec vector();
  std::string_view raw(std::size_t n);

  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace kfv::bin
