#include "kfv/binary_io.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace kfv::bin {

void Writer::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void Writer::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void Writer::str(std::string_view s) {
  u64(s.size());
  buf_.append(s);
}

void Writer::matrix(const Mat& m) {
  u64(static_cast<std::uint64_t>(m.rows()));
  u64(static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) f64(m.data()[i]);
}

void Writer::vector(const Vec& v) {
  u64(static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) f64(v[i]);
}

void Reader::need(std::size_t n) const {
  if (data_.size() - pos_ < n) throw ParseError("unexpected end of file");
}

void Reader::expect_magic(std::string_view m) {
  need(m.size());
  if (data_.substr(pos_, m.size()) != m)
    throw ParseError("bad magic header, expected " + std::string(m));
  pos_ += m.size();
}

std::uint64_t Reader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

double Reader::f64() { return std::bit_cast<double>(u64()); }

std::string Reader::str() {
  const auto n = u64();
  need(n);
  std::string s(data_.substr(pos_, n));
  pos_ += n;
  return s;
}

Mat Reader::matrix() {
  const auto rows = u64();
  const auto cols = u64();
  if (rows > (1u << 24) || cols > (1u << 24)) throw ParseError("implausible matrix shape");
  need(rows * cols * 8);
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f64();
  return m;
}

Vec Reader::vector() {
  const auto n = u64();
  if (n > (1u << 26)) throw ParseError("implausible vector length");
  need(n * 8);
  Vec v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = f64();
  return v;
}

std::string_view Reader::raw(std::size_t n) {
  need(n);
  auto s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write failed: " + path);
}

}  // namespace kfv::bin
