#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace ctmm::io {

/// Malformed or truncated file. The message names the field and byte offset.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL);

/// Binary container:
///   8-byte magic | u64 header length | JSON header | payload | u64 FNV-1a of all prior bytes.
/// Integers and floats are little-endian.
class Writer {
 public:
  explicit Writer(std::string_view magic);
  void header(const nlohmann::json& h);
  void u64(std::uint64_t v);
  void f64(double v);
  void u8(std::uint8_t v);
  void f64s(const std::vector<double>& v);  // length-prefixed
  void u8s(const std::vector<std::uint8_t>& v);
  std::vector<std::uint8_t> finish();

 private:
  std::vector<std::uint8_t> buf_;
  bool header_written_ = false;
};

class Reader {
 public:
  /// Verifies magic and checksum, then parses the header.
  Reader(std::vector<std::uint8_t> bytes, std::string_view magic, std::string what);
  const nlohmann::json& header() const { return header_; }
  std::uint64_t u64(const std::string& field);
  double f64(const std::string& field);
  std::uint8_t u8(const std::string& field);
  std::vector<double> f64s(const std::string& field);
  std::vector<std::uint8_t> u8s(const std::string& field);
  /// Throws if payload bytes remain before the checksum.
  void expect_end();
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n, const std::string& field);
  [[noreturn]] void fail(const std::string& field, const std::string& why) const;

  std::vector<std::uint8_t> bytes_;
  std::string what_;
  nlohmann::json header_;
  std::size_t pos_ = 0;
  std::size_t end_ = 0;
};

std::vector<std::uint8_t> read_file(const std::string& path);
/// Writes via a temporary sibling and rename so readers never see partial files.
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace ctmm::io
