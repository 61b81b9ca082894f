#include "ctmm/io/container.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

namespace ctmm::io {

std::uint64_t fnv1a(const std::uint8_t* data, std::size_t n, std::uint64_t h) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t bits_of(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, 8);
  return u;
}

double from_bits(std::uint64_t u) {
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

}  // namespace

Writer::Writer(std::string_view magic) {
  if (magic.size() != 8) throw std::invalid_argument("container magic must be 8 bytes");
  buf_.assign(magic.begin(), magic.end());
}

void Writer::header(const nlohmann::json& h) {
  const std::string s = h.dump();
  put_u64(buf_, s.size());
  buf_.insert(buf_.end(), s.begin(), s.end());
  header_written_ = true;
}

void Writer::u64(std::uint64_t v) { put_u64(buf_, v); }
void Writer::f64(double v) { put_u64(buf_, bits_of(v)); }
void Writer::u8(std::uint8_t v) { buf_.push_back(v); }

void Writer::f64s(const std::vector<double>& v) {
  u64(v.size());
  for (double d : v) f64(d);
}

void Writer::u8s(const std::vector<std::uint8_t>& v) {
  u64(v.size());
  buf_.insert(buf_.end(), v.begin(), v.end());
}

std::vector<std::uint8_t> Writer::finish() {
  if (!header_written_) throw std::logic_error("container header missing");
  put_u64(buf_, fnv1a(buf_.data(), buf_.size()));
  return std::move(buf_);
}

Reader::Reader(std::vector<std::uint8_t> bytes, std::string_view magic, std::string what)
    : bytes_(std::move(bytes)), what_(std::move(what)) {
  if (bytes_.size() < 24) fail("file", "truncated: " + std::to_string(bytes_.size()) + " bytes");
  if (std::memcmp(bytes_.data(), magic.data(), 8) != 0) fail("magic", "not a " + what_ + " file");
  end_ = bytes_.size() - 8;
  const std::uint64_t stored = get_u64(bytes_.data() + end_);
  pos_ = 8;
  const std::uint64_t hlen = get_u64(bytes_.data() + pos_);
  if (hlen > end_ - 16) {
    pos_ = 8;
    fail("header_length", "header of " + std::to_string(hlen) + " bytes exceeds file (truncated?)");
  }
  if (fnv1a(bytes_.data(), end_) != stored) {
    pos_ = end_;
    fail("checksum", "mismatch (truncated or corrupted file)");
  }
  pos_ = 16;
  try {
    header_ = nlohmann::json::parse(bytes_.begin() + 16, bytes_.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    fail("header", std::string("invalid JSON: ") + e.what());
  }
  pos_ = 16 + hlen;
}

void Reader::fail(const std::string& field, const std::string& why) const {
  throw FormatError(what_ + ": field '" + field + "' at byte " + std::to_string(pos_) + ": " + why);
}

void Reader::need(std::size_t n, const std::string& field) {
  if (n > end_ - pos_) fail(field, "needs " + std::to_string(n) + " bytes, " + std::to_string(end_ - pos_) + " remain");
}

std::uint64_t Reader::u64(const std::string& field) {
  need(8, field);
  const auto v = get_u64(bytes_.data() + pos_);
  pos_ += 8;
  return v;
}

double Reader::f64(const std::string& field) { return from_bits(u64(field)); }

std::uint8_t Reader::u8(const std::string& field) {
  need(1, field);
  return bytes_[pos_++];
}

std::vector<double> Reader::f64s(const std::string& field) {
  const std::uint64_t n = u64(field + ".length");
  if (n > (end_ - pos_) / 8) fail(field, "length " + std::to_string(n) + " exceeds remaining bytes");
  std::vector<double> v(n);
  for (auto& d : v) d = f64(field);
  return v;
}

std::vector<std::uint8_t> Reader::u8s(const std::string& field) {
  const std::uint64_t n = u64(field + ".length");
  if (n > end_ - pos_) fail(field, "length " + std::to_string(n) + " exceeds remaining bytes");
  std::vector<std::uint8_t> v(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
  pos_ += n;
  return v;
}

void Reader::expect_end() {
  if (pos_ != end_) fail("trailer", std::to_string(end_ - pos_) + " unexpected trailing bytes");
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, p);
}

void write_text(const std::string& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::string& path) {
  const auto b = read_file(path);
  return {b.begin(), b.end()};
}

}  // namespace ctmm::io
