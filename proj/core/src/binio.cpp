#include "binio.hpp"

#include <cstring>
#include <stdexcept>

namespace frad::binio {

namespace {

void put_bytes(std::ostream& os, std::uint64_t v, int n) {
  char buf[8];
  for (int i = 0; i < n; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, n);
  if (!os) throw std::runtime_error("write failed");
}

std::uint64_t get_bytes(std::istream& is, int n) {
  char buf[8];
  is.read(buf, n);
  if (is.gcount() != n) throw std::runtime_error("unexpected end of file");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return v;
}

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { put_bytes(os, v, 1); }
void write_u32(std::ostream& os, std::uint32_t v) { put_bytes(os, v, 4); }
void write_u64(std::ostream& os, std::uint64_t v) { put_bytes(os, v, 8); }
void write_f32(std::ostream& os, float v) { put_bytes(os, std::bit_cast<std::uint32_t>(v), 4); }
void write_f64(std::ostream& os, double v) { put_bytes(os, std::bit_cast<std::uint64_t>(v), 8); }

std::uint8_t read_u8(std::istream& is) { return static_cast<std::uint8_t>(get_bytes(is, 1)); }
std::uint32_t read_u32(std::istream& is) { return static_cast<std::uint32_t>(get_bytes(is, 4)); }
std::uint64_t read_u64(std::istream& is) { return get_bytes(is, 8); }
float read_f32(std::istream& is) { return std::bit_cast<float>(static_cast<std::uint32_t>(get_bytes(is, 4))); }
double read_f64(std::istream& is) { return std::bit_cast<double>(get_bytes(is, 8)); }

void write_magic(std::ostream& os, const char* magic) {
  os.write(magic, 5);
  if (!os) throw std::runtime_error("write failed");
}

void expect_magic(std::istream& is, const char* magic) {
  char buf[5];
  is.read(buf, 5);
  if (is.gcount() != 5 || std::memcmp(buf, magic, 5) != 0) {
    throw std::runtime_error(std::string("bad file magic, expected ") + magic);
  }
}

void write_f64s(std::ostream& os, const std::vector<double>& v) {
  write_u64(os, v.size());
  for (double d : v) write_f64(os, d);
}

std::vector<double> read_f64s(std::istream& is) {
  const std::uint64_t n = read_u64(is);
  std::vector<double> v(n);
  for (auto& d : v) d = read_f64(is);
  return v;
}

}  // namespace frad::binio
