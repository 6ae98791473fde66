#ifndef FRAD_SRC_BINIO_HPP
#define FRAD_SRC_BINIO_HPP

// Little-endian binary file primitives shared by the dataset and checkpoint
// formats. Byte order is explicit so files are portable across hosts.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace frad::binio {

void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f32(std::ostream& os, float v);
void write_f64(std::ostream& os, double v);

std::uint8_t read_u8(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
float read_f32(std::istream& is);
double read_f64(std::istream& is);

// 5-byte magic tag, e.g. "FRAD1".
void write_magic(std::ostream& os, const char* magic);
void expect_magic(std::istream& is, const char* magic);

void write_f64s(std::ostream& os, const std::vector<double>& v);   // u64 count + payload
std::vector<double> read_f64s(std::istream& is);

}  // namespace frad::binio

#endif
