#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>

#include "qpm/vecmath.hpp"

namespace qpm {

// Little-endian binary primitives for the checkpoint formats. Explicit byte
// assembly keeps the files identical regardless of host endianness.
void write_u8(std::ostream& out, std::uint8_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_i64(std::ostream& out, std::int64_t v);
void write_f64(std::ostream& out, double v);
void write_f64_span(std::ostream& out, std::span<const double> v);

std::uint8_t read_u8(std::istream& in);
std::uint64_t read_u64(std::istream& in);
std::int64_t read_i64(std::istream& in);
double read_f64(std::istream& in);
Vec read_f64_vec(std::istream& in, std::size_t count);

// Whole-file helpers. Throw IoError on failure.
void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

// Render a double with 17 significant digits (exact round-trip).
std::string format_g17(double v);

// FNV-1a 64-bit hash, hex-encoded.
std::string fnv1a_hex(std::span<const char> bytes);

}  // namespace qpm
