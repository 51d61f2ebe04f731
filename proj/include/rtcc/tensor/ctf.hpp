#pragma once

#include <filesystem>
#include <iosfwd>

#include "rtcc/tensor/tensor.hpp"

// CTF binary tensor files:
//   "CTF1" | dtype u8 (1 = f32, 2 = f64) | ndim u8 | 2 zero bytes |
//   ndim x u32 little-endian dims | row-major little-endian payload
namespace rtcc::ctf {

void write(std::ostream& out, const Tensor& tensor);
void save(const std::filesystem::path& path, const Tensor& tensor);

// Throws InputError with the byte offset of the first malformed field.
Tensor read(std::istream& in);
Tensor load(const std::filesystem::path& path);

}  // namespace rtcc::ctf
