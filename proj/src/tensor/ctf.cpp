#include "rtcc/tensor/ctf.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "rtcc/error.hpp"

namespace rtcc::ctf {

static_assert(std::endian::native == std::endian::little, "CTF I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 4> kMagic{'C', 'T', 'F', '1'};

void read_exact(std::istream& in, char* dst, std::size_t n, std::size_t offset, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw InputError(std::string("CTF: truncated ") + what + " at byte " + std::to_string(offset));
  }
}

}  // namespace

void write(std::ostream& out, const Tensor& tensor) {
  if (tensor.is_meta()) throw UsageError("CTF: cannot write a meta tensor");
  if (tensor.rank() > 255) throw UsageError("CTF: rank exceeds 255");
  out.write(kMagic.data(), kMagic.size());
  const std::array<char, 4> header{static_cast<char>(tensor.dtype()), static_cast<char>(tensor.rank()), 0, 0};
  out.write(header.data(), header.size());
  for (auto d : tensor.dims()) {
    if (d > 0xFFFFFFFFLL) throw UsageError("CTF: dim exceeds 32 bits");
    const auto u = static_cast<std::uint32_t>(d);
    out.write(reinterpret_cast<const char*>(&u), sizeof u);
  }
  dispatch(tensor.dtype(), [&]<typename T>() {
    auto d = tensor.data<T>();
    out.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size_bytes()));
  });
  if (!out) throw Error("CTF: write failed");
}

void save(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("CTF: cannot open " + path.string() + " for writing");
  write(out, tensor);
}

Tensor read(std::istream& in) {
  std::array<char, 4> magic{};
  read_exact(in, magic.data(), magic.size(), 0, "magic");
  if (magic != kMagic) throw InputError("CTF: bad magic at byte 0");
  std::array<unsigned char, 4> header{};
  read_exact(in, reinterpret_cast<char*>(header.data()), header.size(), 4, "header");
  DType dtype;
  if (header[0] == 1) {
    dtype = DType::f32;
  } else if (header[0] == 2) {
    dtype = DType::f64;
  } else {
    throw InputError("CTF: unknown dtype code " + std::to_string(header[0]) + " at byte 4");
  }
  if (header[2] != 0 || header[3] != 0) throw InputError("CTF: non-zero pad bytes at byte 6");
  const std::size_t ndim = header[1];
  Dims dims(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    std::uint32_t u = 0;
    const std::size_t offset = 8 + 4 * i;
    read_exact(in, reinterpret_cast<char*>(&u), sizeof u, offset, "dims");
    if (u == 0) throw InputError("CTF: zero dim at byte " + std::to_string(offset));
    dims[i] = u;
  }
  Tensor t = Tensor::zeros(dims, dtype);
  dispatch(dtype, [&]<typename T>() {
    auto d = t.mutable_data<T>();
    read_exact(in, reinterpret_cast<char*>(d.data()), d.size_bytes(), 8 + 4 * ndim, "payload");
  });
  return t;
}

Tensor load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("CTF: cannot open " + path.string());
  return read(in);
}

}  // namespace rtcc::ctf
