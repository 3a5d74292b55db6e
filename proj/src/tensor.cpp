#include "compnet/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "compnet/errors.hpp"

namespace compnet {

namespace {

constexpr std::uint8_t kMagic[4] = {0x43, 0x54, 0x4E, 0x53};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

std::string dims_string(std::span<const std::uint32_t> dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

}  // namespace

std::size_t element_count(std::span<const std::uint32_t> dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::uint32_t> d, std::vector<float> v)
    : dims(std::move(d)), data(std::move(v)) {
  validate();
}

Tensor::Tensor(std::vector<std::uint32_t> d) : dims(std::move(d)) {
  data.assign(element_count(dims), 0.0f);
  validate();
}

void Tensor::validate() const {
  if (dims.empty() || dims.size() > 4)
    throw ShapeError("tensor rank must be in [1, 4], got " + std::to_string(dims.size()));
  for (auto d : dims)
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + dims_string(dims));
  if (element_count(dims) != data.size())
    throw ShapeError("tensor dims " + dims_string(dims) + " do not match " +
                     std::to_string(data.size()) + " elements");
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  t.validate();
  std::vector<std::uint8_t> out(4);
  out.reserve(12 + 4 * t.rank() + 4 * t.size());
  std::memcpy(out.data(), kMagic, 4);
  put_u32(out, kTensorFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.dims) put_u32(out, d);
  for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw FormatError("not a CTNS tensor (bad magic)");
  const auto version = get_u32(bytes, 4);
  if (version != kTensorFormatVersion)
    throw VersionError("unsupported CTNS version " + std::to_string(version));
  const auto rank = get_u32(bytes, 8);
  if (rank < 1 || rank > 4) throw FormatError("CTNS rank out of range: " + std::to_string(rank));
  const std::size_t header = 12 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) throw LengthMismatchError("CTNS header truncated");

  Tensor t;
  t.dims.resize(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    t.dims[i] = get_u32(bytes, 12 + 4 * i);
    if (t.dims[i] == 0) throw FormatError("CTNS dim is zero");
  }
  const std::size_t n = element_count(t.dims);
  if (bytes.size() != header + 4 * n)
    throw LengthMismatchError("CTNS payload holds " + std::to_string((bytes.size() - header) / 4) +
                              " floats, dims " + dims_string(t.dims) + " need " + std::to_string(n));
  t.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) t.data[i] = std::bit_cast<float>(get_u32(bytes, header + 4 * i));
  return t;
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    // keep the concrete error kind, add the path
    if (dynamic_cast<const LengthMismatchError*>(&e)) throw LengthMismatchError(path.string() + ": " + e.what());
    if (dynamic_cast<const VersionError*>(&e)) throw VersionError(path.string() + ": " + e.what());
    throw FormatError(path.string() + ": " + e.what());
  }
}

Tensor to_tensor(std::vector<std::uint32_t> dims, std::span<const double> values) {
  std::vector<float> data(values.begin(), values.end());
  return Tensor(std::move(dims), std::move(data));
}

std::vector<double> to_doubles(const Tensor& t) { return {t.data.begin(), t.data.end()}; }

}  // namespace compnet
