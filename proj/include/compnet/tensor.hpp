#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace compnet {

/// Dense row-major f32 tensor of rank 1..4 (last dim fastest).
struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<std::uint32_t> d, std::vector<float> v);
  /// Zero-filled tensor of the given shape.
  explicit Tensor(std::vector<std::uint32_t> d);

  std::size_t rank() const { return dims.size(); }
  std::size_t size() const { return data.size(); }

  /// Throws ShapeError unless rank in [1,4], every dim positive and
  /// product(dims) == data.size().
  void validate() const;

  bool operator==(const Tensor&) const = default;
};

std::size_t element_count(std::span<const std::uint32_t> dims);

/// CTNS layout: "CTNS", u32 version (1), u32 rank, u32 dims[rank], f32 data.
/// Everything little-endian.
inline constexpr std::uint32_t kTensorFormatVersion = 1;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);

/// Conversions used by modules that compute in double precision.
Tensor to_tensor(std::vector<std::uint32_t> dims, std::span<const double> values);
std::vector<double> to_doubles(const Tensor& t);

}  // namespace compnet
