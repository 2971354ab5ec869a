#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sosmpl/common.hpp"

namespace sosmpl {

// SOSM1 named-array container.
//
// Layout (little-endian): 8-byte magic "SOSM1\0\0\0", u32 version (1),
// u32 array count, then per array: u16 name length, UTF-8 name, u8 dtype
// (0 = f32, 1 = u32, 2 = i32), u8 rank, u64 dims[rank], raw element data.
//
// Text blobs (part names, metadata JSON) are stored as rank-1 u32 arrays
// holding the UTF-8 bytes packed four per word, little-endian, zero padded.
enum class DType : std::uint8_t { F32 = 0, U32 = 1, I32 = 2 };

struct NamedArray {
  std::string name;
  DType dtype = DType::F32;
  std::vector<std::uint64_t> dims;
  Bytes raw;  // exactly elementCount() * 4 bytes

  std::uint64_t elementCount() const;

  static NamedArray f32(std::string name, std::vector<std::uint64_t> dims, std::span<const double> values);
  static NamedArray u32(std::string name, std::vector<std::uint64_t> dims, std::span<const std::uint32_t> values);
  static NamedArray i32(std::string name, std::vector<std::uint64_t> dims, std::span<const std::int32_t> values);
  static NamedArray text(std::string name, std::string_view utf8);

  std::vector<double> asDoubles() const;  // requires F32
  std::vector<std::uint32_t> asU32() const;
  std::vector<std::int32_t> asI32() const;
  std::string asText() const;
};

class Container {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void add(NamedArray array);
  const NamedArray* find(std::string_view name) const;
  // Throws FormatError naming the missing array.
  const NamedArray& require(std::string_view name) const;
  const std::vector<NamedArray>& arrays() const { return arrays_; }

  Bytes serialize() const;
  static Container parse(std::span<const std::uint8_t> bytes);

 private:
  std::vector<NamedArray> arrays_;
};

Bytes readFile(const std::string& path);
void writeFile(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace sosmpl
