#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "teddy/tensor.hpp"

namespace teddy {

// On-disk array container: the one binary format used for checkpoints,
// dataset fixtures, and synthetic datasets. Little-endian, named entries,
// trailing FNV-1a checksum over the whole payload. A JSON manifest travels
// inside as the text entry "__manifest__".
//
//   magic "TDYBIN1\0" | u32 entry_count
//   entry: u16 name_len | name | u8 dtype | u8 ndim | i64 dims[] | payload
//   u64 checksum
//
// dtype: 0 = f64, 1 = u8, 2 = i64.
class ArrayContainer {
 public:
  enum class DType : std::uint8_t { f64 = 0, u8 = 1, i64 = 2 };

  struct Entry {
    DType dtype{DType::f64};
    Shape dims;
    std::vector<unsigned char> raw;
  };

  void put_f64(const std::string& name, const Tensor& t);
  void put_u8(const std::string& name, const Shape& dims, const std::vector<std::uint8_t>& values);
  void put_i64(const std::string& name, const Shape& dims, const std::vector<std::int64_t>& values);
  void put_text(const std::string& name, const std::string& text);

  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  std::vector<std::string> names() const;

  Tensor get_f64(const std::string& name) const;
  std::vector<std::uint8_t> get_u8(const std::string& name, Shape* dims = nullptr) const;
  std::vector<std::int64_t> get_i64(const std::string& name, Shape* dims = nullptr) const;
  std::string get_text(const std::string& name) const;
  const Entry& entry(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static ArrayContainer load(const std::filesystem::path& path);

  // Serialized bytes (identical to the file content); used for checksums and
  // content addressing.
  std::vector<unsigned char> serialize() const;

 private:
  std::map<std::string, Entry> entries_;
};

// FNV-1a of a whole file; the checksum used in manifests for content
// addressing of artifacts.
std::uint64_t file_checksum(const std::filesystem::path& path);

std::string checksum_hex(std::uint64_t value);

}  // namespace teddy
