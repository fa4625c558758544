#include "teddy/container.hpp"

#include <cstring>
#include <fstream>

#include "teddy/rng.hpp"

namespace teddy {

namespace {

constexpr char kMagic[8] = {'T', 'D', 'Y', 'B', 'I', 'N', '1', '\0'};

std::size_t dtype_size(ArrayContainer::DType t) {
  switch (t) {
    case ArrayContainer::DType::f64: return 8;
    case ArrayContainer::DType::u8: return 1;
    case ArrayContainer::DType::i64: return 8;
  }
  return 0;
}

template <typename T>
void append_raw(std::vector<unsigned char>& out, const T& value) {
  const auto* p = reinterpret_cast<const unsigned char*>(&value);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T read_raw(const std::vector<unsigned char>& in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) fail(ErrorCode::corrupt_record, "container truncated");
  T value;
  std::memcpy(&value, in.data() + off, sizeof(T));
  off += sizeof(T);
  return value;
}

}  // namespace

void ArrayContainer::put_f64(const std::string& name, const Tensor& t) {
  Entry e;
  e.dtype = DType::f64;
  e.dims = t.shape;
  e.raw.resize(t.data.size() * 8);
  std::memcpy(e.raw.data(), t.data.data(), e.raw.size());
  entries_[name] = std::move(e);
}

void ArrayContainer::put_u8(const std::string& name, const Shape& dims,
                            const std::vector<std::uint8_t>& values) {
  require(static_cast<Index>(values.size()) == shape_numel(dims), ErrorCode::invalid_argument,
          "u8 entry size does not match dims");
  Entry e;
  e.dtype = DType::u8;
  e.dims = dims;
  e.raw.assign(values.begin(), values.end());
  entries_[name] = std::move(e);
}

void ArrayContainer::put_i64(const std::string& name, const Shape& dims,
                             const std::vector<std::int64_t>& values) {
  require(static_cast<Index>(values.size()) == shape_numel(dims), ErrorCode::invalid_argument,
          "i64 entry size does not match dims");
  Entry e;
  e.dtype = DType::i64;
  e.dims = dims;
  e.raw.resize(values.size() * 8);
  std::memcpy(e.raw.data(), values.data(), e.raw.size());
  entries_[name] = std::move(e);
}

void ArrayContainer::put_text(const std::string& name, const std::string& text) {
  Entry e;
  e.dtype = DType::u8;
  e.dims = {static_cast<Index>(text.size())};
  e.raw.assign(text.begin(), text.end());
  entries_[name] = std::move(e);
}

std::vector<std::string> ArrayContainer::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

const ArrayContainer::Entry& ArrayContainer::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) fail(ErrorCode::corrupt_record, "container entry not found: " + name);
  return it->second;
}

Tensor ArrayContainer::get_f64(const std::string& name) const {
  const Entry& e = entry(name);
  require(e.dtype == DType::f64, ErrorCode::corrupt_record, "entry " + name + " is not f64");
  Tensor t(e.dims);
  std::memcpy(t.data.data(), e.raw.data(), e.raw.size());
  return t;
}

std::vector<std::uint8_t> ArrayContainer::get_u8(const std::string& name, Shape* dims) const {
  const Entry& e = entry(name);
  require(e.dtype == DType::u8, ErrorCode::corrupt_record, "entry " + name + " is not u8");
  if (dims) *dims = e.dims;
  return std::vector<std::uint8_t>(e.raw.begin(), e.raw.end());
}

std::vector<std::int64_t> ArrayContainer::get_i64(const std::string& name, Shape* dims) const {
  const Entry& e = entry(name);
  require(e.dtype == DType::i64, ErrorCode::corrupt_record, "entry " + name + " is not i64");
  if (dims) *dims = e.dims;
  std::vector<std::int64_t> out(e.raw.size() / 8);
  std::memcpy(out.data(), e.raw.data(), e.raw.size());
  return out;
}

std::string ArrayContainer::get_text(const std::string& name) const {
  const Entry& e = entry(name);
  require(e.dtype == DType::u8, ErrorCode::corrupt_record, "entry " + name + " is not text");
  return std::string(e.raw.begin(), e.raw.end());
}

std::vector<unsigned char> ArrayContainer::serialize() const {
  std::vector<unsigned char> out;
  out.insert(out.end(), kMagic, kMagic + 8);
  append_raw(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, e] : entries_) {
    append_raw(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    append_raw(out, static_cast<std::uint8_t>(e.dtype));
    append_raw(out, static_cast<std::uint8_t>(e.dims.size()));
    for (Index d : e.dims) append_raw(out, static_cast<std::int64_t>(d));
    out.insert(out.end(), e.raw.begin(), e.raw.end());
  }
  append_raw(out, fnv1a64(out.data(), out.size()));
  return out;
}

void ArrayContainer::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<unsigned char> bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), ErrorCode::io_failure, "cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), ErrorCode::io_failure, "write failed: " + path.string());
}

ArrayContainer ArrayContainer::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) fail(ErrorCode::missing_files, path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (bytes.size() < 8 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    fail(ErrorCode::corrupt_record, "not a TDYBIN container: " + path.string());

  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  std::uint64_t actual = fnv1a64(bytes.data(), bytes.size() - 8);
  if (stored != actual)
    fail(ErrorCode::checksum_failure, "container checksum mismatch in " + path.string() + " (stored " +
                                          checksum_hex(stored) + ", actual " + checksum_hex(actual) + ")");

  ArrayContainer c;
  std::size_t off = 8;
  auto count = read_raw<std::uint32_t>(bytes, off);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = read_raw<std::uint16_t>(bytes, off);
    if (off + name_len > bytes.size()) fail(ErrorCode::corrupt_record, "container truncated");
    std::string name(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                     bytes.begin() + static_cast<std::ptrdiff_t>(off + name_len));
    off += name_len;
    Entry e;
    e.dtype = static_cast<DType>(read_raw<std::uint8_t>(bytes, off));
    auto ndim = read_raw<std::uint8_t>(bytes, off);
    for (std::uint8_t d = 0; d < ndim; ++d) e.dims.push_back(read_raw<std::int64_t>(bytes, off));
    std::size_t payload = static_cast<std::size_t>(shape_numel(e.dims)) * dtype_size(e.dtype);
    if (off + payload > bytes.size()) fail(ErrorCode::corrupt_record, "container truncated at entry " + name);
    e.raw.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                 bytes.begin() + static_cast<std::ptrdiff_t>(off + payload));
    off += payload;
    c.entries_[name] = std::move(e);
  }
  return c;
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) fail(ErrorCode::missing_files, path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes.data(), bytes.size());
}

std::string checksum_hex(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return s;
}

}  // namespace teddy
