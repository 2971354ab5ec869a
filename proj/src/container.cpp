#include "sosmpl/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace sosmpl {

namespace {

constexpr char kMagic[8] = {'S', 'O', 'S', 'M', '1', '\0', '\0', '\0'};

template <typename T>
void putLE(Bytes& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>((u >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated container while reading ") + what, pos_);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::uint64_t product(const std::vector<std::uint64_t>& dims) {
  std::uint64_t n = 1;
  for (auto d : dims) {
    if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d) throw ValidationError("array dims overflow");
    n *= d;
  }
  return n;
}

template <typename T>
Bytes packWords(std::span<const T> values) {
  Bytes raw;
  raw.reserve(values.size() * 4);
  for (T v : values) putLE<std::uint32_t>(raw, std::bit_cast<std::uint32_t>(v));
  return raw;
}

template <typename T>
std::vector<T> unpackWords(const Bytes& raw) {
  std::vector<T> out(raw.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(raw[4 * i + b]) << (8 * b);
    out[i] = std::bit_cast<T>(u);
  }
  return out;
}

void checkCount(const NamedArray& a, std::size_t n) {
  if (a.elementCount() != n) throw DimensionError("array '" + a.name + "' dims do not match its data");
}

}  // namespace

std::uint64_t NamedArray::elementCount() const { return product(dims); }

NamedArray NamedArray::f32(std::string name, std::vector<std::uint64_t> dims, std::span<const double> values) {
  std::vector<float> f(values.begin(), values.end());
  NamedArray a{std::move(name), DType::F32, std::move(dims), packWords<float>(f)};
  checkCount(a, values.size());
  return a;
}

NamedArray NamedArray::u32(std::string name, std::vector<std::uint64_t> dims, std::span<const std::uint32_t> values) {
  NamedArray a{std::move(name), DType::U32, std::move(dims), packWords<std::uint32_t>(values)};
  checkCount(a, values.size());
  return a;
}

NamedArray NamedArray::i32(std::string name, std::vector<std::uint64_t> dims, std::span<const std::int32_t> values) {
  NamedArray a{std::move(name), DType::I32, std::move(dims), packWords<std::int32_t>(values)};
  checkCount(a, values.size());
  return a;
}

NamedArray NamedArray::text(std::string name, std::string_view utf8) {
  NamedArray a;
  a.name = std::move(name);
  a.dtype = DType::U32;
  a.raw.assign(utf8.begin(), utf8.end());
  while (a.raw.size() % 4 != 0) a.raw.push_back(0);
  a.dims = {a.raw.size() / 4};
  return a;
}

std::vector<double> NamedArray::asDoubles() const {
  if (dtype != DType::F32) throw FormatError("array '" + name + "' is not f32", 0);
  auto f = unpackWords<float>(raw);
  return {f.begin(), f.end()};
}

std::vector<std::uint32_t> NamedArray::asU32() const {
  if (dtype != DType::U32) throw FormatError("array '" + name + "' is not u32", 0);
  return unpackWords<std::uint32_t>(raw);
}

std::vector<std::int32_t> NamedArray::asI32() const {
  if (dtype != DType::I32) throw FormatError("array '" + name + "' is not i32", 0);
  return unpackWords<std::int32_t>(raw);
}

std::string NamedArray::asText() const {
  if (dtype != DType::U32) throw FormatError("array '" + name + "' is not a text blob", 0);
  std::string s(raw.begin(), raw.end());
  while (!s.empty() && s.back() == '\0') s.pop_back();
  return s;
}

void Container::add(NamedArray array) {
  for (auto& a : arrays_) {
    if (a.name == array.name) {
      a = std::move(array);
      return;
    }
  }
  arrays_.push_back(std::move(array));
}

const NamedArray* Container::find(std::string_view name) const {
  for (const auto& a : arrays_)
    if (a.name == name) return &a;
  return nullptr;
}

const NamedArray& Container::require(std::string_view name) const {
  if (const auto* a = find(name)) return *a;
  throw FormatError("missing mandatory array '" + std::string(name) + "'", 0);
}

Bytes Container::serialize() const {
  Bytes out(kMagic, kMagic + 8);
  putLE<std::uint32_t>(out, kVersion);
  putLE<std::uint32_t>(out, static_cast<std::uint32_t>(arrays_.size()));
  for (const auto& a : arrays_) {
    if (a.name.size() > 0xffff) throw ValidationError("array name too long");
    if (a.dims.size() > 0xff) throw ValidationError("array rank too large");
    putLE<std::uint16_t>(out, static_cast<std::uint16_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    out.push_back(static_cast<std::uint8_t>(a.dtype));
    out.push_back(static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) putLE<std::uint64_t>(out, d);
    out.insert(out.end(), a.raw.begin(), a.raw.end());
  }
  return out;
}

Container Container::parse(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  auto magic = r.take(8, "magic");
  if (std::memcmp(magic.data(), kMagic, 8) != 0) throw FormatError("bad magic, not a SOSM1 container", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kVersion)
    throw FormatError("unsupported container version " + std::to_string(version), 8);
  const auto count = r.get<std::uint32_t>("array count");
  Container c;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto nameLen = r.get<std::uint16_t>("name length");
    auto name = r.take(nameLen, "array name");
    a.name.assign(name.begin(), name.end());
    const std::size_t dtypeAt = r.pos();
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype > 2) throw FormatError("unknown dtype " + std::to_string(dtype) + " for '" + a.name + "'", dtypeAt);
    a.dtype = static_cast<DType>(dtype);
    const auto rank = r.get<std::uint8_t>("rank");
    for (int k = 0; k < rank; ++k) a.dims.push_back(r.get<std::uint64_t>("dims"));
    const std::size_t dataAt = r.pos();
    std::uint64_t n = 0;
    try {
      n = product(a.dims);
    } catch (const ValidationError&) {
      throw FormatError("dims overflow for '" + a.name + "'", dataAt);
    }
    if (n > (bytes.size() - dataAt) / 4) throw FormatError("truncated container in data of '" + a.name + "'", dataAt);
    auto raw = r.take(static_cast<std::size_t>(n * 4), "array data");
    a.raw.assign(raw.begin(), raw.end());
    if (c.find(a.name)) throw FormatError("duplicate array '" + a.name + "'", dataAt);
    c.arrays_.push_back(std::move(a));
  }
  if (!r.done()) throw FormatError("trailing bytes after last array", r.pos());
  return c;
}

Bytes readFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

void writeFile(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace sosmpl
