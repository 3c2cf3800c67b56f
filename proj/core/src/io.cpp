// SPDX-License-Identifier: Apache-2.0
#include "kdnas/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "kdnas/error.hpp"

namespace kdnas {
namespace {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

constexpr char kMagic[8] = {'K', 'D', 'N', 'A', 'S', 'T', 'E', 'N'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_doubles(double* dst, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw SchemaError("tensor archive is truncated");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_tensor_archive(const ParameterTable& table) {
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(table.size()));
  for (const auto& [name, t] : table) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put<std::int32_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
  }
  return out;
}

ParameterTable decode_tensor_archive(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_string(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw SchemaError("not a tensor archive (bad magic)");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != 1) throw SchemaError(fmt::format("unsupported tensor archive version {}", version));
  const auto count = r.get<std::uint32_t>();
  ParameterTable table;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw SchemaError(fmt::format("tensor '{}' has implausible rank {}", name, rank));
    std::vector<int> shape(rank);
    for (auto& d : shape) {
      d = r.get<std::int32_t>();
      if (d < 0) throw SchemaError(fmt::format("tensor '{}' has a negative dimension", name));
    }
    Tensor t(shape);
    r.get_doubles(t.data(), t.size());
    table.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw SchemaError("trailing bytes after tensor archive");
  return table;
}

void write_tensor_archive(const std::filesystem::path& path, const ParameterTable& table) {
  write_file_atomic(path, encode_tensor_archive(table));
}

ParameterTable read_tensor_archive(const std::filesystem::path& path) {
  return decode_tensor_archive(read_file(path));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write {}", tmp.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(fmt::format("short write to {}", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace kdnas
