#pragma once

// Named-tensor checkpoint files.
//
// Layout (all integers and values little-endian):
//   bytes[8]  magic "PATTCKPT"
//   u32       version (1)
//   u32       metadata count, then per entry: u32 key length, key bytes,
//             u32 value length, value bytes
//   u32       tensor count, then per tensor: u32 name length, name bytes,
//             u8 dtype (4 = float32, 8 = float64), u32 rank,
//             u64 dims[rank], product(dims) raw values in row-major order

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "passatt/error.hpp"
#include "passatt/tensor.hpp"

namespace passatt {

struct StoredTensor {
  std::string name;
  std::uint8_t dtype = 8;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;  // widened on load; float32 round-trips exactly

  template <class T>
  nx::Mat<T> as_matrix() const {
    if (dims.size() != 2) throw Error("tensor '" + name + "' has rank " + std::to_string(dims.size()));
    nx::Mat<T> m(static_cast<nx::Index>(dims[0]), static_cast<nx::Index>(dims[1]));
    for (std::size_t i = 0; i < values.size(); ++i) m.data()[i] = static_cast<T>(values[i]);
    return m;
  }
};

struct TensorFile {
  std::map<std::string, std::string> meta;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  const StoredTensor& at(const std::string& name) const {
    if (auto* t = find(name)) return *t;
    throw Error("checkpoint has no tensor '" + name + "'");
  }

  template <class T>
  void add(const std::string& name, const nx::Mat<T>& m) {
    StoredTensor t;
    t.name = name;
    t.dtype = sizeof(T) == 4 ? 4 : 8;
    t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
    t.values.assign(m.data(), m.data() + m.size());
    tensors.push_back(std::move(t));
  }
};

namespace detail {

inline constexpr char kMagic[8] = {'P', 'A', 'T', 'T', 'C', 'K', 'P', 'T'};

template <class U>
U to_le(U v) {
  if constexpr (std::endian::native == std::endian::big) {
    U out;
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (std::size_t i = 0; i < sizeof(U); ++i) dst[i] = src[sizeof(U) - 1 - i];
    return out;
  } else {
    return v;
  }
}

template <class U>
void put(std::ostream& out, U v) {
  v = to_le(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <class U>
U get(std::istream& in) {
  U v;
  in.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!in) throw Error("checkpoint truncated");
  return to_le(v);
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
  auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error("checkpoint truncated");
  return s;
}

}  // namespace detail

inline void write_tensor_file(const std::string& path, const TensorFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out.write(detail::kMagic, 8);
  detail::put<std::uint32_t>(out, 1);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(file.meta.size()));
  for (const auto& [k, v] : file.meta) {
    detail::put_string(out, k);
    detail::put_string(out, v);
  }
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    detail::put_string(out, t.name);
    detail::put<std::uint8_t>(out, t.dtype);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
    for (auto d : t.dims) detail::put<std::uint64_t>(out, d);
    for (double v : t.values) {
      if (t.dtype == 4) {
        detail::put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      } else {
        detail::put<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      }
    }
  }
  if (!out) throw Error("error writing checkpoint '" + path + "'");
}

inline TensorFile read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, detail::kMagic, 8) != 0) throw Error("'" + path + "' is not a checkpoint file");
  if (auto version = detail::get<std::uint32_t>(in); version != 1)
    throw Error("unsupported checkpoint version " + std::to_string(version));
  TensorFile file;
  auto n_meta = detail::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto k = detail::get_string(in);
    file.meta[k] = detail::get_string(in);
  }
  auto n = detail::get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < n; ++i) {
    StoredTensor t;
    t.name = detail::get_string(in);
    t.dtype = detail::get<std::uint8_t>(in);
    if (t.dtype != 4 && t.dtype != 8) throw Error("tensor '" + t.name + "' has unknown dtype");
    auto rank = detail::get<std::uint32_t>(in);
    std::uint64_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.dims.push_back(detail::get<std::uint64_t>(in));
      count *= t.dims.back();
    }
    t.values.resize(count);
    for (auto& v : t.values) {
      v = t.dtype == 4 ? static_cast<double>(std::bit_cast<float>(detail::get<std::uint32_t>(in)))
                       : std::bit_cast<double>(detail::get<std::uint64_t>(in));
    }
    file.tensors.push_back(std::move(t));
  }
  return file;
}

}  // namespace passatt
