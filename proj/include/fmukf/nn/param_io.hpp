#pragma once

#include "fmukf/dataset.hpp"
#include "fmukf/error.hpp"
#include "fmukf/nn/layers.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace fmukf::nn {

static_assert(std::endian::native == std::endian::little, "parameter files are little-endian");

inline constexpr char kParamMagic[4] = {'F', 'M', 'P', 'T'};

/// Layout: magic, u32 tensor count, then per tensor: u32 name length, name,
/// u32 rows, u32 cols, rows*cols f32 in row-major order.
template <typename S>
std::vector<char> encode_params(const ParamStore<S>& store) {
  std::vector<char> buf(kParamMagic, kParamMagic + 4);
  auto put_u32 = [&](std::uint32_t v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf.insert(buf.end(), p, p + 4);
  };
  put_u32(static_cast<std::uint32_t>(store.all().size()));
  for (const auto& prm : store.all()) {
    put_u32(static_cast<std::uint32_t>(prm.name.size()));
    buf.insert(buf.end(), prm.name.begin(), prm.name.end());
    put_u32(static_cast<std::uint32_t>(prm.value.rows()));
    put_u32(static_cast<std::uint32_t>(prm.value.cols()));
    for (Eigen::Index i = 0; i < prm.value.rows(); ++i) {
      for (Eigen::Index j = 0; j < prm.value.cols(); ++j) {
        const auto f = static_cast<float>(prm.value(i, j));
        const char* p = reinterpret_cast<const char*>(&f);
        buf.insert(buf.end(), p, p + 4);
      }
    }
  }
  return buf;
}

/// Fills an already-constructed store; names and shapes must match exactly.
template <typename S>
void decode_params(ParamStore<S>& store, const std::vector<char>& buf) {
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (pos + n > buf.size()) throw Error(ErrorCode::IoError, "truncated parameter file");
  };
  auto get_u32 = [&] {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  };
  need(4);
  if (std::memcmp(buf.data(), kParamMagic, 4) != 0) throw Error(ErrorCode::IoError, "bad parameter file magic");
  pos = 4;
  const std::uint32_t count = get_u32();
  if (count != store.all().size()) throw Error(ErrorCode::IoError, "parameter count mismatch");
  for (std::uint32_t n = 0; n < count; ++n) {
    const std::uint32_t len = get_u32();
    need(len);
    const std::string name(buf.data() + pos, len);
    pos += len;
    Param<S>* prm = store.find(name);
    if (prm == nullptr) throw Error(ErrorCode::IoError, "unknown parameter " + name);
    const std::uint32_t rows = get_u32(), cols = get_u32();
    if (rows != prm->value.rows() || cols != prm->value.cols()) {
      throw Error(ErrorCode::IoError, "shape mismatch for " + name);
    }
    need(std::size_t{4} * rows * cols);
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < cols; ++j) {
        float f;
        std::memcpy(&f, buf.data() + pos, 4);
        pos += 4;
        prm->value(i, j) = static_cast<S>(f);
      }
    }
  }
  if (pos != buf.size()) throw Error(ErrorCode::IoError, "trailing bytes in parameter file");
}

template <typename S>
void save_params(const ParamStore<S>& store, const std::filesystem::path& path) {
  const auto buf = encode_params(store);
  write_file_atomic(path, std::string_view(buf.data(), buf.size()));
}

template <typename S>
void load_params(ParamStore<S>& store, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  decode_params(store, std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()));
}

}  // namespace fmukf::nn
