#include "cbs/nn/weights_file.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "cbs/error.hpp"

namespace cbs::nn {
namespace {

constexpr char kMagic[4] = {'C', 'B', 'S', 'W'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "weights format assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw ModelError("truncated weights file " + path.string());
  }
  return value;
}

}  // namespace

void save_tensors(const std::filesystem::path& path, const TensorMap& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing " + path.string());
}

TensorMap load_tensors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weights file " + path.string());
  char magic[4];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
    throw ModelError("bad magic in weights file " + path.string());
  }
  if (get<std::uint32_t>(in, path) != kVersion) {
    throw ModelError("unsupported weights version in " + path.string());
  }
  const auto count = get<std::uint32_t>(in, path);
  TensorMap tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(in, path);
    if (name_len > 4096) throw ModelError("corrupt tensor name in " + path.string());
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw ModelError("truncated weights file " + path.string());
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > 8) throw ModelError("corrupt tensor rank in " + path.string());
    std::vector<int> shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = get<std::int32_t>(in, path);
      if (d < 0 || d > (1 << 24)) throw ModelError("corrupt tensor shape in " + path.string());
      n *= static_cast<std::size_t>(d);
    }
    std::vector<double> data(n);
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
      throw ModelError("truncated tensor '" + name + "' in " + path.string());
    }
    tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return tensors;
}

}  // namespace cbs::nn
