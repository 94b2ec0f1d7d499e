// SPDX-License-Identifier: Apache-2.0
#include "mmtlab/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <openssl/evp.h>

namespace mmtlab {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

enum class DType : std::uint8_t { f32 = 1, f64 = 2, u8 = 3 };

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  template <class U>
  void scalar(U v) {
    static_assert(std::is_arithmetic_v<U>);
    std::array<char, sizeof(U)> buf;
    std::memcpy(buf.data(), &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    os_.write(buf.data(), buf.size());
  }
  void bytes(const std::string& s) {
    scalar<std::uint64_t>(s.size());
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  template <class U>
  void array(const std::vector<U>& v) {
    if constexpr (std::endian::native == std::endian::little) {
      os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(U)));
    } else {
      for (const U x : v) scalar(x);
    }
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, const std::filesystem::path& path) : is_(is), path_(path) {}

  template <class U>
  U scalar() {
    std::array<char, sizeof(U)> buf;
    read(buf.data(), buf.size());
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf.begin(), buf.end());
    U v;
    std::memcpy(&v, buf.data(), sizeof(U));
    return v;
  }
  std::string bytes() {
    const auto n = scalar<std::uint64_t>();
    if (n > (1ull << 32)) fail("implausible string length");
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  template <class U>
  std::vector<U> array(std::size_t n) {
    std::vector<U> v(n);
    if constexpr (std::endian::native == std::endian::little) {
      read(reinterpret_cast<char*>(v.data()), n * sizeof(U));
    } else {
      for (auto& x : v) x = scalar<U>();
    }
    return v;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(fmt::format("{}: corrupt checkpoint ({})", path_.string(), what));
  }

 private:
  void read(char* dst, std::size_t n) {
    is_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) fail("unexpected end of file");
  }
  std::istream& is_;
  const std::filesystem::path& path_;
};

}  // namespace

const CheckpointArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open " + tmp.string() + " for writing");
    Writer w(os);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    w.scalar<std::uint32_t>(kCheckpointVersion);
    w.bytes(ckpt.meta.dump());
    w.scalar<std::uint64_t>(ckpt.arrays.size());
    for (const auto& a : ckpt.arrays) {
      w.bytes(a.name);
      w.scalar<std::uint32_t>(static_cast<std::uint32_t>(a.shape.size()));
      for (auto d : a.shape) w.scalar<std::uint64_t>(d);
      std::visit(
          [&](const auto& v) {
            using U = typename std::decay_t<decltype(v)>::value_type;
            const DType dt = std::is_same_v<U, float> ? DType::f32 : std::is_same_v<U, double> ? DType::f64 : DType::u8;
            if (v.size() != shape_size(a.shape)) throw ShapeError("checkpoint array '" + a.name + "' size/shape mismatch");
            w.scalar<std::uint8_t>(static_cast<std::uint8_t>(dt));
            w.scalar<std::uint64_t>(v.size());
            w.array(v);
          },
          a.data);
    }
    if (!os) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path.string());
  Reader r(is, path);
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (is.gcount() != sizeof(magic) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) r.fail("bad magic");
  const auto version = r.scalar<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail(fmt::format("unsupported version {}", version));
  Checkpoint ckpt;
  try {
    ckpt.meta = nlohmann::json::parse(r.bytes());
  } catch (const nlohmann::json::exception& e) {
    r.fail(std::string("metadata: ") + e.what());
  }
  const auto count = r.scalar<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointArray a;
    a.name = r.bytes();
    const auto rank = r.scalar<std::uint32_t>();
    if (rank > 8) r.fail("rank too large");
    for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(r.scalar<std::uint64_t>());
    const auto dt = static_cast<DType>(r.scalar<std::uint8_t>());
    const auto n = r.scalar<std::uint64_t>();
    if (n != shape_size(a.shape)) r.fail("array '" + a.name + "' size/shape mismatch");
    switch (dt) {
      case DType::f32: a.data = r.array<float>(n); break;
      case DType::f64: a.data = r.array<double>(n); break;
      case DType::u8: a.data = r.array<std::uint8_t>(n); break;
      default: r.fail("unknown dtype");
    }
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

template <class T>
void store_parameters(Checkpoint& ckpt, const ParameterStore<T>& store) {
  for (std::size_t i = 0; i < store.entry_count(); ++i) {
    const auto& e = store.entry(i);
    ckpt.arrays.push_back({"param/" + e.name, e.value.shape(), e.value.storage()});
    ckpt.arrays.push_back({"mask/" + e.name, e.value.shape(), e.keep});
  }
}

template <class T>
void load_parameters(const Checkpoint& ckpt, ParameterStore<T>& store) {
  for (std::size_t i = 0; i < store.entry_count(); ++i) {
    auto& e = store.entry(i);
    const auto* a = ckpt.find("param/" + e.name);
    if (!a) throw IoError("checkpoint is missing parameter '" + e.name + "'");
    if (a->shape != e.value.shape()) {
      throw ShapeError(fmt::format("checkpoint parameter '{}' has shape {}, model expects {}", e.name,
                                   shape_string(a->shape), shape_string(e.value.shape())));
    }
    std::visit(
        [&](const auto& v) {
          using U = typename std::decay_t<decltype(v)>::value_type;
          if constexpr (std::is_same_v<U, std::uint8_t>) {
            throw IoError("checkpoint parameter '" + e.name + "' has integer dtype");
          } else {
            std::transform(v.begin(), v.end(), e.value.values().begin(), [](U x) { return static_cast<T>(x); });
          }
        },
        a->data);
    if (const auto* m = ckpt.find("mask/" + e.name)) {
      const auto* keep = std::get_if<std::vector<std::uint8_t>>(&m->data);
      if (!keep || keep->size() != e.keep.size()) throw IoError("bad prune mask for '" + e.name + "'");
      e.keep = *keep;
    }
  }
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf;
  while (is) {
    is.read(buf.data(), buf.size());
    if (is.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(is.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

template void store_parameters(Checkpoint&, const ParameterStore<float>&);
template void store_parameters(Checkpoint&, const ParameterStore<double>&);
template void load_parameters(const Checkpoint&, ParameterStore<float>&);
template void load_parameters(const Checkpoint&, ParameterStore<double>&);

}  // namespace mmtlab
