#include "hypkit/mvol.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "hypkit/errors.hpp"

namespace hypkit {

namespace {

constexpr std::array<char, 4> kMagic{'M', 'V', 'O', 'L'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderBytes = 24;

template <typename U>
void put_le(std::vector<unsigned char>& buf, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    buf.push_back(static_cast<unsigned char>((value >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const unsigned char* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::vector<unsigned char> header(std::uint8_t dtype, const Dims3& d, double voxel) {
  std::vector<unsigned char> buf(kMagic.begin(), kMagic.end());
  put_le<std::uint16_t>(buf, kVersion);
  buf.push_back(dtype);
  buf.push_back(0);
  for (auto e : {d.x, d.y, d.z}) {
    if (e > 0xFFFFFFFFull) throw FormatError("mvol: extent exceeds u32");
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(e));
  }
  put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(static_cast<float>(voxel)));
  return buf;
}

void write_bytes(const std::filesystem::path& path,
                 const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

void write_mvol(const Volume3D& v, const std::filesystem::path& path) {
  v.validate();
  auto buf = header(0, v.dims, v.voxel_size_mm);
  buf.reserve(kHeaderBytes + 4 * v.data.size());
  for (float f : v.data) put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(f));
  write_bytes(path, buf);
}

void write_mvol(const LabelMap3D& v, const std::filesystem::path& path) {
  v.validate();
  auto buf = header(1, v.dims, v.voxel_size_mm);
  buf.reserve(kHeaderBytes + 2 * v.labels.size());
  for (auto l : v.labels) put_le<std::uint16_t>(buf, l);
  write_bytes(path, buf);
}

MvolContent read_mvol(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderBytes) {
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic.data(), 4) != 0)
      throw FormatError(path.string() + ": bad magic");
    throw IoError(path.string() + ": truncated header");
  }
  if (std::memcmp(bytes.data(), kMagic.data(), 4) != 0)
    throw FormatError(path.string() + ": bad magic");
  const auto version = get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kVersion)
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  const std::uint8_t dtype = bytes[6];
  if (dtype > 1) throw FormatError(path.string() + ": unknown dtype " + std::to_string(dtype));
  Dims3 d{get_le<std::uint32_t>(bytes.data() + 8), get_le<std::uint32_t>(bytes.data() + 12),
          get_le<std::uint32_t>(bytes.data() + 16)};
  const float voxel = std::bit_cast<float>(get_le<std::uint32_t>(bytes.data() + 20));
  if (d.count() == 0 || !(voxel > 0.0f))
    throw FormatError(path.string() + ": invalid dims or voxel size");
  const std::size_t width = dtype == 0 ? 4 : 2;
  const std::size_t need = kHeaderBytes + width * d.count();
  if (bytes.size() < need)
    throw IoError(path.string() + ": payload truncated (" + std::to_string(bytes.size()) +
                  " of " + std::to_string(need) + " bytes)");
  if (bytes.size() > need) throw FormatError(path.string() + ": trailing bytes after payload");
  const unsigned char* p = bytes.data() + kHeaderBytes;
  if (dtype == 0) {
    Volume3D v{d, voxel, std::vector<float>(d.count())};
    for (std::size_t i = 0; i < v.data.size(); ++i)
      v.data[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i));
    return v;
  }
  LabelMap3D m{d, voxel, std::vector<std::uint16_t>(d.count())};
  for (std::size_t i = 0; i < m.labels.size(); ++i)
    m.labels[i] = get_le<std::uint16_t>(p + 2 * i);
  return m;
}

Volume3D read_mvol_volume(const std::filesystem::path& path) {
  auto c = read_mvol(path);
  if (auto* v = std::get_if<Volume3D>(&c)) return std::move(*v);
  throw FormatError(path.string() + ": expected an intensity volume (dtype 0)");
}

LabelMap3D read_mvol_labels(const std::filesystem::path& path) {
  auto c = read_mvol(path);
  if (auto* v = std::get_if<LabelMap3D>(&c)) return std::move(*v);
  throw FormatError(path.string() + ": expected a label map (dtype 1)");
}

}  // namespace hypkit
