#include "hypkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "json.hpp"

#include "hypkit/errors.hpp"

namespace hypkit {

namespace {

constexpr char kMagic[4] = {'H', 'K', 'C', 'P'};
constexpr std::uint16_t kVersion = 1;

enum class EntryKind : std::uint8_t {
  parameter = 0,
  running_mean = 1,
  running_var = 2,
  running_flag = 3,
};

template <typename T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? 0 : 1;
}

class Writer {
 public:
  template <typename U>
  void le(U value) {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                 std::conditional_t<sizeof(U) == 4, std::uint32_t,
                 std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
    const auto bits = std::bit_cast<Bits>(value);
    for (std::size_t i = 0; i < sizeof(U); ++i)
      buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
  void bytes(const std::string& s) { buf += s; }

  std::string buf;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <typename U>
  U le() {
    using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t,
                 std::conditional_t<sizeof(U) == 4, std::uint32_t,
                 std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint8_t>>>;
    need(sizeof(U));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      bits |= static_cast<Bits>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<U>(bits);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw FormatError("checkpoint: truncated");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

template <typename T>
void put_entry(Writer& w, const std::string& name, EntryKind kind, const Shape& shape,
               std::span<const T> values) {
  w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.le<std::uint8_t>(static_cast<std::uint8_t>(kind));
  w.le<std::uint8_t>(static_cast<std::uint8_t>(shape.size()));
  for (auto d : shape) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (T v : values) w.le<T>(v);
}

struct Entry {
  EntryKind kind;
  Shape shape;
  std::vector<double> values;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

LabelScheme scheme_by_name(const std::string& name) {
  if (name == "phantom4") return LabelScheme::phantom4();
  if (name == "hypothalamus") return LabelScheme::hypothalamus();
  throw ConfigError("unknown label scheme '" + name + "'");
}

std::string describe_json(const ModelDescription& d) {
  const auto& b = d.base;
  nlohmann::json j = {
      {"scheme", d.scheme},
      {"slice_thickness", b.slice_thickness},
      {"first_width", b.first_width},
      {"inner_width", b.inner_width},
      {"levels", b.levels},
      {"fusion", to_string(b.fusion)},
      {"internal_voxel_mm", b.internal_voxel_mm},
      {"transition", to_string(b.transition)},
      {"normalize_intensity", b.normalize_intensity},
  };
  return j.dump();
}

ModelDescription parse_description(const std::string& json) {
  ModelDescription d;
  try {
    const auto j = nlohmann::json::parse(json);
    d.scheme = j.at("scheme").get<std::string>();
    d.base.slice_thickness = j.at("slice_thickness").get<std::size_t>();
    d.base.first_width = j.at("first_width").get<std::size_t>();
    d.base.inner_width = j.at("inner_width").get<std::size_t>();
    d.base.levels = j.at("levels").get<std::size_t>();
    d.base.fusion = fusion_mode_from_string(j.at("fusion").get<std::string>());
    d.base.internal_voxel_mm = j.at("internal_voxel_mm").get<double>();
    d.base.normalize_intensity = j.at("normalize_intensity").get<bool>();
    d.base.transition = scale_transition_from_string(j.at("transition").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad model description: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: ") + e.what());
  }
  d.base.class_count = scheme_by_name(d.scheme).class_count();
  return d;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelDescription& d,
                     HMVINN<T>& model) {
  Writer w;
  w.bytes(std::string(kMagic, 4));
  w.le<std::uint16_t>(kVersion);
  w.le<std::uint8_t>(dtype_code<T>());
  w.le<std::uint8_t>(0);
  const std::string desc = describe_json(d);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(desc.size()));
  w.bytes(desc);

  std::size_t count = 0;
  Writer body;
  for (Plane p : {Plane::axial, Plane::coronal, Plane::sagittal}) {
    auto& net = model.plane(p);
    const std::string prefix = std::string(to_string(p)) + ".";
    for (const auto& ref : net.parameters()) {
      put_entry<T>(body, prefix + ref.name, EntryKind::parameter, ref.tensor.shape(),
                   ref.tensor.data());
      ++count;
    }
    for (const auto& ref : net.batchnorms()) {
      const auto& b = *ref.params;
      const Shape s{b.channels()};
      put_entry<T>(body, prefix + ref.name, EntryKind::running_mean, s,
                   std::span<const T>(b.running_mean));
      put_entry<T>(body, prefix + ref.name, EntryKind::running_var, s,
                   std::span<const T>(b.running_var));
      const T flag = b.running_initialized ? T(1) : T(0);
      put_entry<T>(body, prefix + ref.name, EntryKind::running_flag, {1},
                   std::span<const T>(&flag, 1));
      count += 3;
    }
  }
  w.le<std::uint32_t>(static_cast<std::uint32_t>(count));
  w.buf += body.buf;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

template <typename T>
HMVINN<T> load_checkpoint(const std::filesystem::path& path, ModelDescription* description) {
  Reader r(read_file(path));
  if (r.bytes(4) != std::string(kMagic, 4)) throw FormatError(path.string() + ": not a checkpoint");
  if (r.le<std::uint16_t>() != kVersion) throw FormatError("checkpoint: unsupported version");
  const auto dtype = r.le<std::uint8_t>();
  if (dtype > 1) throw FormatError("checkpoint: unknown dtype");
  r.le<std::uint8_t>();
  const auto desc_len = r.le<std::uint32_t>();
  const ModelDescription d = parse_description(r.bytes(desc_len));

  std::map<std::pair<std::string, EntryKind>, Entry> entries;
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint16_t>();
    std::string name = r.bytes(name_len);
    Entry e;
    const auto kind = r.le<std::uint8_t>();
    if (kind > 3) throw FormatError("checkpoint: unknown entry kind");
    e.kind = static_cast<EntryKind>(kind);
    const auto rank = r.le<std::uint8_t>();
    for (std::uint8_t k = 0; k < rank; ++k) e.shape.push_back(r.le<std::uint32_t>());
    const std::size_t n = shape_numel(e.shape);
    e.values.resize(n);
    for (std::size_t k = 0; k < n; ++k)
      e.values[k] = dtype == 0 ? static_cast<double>(r.le<float>()) : r.le<double>();
    entries[{name, e.kind}] = std::move(e);
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");

  HMVINN<T> model(scheme_by_name(d.scheme), d.base, 0);
  auto take = [&](const std::string& name, EntryKind kind, const Shape& shape) {
    auto it = entries.find({name, kind});
    if (it == entries.end()) throw FormatError("checkpoint: missing tensor " + name);
    if (it->second.shape != shape)
      throw FormatError("checkpoint: tensor " + name + " has shape " +
                        shape_str(it->second.shape) + ", model expects " + shape_str(shape));
    auto values = std::move(it->second.values);
    entries.erase(it);
    return values;
  };
  for (Plane p : {Plane::axial, Plane::coronal, Plane::sagittal}) {
    auto& net = model.plane(p);
    const std::string prefix = std::string(to_string(p)) + ".";
    for (auto& ref : net.parameters()) {
      const auto v = take(prefix + ref.name, EntryKind::parameter, ref.tensor.shape());
      auto dst = ref.tensor.data();
      for (std::size_t k = 0; k < v.size(); ++k) dst[k] = static_cast<T>(v[k]);
    }
    for (auto& ref : net.batchnorms()) {
      auto& b = *ref.params;
      const Shape s{b.channels()};
      const auto m = take(prefix + ref.name, EntryKind::running_mean, s);
      const auto var = take(prefix + ref.name, EntryKind::running_var, s);
      const auto flag = take(prefix + ref.name, EntryKind::running_flag, {1});
      for (std::size_t k = 0; k < m.size(); ++k) {
        b.running_mean[k] = static_cast<T>(m[k]);
        b.running_var[k] = static_cast<T>(var[k]);
      }
      b.running_initialized = flag[0] != 0.0;
    }
  }
  if (!entries.empty())
    throw FormatError("checkpoint: unexpected tensor " + entries.begin()->first.first);
  if (description) *description = d;
  return model;
}

std::string file_checksum(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << h;
  return ss.str();
}

template void save_checkpoint(const std::filesystem::path&, const ModelDescription&,
                              HMVINN<float>&);
template void save_checkpoint(const std::filesystem::path&, const ModelDescription&,
                              HMVINN<double>&);
template HMVINN<float> load_checkpoint(const std::filesystem::path&, ModelDescription*);
template HMVINN<double> load_checkpoint(const std::filesystem::path&, ModelDescription*);

}  // namespace hypkit
