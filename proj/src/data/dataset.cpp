#include "hypkit/dataset.hpp"

#include <algorithm>
#include <set>

#include "hypkit/errors.hpp"
#include "hypkit/mvol.hpp"

namespace hypkit {

namespace {

constexpr const char* kSuffixes[] = {"_t1.mvol", "_t2.mvol", "_gt.mvol"};

}  // namespace

SampleFiles sample_files(const std::filesystem::path& dir, const std::string& id) {
  return {dir / (id + kSuffixes[0]), dir / (id + kSuffixes[1]), dir / (id + kSuffixes[2])};
}

void write_sample(const std::filesystem::path& dir, const std::string& id,
                  const MultiModalSample& s) {
  std::filesystem::create_directories(dir);
  const auto f = sample_files(dir, id);
  if (s.t1()) write_mvol(*s.t1(), f.t1);
  if (s.t2()) write_mvol(*s.t2(), f.t2);
  write_mvol(s.gt(), f.gt);
}

MultiModalSample read_sample(const std::filesystem::path& dir, const std::string& id,
                             bool* has_gt) {
  const auto f = sample_files(dir, id);
  std::optional<Volume3D> t1, t2;
  if (std::filesystem::exists(f.t1)) t1 = read_mvol_volume(f.t1);
  if (std::filesystem::exists(f.t2)) t2 = read_mvol_volume(f.t2);
  if (!t1 && !t2) throw DataError("sample '" + id + "' has no modality in " + dir.string());
  const bool gt = std::filesystem::exists(f.gt);
  if (has_gt) *has_gt = gt;
  const Volume3D& ref = t1 ? *t1 : *t2;
  LabelMap3D labels = gt ? read_mvol_labels(f.gt) : LabelMap3D::create(ref.dims, ref.voxel_size_mm);
  return MultiModalSample(std::move(t1), std::move(t2), std::move(labels));
}

std::vector<std::string> list_samples(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::set<std::string> ids;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    for (const char* suffix : {kSuffixes[0], kSuffixes[1]}) {
      const std::string s(suffix);
      if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0)
        ids.insert(name.substr(0, name.size() - s.size()));
    }
  }
  return {ids.begin(), ids.end()};
}

}  // namespace hypkit
