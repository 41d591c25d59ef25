#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hypkit/volume.hpp"

namespace hypkit {

// A dataset is a directory of <id>_t1.mvol, <id>_t2.mvol and <id>_gt.mvol
// files. Either modality may be absent; the reference is optional on read.
struct SampleFiles {
  std::filesystem::path t1;
  std::filesystem::path t2;
  std::filesystem::path gt;
};

SampleFiles sample_files(const std::filesystem::path& dir, const std::string& id);

void write_sample(const std::filesystem::path& dir, const std::string& id,
                  const MultiModalSample& s);

// Without a reference file the returned sample carries an all-background
// reference on the modality grid; `has_gt` reports which case applied.
// DataError when neither modality file exists.
MultiModalSample read_sample(const std::filesystem::path& dir, const std::string& id,
                             bool* has_gt = nullptr);

// Sorted ids with at least one modality file.
std::vector<std::string> list_samples(const std::filesystem::path& dir);

}  // namespace hypkit
