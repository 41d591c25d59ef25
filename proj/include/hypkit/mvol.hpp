#pragma once

// .mvol container, little-endian:
//   magic "MVOL" | version u16 = 1 | dtype u8 (0 = f32, 1 = u16 labels) |
//   reserved u8 | dims 3 x u32 | voxel size f32 (mm) | payload, x fastest.

#include <filesystem>
#include <variant>

#include "hypkit/volume.hpp"

namespace hypkit {

using MvolContent = std::variant<Volume3D, LabelMap3D>;

MvolContent read_mvol(const std::filesystem::path& path);
Volume3D read_mvol_volume(const std::filesystem::path& path);
LabelMap3D read_mvol_labels(const std::filesystem::path& path);

void write_mvol(const Volume3D& v, const std::filesystem::path& path);
void write_mvol(const LabelMap3D& v, const std::filesystem::path& path);

}  // namespace hypkit
