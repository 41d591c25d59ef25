#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hypkit {

enum class Region { hypothalamic, optic, others };

const char* to_string(Region region) noexcept;

struct StructureInfo {
  std::uint16_t id = 0;  // full-scheme class id, 1..C-1
  std::string name;
  Region region = Region::others;
  int partner = -1;      // class id of the contralateral structure, or -1
};

// Lookup table of a segmentation scheme. Class 0 is background. Left/right
// pairs collapse to one class in the sagittal view.
class LabelScheme {
 public:
  LabelScheme(std::string name, std::vector<StructureInfo> structures);

  // The 24-structure hypothalamic scheme (25 classes, 15 sagittal structures).
  static LabelScheme hypothalamus();
  // Four-class phantom scheme: a lateral pair and a midline core.
  static LabelScheme phantom4();

  const std::string& name() const noexcept { return name_; }
  std::size_t class_count() const noexcept { return structures_.size() + 1; }
  std::size_t sagittal_class_count() const noexcept { return unified_count_; }
  const std::vector<StructureInfo>& structures() const noexcept { return structures_; }
  const StructureInfo& structure(std::uint16_t id) const;

  // Full class id -> unified sagittal class id (0 stays 0).
  std::uint16_t to_sagittal(std::uint16_t full_id) const;
  // Unified sagittal class id -> the full class ids it stands for (one or two).
  const std::vector<std::uint16_t>& from_sagittal(std::uint16_t unified_id) const;

  std::vector<std::uint16_t> region_members(Region region) const;

 private:
  std::string name_;
  std::vector<StructureInfo> structures_;
  std::vector<std::uint16_t> full_to_unified_;
  std::vector<std::vector<std::uint16_t>> unified_to_full_;
  std::size_t unified_count_ = 1;
};

}  // namespace hypkit
