#include "hypkit/labels.hpp"

#include "hypkit/errors.hpp"

namespace hypkit {

const char* to_string(Region region) noexcept {
  switch (region) {
    case Region::hypothalamic: return "hypothalamic";
    case Region::optic: return "optic";
    case Region::others: return "others";
  }
  return "others";
}

LabelScheme::LabelScheme(std::string name, std::vector<StructureInfo> structures)
    : name_(std::move(name)), structures_(std::move(structures)) {
  const std::size_t c = structures_.size() + 1;
  for (std::size_t i = 0; i < structures_.size(); ++i) {
    const auto& s = structures_[i];
    if (s.id != i + 1)
      throw ConfigError("label scheme ids must be consecutive starting at 1");
    if (s.partner >= 0) {
      if (static_cast<std::size_t>(s.partner) >= c || s.partner == 0 ||
          structures_[s.partner - 1].partner != static_cast<int>(s.id))
        throw ConfigError("label scheme: unpaired lateral structure " + s.name);
    }
  }
  full_to_unified_.assign(c, 0);
  unified_to_full_.push_back({0});
  for (const auto& s : structures_) {
    if (s.partner >= 0 && s.partner < static_cast<int>(s.id)) {
      const auto u = full_to_unified_[s.partner];
      full_to_unified_[s.id] = u;
      unified_to_full_[u].push_back(s.id);
      continue;
    }
    full_to_unified_[s.id] = static_cast<std::uint16_t>(unified_to_full_.size());
    unified_to_full_.push_back({s.id});
  }
  unified_count_ = unified_to_full_.size();
}

const StructureInfo& LabelScheme::structure(std::uint16_t id) const {
  if (id == 0 || id > structures_.size())
    throw UsageError("no structure with class id " + std::to_string(id));
  return structures_[id - 1];
}

std::uint16_t LabelScheme::to_sagittal(std::uint16_t full_id) const {
  if (full_id >= full_to_unified_.size())
    throw DataError("label " + std::to_string(full_id) + " outside scheme");
  return full_to_unified_[full_id];
}

const std::vector<std::uint16_t>& LabelScheme::from_sagittal(
    std::uint16_t unified_id) const {
  if (unified_id >= unified_to_full_.size())
    throw ConfigError("unified label " + std::to_string(unified_id) +
                      " outside sagittal scheme");
  return unified_to_full_[unified_id];
}

std::vector<std::uint16_t> LabelScheme::region_members(Region region) const {
  std::vector<std::uint16_t> out;
  for (const auto& s : structures_)
    if (s.region == region) out.push_back(s.id);
  return out;
}

LabelScheme LabelScheme::hypothalamus() {
  using R = Region;
  // Lateral pairs are adjacent: left id, right id.
  std::vector<StructureInfo> s = {
      {1, "L-N-Opticus", R::optic, 2},
      {2, "R-N-Opticus", R::optic, 1},
      {3, "L-Chiasma-Opticus", R::optic, 4},
      {4, "R-Chiasma-Opticus", R::optic, 3},
      {5, "L-Optic-tract", R::optic, 6},
      {6, "R-Optic-tract", R::optic, 5},
      {7, "L-Ant-Hypothalamus", R::hypothalamic, 8},
      {8, "R-Ant-Hypothalamus", R::hypothalamic, 7},
      {9, "L-Med-Hypothalamus", R::hypothalamic, 10},
      {10, "R-Med-Hypothalamus", R::hypothalamic, 9},
      {11, "L-Lat-Hypothalamus", R::hypothalamic, 12},
      {12, "R-Lat-Hypothalamus", R::hypothalamic, 11},
      {13, "Tuberal-region", R::hypothalamic, -1},
      {14, "L-Post-Hypothalamus", R::hypothalamic, 15},
      {15, "R-Post-Hypothalamus", R::hypothalamic, 14},
      {16, "L-C-Mammilare", R::hypothalamic, 17},
      {17, "R-C-Mammilare", R::hypothalamic, 16},
      {18, "3rd-Ventricle", R::others, -1},
      {19, "L-Fornix", R::others, 20},
      {20, "R-Fornix", R::others, 19},
      {21, "Epiphysis", R::others, -1},
      {22, "Hypophysis", R::others, -1},
      {23, "Infundibulum", R::others, -1},
      {24, "Ant-Commisure", R::others, -1},
  };
  return LabelScheme("hypothalamus", std::move(s));
}

LabelScheme LabelScheme::phantom4() {
  std::vector<StructureInfo> s = {
      {1, "L-Nucleus", Region::hypothalamic, 2},
      {2, "R-Nucleus", Region::hypothalamic, 1},
      {3, "Core", Region::others, -1},
  };
  return LabelScheme("phantom4", std::move(s));
}

}  // namespace hypkit
