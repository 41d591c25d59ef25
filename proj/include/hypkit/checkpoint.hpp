#pragma once

// Binary checkpoint of a three-plane model. Layout is documented in
// docs/checkpoint-format.md.

#include <cstdint>
#include <filesystem>
#include <string>

#include "hypkit/model.hpp"

namespace hypkit {

// Model architecture as stored in a checkpoint header.
struct ModelDescription {
  std::string scheme = "phantom4";  // "phantom4" or "hypothalamus"
  PlaneNetConfig base;
};

LabelScheme scheme_by_name(const std::string& name);

std::string describe_json(const ModelDescription& d);
ModelDescription parse_description(const std::string& json);

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelDescription& d,
                     HMVINN<T>& model);

// Rebuilds the model from the stored description and fills every tensor.
// FormatError on a malformed file or a tensor/architecture mismatch.
template <typename T>
HMVINN<T> load_checkpoint(const std::filesystem::path& path,
                          ModelDescription* description = nullptr);

// 64-bit FNV-1a of the file contents, printed as 16 hex digits.
std::string file_checksum(const std::filesystem::path& path);

}  // namespace hypkit
