#pragma once

// Named-tensor container: a JSON manifest next to a blob of raw little-endian
// doubles. Round trips are bit-exact.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tensor.hpp"

namespace dagkt::ad {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct TensorArchive {
  std::vector<NamedTensor> tensors;
  nlohmann::json metadata = nlohmann::json::object();

  const Tensor& at(const std::string& name) const;
};

/// Writes `<dir>/<stem>.json` and `<dir>/<stem>.bin`.
void save_archive(const std::filesystem::path& dir, const std::string& stem, const TensorArchive& archive);
TensorArchive load_archive(const std::filesystem::path& dir, const std::string& stem);

}  // namespace dagkt::ad
