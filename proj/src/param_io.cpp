#include "param_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "errors.hpp"

namespace dagkt::ad {
namespace {

static_assert(std::endian::native == std::endian::little,
              "tensor archives are written in host byte order, which must be little-endian");

constexpr const char* kFormat = "dagkt-tensors";
constexpr int kVersion = 1;

}  // namespace

const Tensor& TensorArchive::at(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.tensor;
  }
  throw LookupError("archive has no tensor named '" + name + "'");
}

void save_archive(const std::filesystem::path& dir, const std::string& stem, const TensorArchive& archive) {
  std::filesystem::create_directories(dir);
  const auto bin_name = stem + ".bin";
  std::ofstream bin(dir / bin_name, std::ios::binary);
  if (!bin) throw IoError("cannot write '" + (dir / bin_name).string() + "'");

  nlohmann::json entries = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : archive.tensors) {
    const auto bytes = t.tensor.values.size() * sizeof(double);
    bin.write(reinterpret_cast<const char*>(t.tensor.values.data()), static_cast<std::streamsize>(bytes));
    entries.push_back({{"name", t.name},
                       {"shape", t.tensor.shape},
                       {"offset", offset},
                       {"count", t.tensor.values.size()}});
    offset += bytes;
  }
  if (!bin) throw IoError("short write to '" + (dir / bin_name).string() + "'");

  nlohmann::json manifest{{"format", kFormat},
                          {"version", kVersion},
                          {"dtype", "float64"},
                          {"byte_order", "little"},
                          {"binary", bin_name},
                          {"tensors", std::move(entries)},
                          {"metadata", archive.metadata}};
  std::ofstream js(dir / (stem + ".json"), std::ios::binary);
  if (!js) throw IoError("cannot write manifest in '" + dir.string() + "'");
  js << manifest.dump(2) << '\n';
}

TensorArchive load_archive(const std::filesystem::path& dir, const std::string& stem) {
  std::ifstream js(dir / (stem + ".json"), std::ios::binary);
  if (!js) throw IoError("cannot open manifest '" + (dir / (stem + ".json")).string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("tensor manifest: ") + e.what());
  }
  if (manifest.value("format", "") != kFormat || manifest.value("version", 0) != kVersion) {
    throw ValidationError("unsupported tensor archive format");
  }
  std::ifstream bin(dir / manifest.at("binary").get<std::string>(), std::ios::binary);
  if (!bin) throw IoError("cannot open tensor blob in '" + dir.string() + "'");
  std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  TensorArchive archive;
  archive.metadata = manifest.value("metadata", nlohmann::json::object());
  for (const auto& e : manifest.at("tensors")) {
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto count = e.at("count").get<std::uint64_t>();
    if (offset + count * sizeof(double) > blob.size()) {
      throw ValidationError("tensor '" + e.at("name").get<std::string>() + "' exceeds the blob");
    }
    std::vector<double> values(count);
    std::memcpy(values.data(), blob.data() + offset, count * sizeof(double));
    archive.tensors.push_back({e.at("name").get<std::string>(),
                               Tensor(e.at("shape").get<Shape>(), std::move(values))});
  }
  return archive;
}

}  // namespace dagkt::ad
