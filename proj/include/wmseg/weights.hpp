#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wmseg/unet.hpp"

namespace wmseg::nn {

// Weight file layout (little-endian):
//   "PSEGW1"                  6 bytes
//   manifest length           uint32
//   manifest                  UTF-8 text, one `key value...` entry per line
//   payload                   float32 values of every tensor in manifest order
// The manifest lists the network config, optional tract names, the total
// parameter count, one `tensor <name> <dims...>` line per parameter and the
// CRC-32 of the payload.

inline constexpr char kWeightsMagic[] = "PSEGW1";

struct WeightsManifest {
  UNetConfig config;
  std::vector<std::string> tracts;
  int64_t parameter_count = 0;
  std::vector<std::pair<std::string, Shape>> tensors;
  uint32_t crc32 = 0;
};

void save_weights(const UNet<float>& model, const std::filesystem::path& path,
                  const std::vector<std::string>& tracts = {});

/// Reads the manifest only.
WeightsManifest read_weights_manifest(const std::filesystem::path& path);

/// Throws ConfigMismatchError when the stored config differs from cfg and
/// FormatError for damaged files.
UNet<float> load_weights(const std::filesystem::path& path, const UNetConfig& cfg,
                         std::vector<std::string>* tracts = nullptr);

/// Loads with whatever config the file declares.
UNet<float> load_weights(const std::filesystem::path& path, std::vector<std::string>* tracts = nullptr);

}  // namespace wmseg::nn
