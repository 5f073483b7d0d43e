#pragma once

#include <filesystem>

#include "wmseg/volume.hpp"

namespace wmseg {

/// Reads a NIfTI-1 single file (.nii or gzip-compressed .nii.gz).
/// Supported datatypes: uint8, int16, float32, float64. The fourth
/// dimension becomes the channel axis.
Volume read_nifti(const std::filesystem::path& path);

/// Writes a little-endian NIfTI-1 file with a float32 payload. Paths ending in
/// ".gz" are gzip-compressed. A single-channel volume is written as 3D.
void write_nifti(const Volume& vol, const std::filesystem::path& path);

/// The 348-byte header plus the 4-byte extension flag, as written by
/// write_nifti. Exposed for format inspection.
std::vector<unsigned char> encode_nifti_header(const VolumeHeader& header);

}  // namespace wmseg
