#pragma once

#include <filesystem>

#include "lesionforge/volume.hpp"

namespace lesionforge {

/// Reads a single-file NIfTI-1 image (.nii or .nii.gz, little-endian).
///
/// Supported datatypes are uint8, int16, float32 and float64; scl_slope and
/// scl_inter are applied when slope is nonzero. The affine comes from the
/// sform when sform_code > 0, else from the qform when qform_code > 0.
///
/// Throws FormatError on a bad header or magic, UnsupportedError on other
/// datatypes / big-endian / multi-frame files, ValidationError on non-finite
/// voxels and IoError when the file cannot be read.
Volume load_nifti(const std::filesystem::path& path);

/// load_nifti followed by a strict binary check.
Mask load_mask(const std::filesystem::path& path);

/// Header-only read: dims, spacing and affine without touching voxel data.
Grid read_nifti_grid(const std::filesystem::path& path);

/// Writes float32 data; gzip is used when the path ends in ".gz".
void save_nifti(const Volume& v, const std::filesystem::path& path);

/// Writes uint8 data; gzip is used when the path ends in ".gz".
void save_nifti(const Mask& m, const std::filesystem::path& path);

}  // namespace lesionforge
