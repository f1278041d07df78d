#pragma once

// Synthetic torus images and image file formats.
//
// Torus: an annulus between two concentric, axis-aligned ellipses centred
// at ((N-1)/2, (N-1)/2), intensity 1 inside the annulus and 0 elsewhere,
// then a Gaussian blur.  Semi-axes are drawn per axis, in pixels.
//
// Raw format: `<stem>.raw` holds little-endian values node after node
// (first axis slowest, vector components interleaved); `<stem>.hdr` is
//   LDDMM-RAW 1
//   dims <d>
//   extents <N0> <N1> [<N2>]
//   channels <c>
//   dtype float32|int32

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "lddmm/grid.hpp"

namespace lddmm::data {

struct TorusSpec {
    double inner_mean = 4.0;
    double inner_std = 2.0;
    double outer_mean = 12.0;
    double outer_std = 4.0;
    std::size_t size = 64;
    std::size_t count = 2560;
    std::uint64_t seed = 0;
    double blur_sigma = 1.0;  // pixels; 0 disables the blur
};

/// Throws InvalidParameter for size < 16, count < 2, negative stds or blur.
void validate(const TorusSpec& spec);

inline constexpr std::int32_t background_label = 0;
inline constexpr std::int32_t annulus_label = 1;
inline constexpr std::int32_t interior_label = 2;

struct TorusParams {
    std::array<double, 2> inner{};  // semi-axes along grid axes 0 and 1
    std::array<double, 2> outer{};
};

struct TorusSample {
    grid::ScalarImage image;
    grid::LabelImage labels;  // annulus, interior, background
    TorusParams params;
};

/// Semi-axes of image `index`, redrawn until 1 <= inner < outer <= size/2 - 2
/// per axis; GenerationError after 100 failed draws.  The stream depends
/// only on (seed, index).
TorusParams draw_torus(const TorusSpec& spec, std::size_t index);
TorusSample render_torus(const TorusParams& params, std::size_t size, double blur_sigma);
std::vector<TorusSample> simulate_torus(const TorusSpec& spec);

struct DatasetEntry {
    std::size_t index = 0;
    std::filesystem::path image;   // absolute after read_manifest
    std::filesystem::path labels;
    TorusParams params;
};

/// torus_<index>.raw, labels_<index>.raw (+ headers) and manifest.csv with
/// columns index,image,labels,inner0,inner1,outer0,outer1 (paths relative).
std::vector<DatasetEntry> write_torus_dataset(const std::filesystem::path& dir, const TorusSpec& spec);
/// Reads <dir>/manifest.csv; paths are resolved against `dir`.
std::vector<DatasetEntry> read_manifest(const std::filesystem::path& dir);

/// Separable Gaussian blur, kernel radius ceil(4 sigma), edge values repeated.
grid::ScalarImage gaussian_blur(const grid::ScalarImage& image, double sigma);

std::filesystem::path raw_header_path(const std::filesystem::path& raw);

void save_raw(const std::filesystem::path& path, const grid::ScalarImage& image);
void save_raw(const std::filesystem::path& path, const grid::VectorField& field);
void save_raw(const std::filesystem::path& path, const grid::LabelImage& labels);
grid::ScalarImage load_raw_image(const std::filesystem::path& path);
grid::VectorField load_raw_field(const std::filesystem::path& path);
grid::LabelImage load_raw_labels(const std::filesystem::path& path);

/// 8-bit binary PGM of a 2D image, value round(255 x / max) clipped at 0;
/// an image with max <= 0 is written as all zeros.  Rows are axis 0.
void export_pgm(const std::filesystem::path& path, const grid::ScalarImage& image);

/// Uncompressed little-endian single-file NIfTI-1 (.nii) with datatype
/// float32 or int16.  Reads the dimensions and raw voxel values only
/// (no scaling, no orientation); NIfTI axis i becomes grid axis i.
grid::ScalarImage load_nifti(const std::filesystem::path& path);

}  // namespace lddmm::data
