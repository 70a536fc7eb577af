#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mgi/volume_io.hpp"

namespace mgi {

/// Patch extents in voxels, (x, y, z).
using PatchShape = std::array<std::size_t, 3>;

inline constexpr PatchShape kPatchShape{20, 20, 6};
inline constexpr std::array<PatchShape, 3> kScaleShapes{
    PatchShape{40, 40, 26}, // S1: widest field of view
    PatchShape{30, 30, 10}, // S2
    PatchShape{20, 20, 6},  // S3: tightest crop, native resolution
};

/// Hounsfield window for min-max normalization and the pad value for
/// out-of-volume regions (air).
inline constexpr double kHuWindowLo = -1000.0;
inline constexpr double kHuWindowHi = 400.0;
inline constexpr std::int16_t kPadHu = -1000;

/// A dense 3D float array. Values are HU before normalization, [0,1] after.
/// Layout is z-major (z, y, x) like Volume; shape is (x, y, z).
struct Patch {
    PatchShape shape{};
    std::vector<float> values;

    std::size_t size() const { return shape[0] * shape[1] * shape[2]; }
    float at(std::size_t x, std::size_t y, std::size_t z) const {
        return values[(z * shape[1] + y) * shape[0] + x];
    }
    float& at(std::size_t x, std::size_t y, std::size_t z) {
        return values[(z * shape[1] + y) * shape[0] + x];
    }
};

/// Three co-centered 20x20x6 patches at decreasing receptive scale,
/// normalized to [0,1].
struct PatchTriple {
    Patch s1, s2, s3;
    Candidate source_candidate;
};

/// One augmentation: an in-plane rotation of the resized patches plus a
/// one-voxel shift of the crop center in source-volume voxels.
struct AugmentationSpec {
    int rotation_deg = 90;                 // 90, 180 or 270
    std::array<int, 3> shift_voxels{0, 0, 0}; // each component in {-1, 0, 1}

    bool operator==(const AugmentationSpec&) const = default;
};

/// All 81 augmentations: {90, 180, 270} x {-1,0,1}^3, in a fixed order.
/// The unrotated, unshifted sample is not among them.
std::vector<AugmentationSpec> all_augmentation_specs();

/// Center-aligned nearest-neighbor resize: output voxel i on an axis copies
/// source index floor((i + 0.5) * src/dst), clamped in range.
Patch resize_nearest(const Patch& src, const PatchShape& target = kPatchShape);

/// clamp((hu + 1000) / 1400, 0, 1) per voxel; the window is fixed, never
/// per-patch. Throws NumericError on NaN input.
Patch normalize_hu(const Patch& hu_patch);

/// Rotate every transverse (x-y) slice by `deg` (multiple of 90)
/// counterclockwise. x and y extents must be equal.
Patch rotate_transverse(const Patch& p, int deg);

/// Extract the three scale crops around round(world_to_voxel(center)) +
/// shift, resize each to 20x20x6 and normalize. Out-of-volume voxels are
/// padded with -1000 HU. Throws DataError on series mismatch, or when the
/// center lies further than half the largest crop outside the grid.
PatchTriple extract_multiscale(const Volume& v, const Candidate& c,
                               const std::array<int, 3>& shift_voxels = {0, 0, 0});

/// The 81 augmented samples of a nodule candidate, in the order returned by
/// all_augmentation_specs(). Throws DataError for non-nodule candidates.
std::vector<PatchTriple> enumerate_augmentations(const Volume& v, const Candidate& c);

/// Disk cache: one record per candidate. Nodule records carry the 27
/// one-voxel-shift extraction variants (shift order matching
/// all_augmentation_specs); non-nodule records carry the base triple only.
/// Rotations are cheap and applied downstream, so they are not stored.
struct PatchRecord {
    Candidate candidate;
    std::vector<PatchTriple> shift_variants; // size 1 or 27

    /// Variant extracted with zero shift.
    const PatchTriple& base() const;
};

struct PatchCache {
    std::vector<PatchRecord> records;

    /// Sorted unique series ids over all records.
    std::vector<std::string> series_ids() const;
};

void write_patch_cache(const PatchCache& cache, const std::filesystem::path& path);
PatchCache read_patch_cache(const std::filesystem::path& path);

/// Index of the zero shift inside the 27-element shift enumeration.
std::size_t zero_shift_index();

/// The 27 shift vectors in enumeration order.
std::vector<std::array<int, 3>> all_shift_vectors();

} // namespace mgi
