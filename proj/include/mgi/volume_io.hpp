#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mgi {

using Vec3 = std::array<double, 3>; // (x, y, z)

/// A CT series: signed Hounsfield voxels plus physical geometry.
///
/// Voxels are stored slice-major (z, y, x); spacing and origin are expressed
/// (x, y, z) to mirror the MetaImage header. Immutable once loaded, safe to
/// share across threads.
struct Volume {
    std::string series_id;
    std::array<std::size_t, 3> dims{}; // (nx, ny, nz)
    Vec3 spacing_mm{};                 // all components > 0
    Vec3 origin_mm{};
    std::vector<std::int16_t> voxels;  // z-major: index = (z*ny + y)*nx + x

    std::size_t nx() const { return dims[0]; }
    std::size_t ny() const { return dims[1]; }
    std::size_t nz() const { return dims[2]; }
    std::size_t size() const { return dims[0] * dims[1] * dims[2]; }

    /// z spacing as reported by the source header.
    double slice_thickness_mm() const { return spacing_mm[2]; }

    std::int16_t at(std::size_t x, std::size_t y, std::size_t z) const {
        return voxels[(z * dims[1] + y) * dims[0] + x];
    }
    std::int16_t& at(std::size_t x, std::size_t y, std::size_t z) {
        return voxels[(z * dims[1] + y) * dims[0] + x];
    }
};

enum class CandidateLabel : std::uint8_t { NonNodule = 0, Nodule = 1 };

/// A proposed nodule location to be classified. World coordinates in mm.
struct Candidate {
    std::string series_id;
    Vec3 world_mm{};
    std::optional<CandidateLabel> label;
    std::optional<double> probability; // in [0, 1] when present
    // Original CSV coordinate text, kept so downstream CSVs echo the input
    // verbatim instead of reformatting parsed doubles.
    std::array<std::string, 3> coord_text{};

    bool is_nodule() const { return label && *label == CandidateLabel::Nodule; }
};

/// Read a MetaImage header/raw pair. Throws DataError naming the offending
/// header key on malformed or unsupported input.
Volume load_volume(const std::filesystem::path& mhd_path);

/// Write `v` as a MetaImage pair (MET_SHORT, little endian); the raw file
/// sits next to the header with the same stem.
void write_volume(const Volume& v, const std::filesystem::path& mhd_path);

/// Keep volumes whose slice thickness is <= max_mm, preserving order.
std::vector<Volume> filter_by_thickness(std::vector<Volume> volumes, double max_mm = 2.5);

/// Continuous voxel coordinates (x, y, z) of a world-space point:
/// voxel = (world - origin) / spacing, per axis.
Vec3 world_to_voxel(const Volume& v, const Vec3& world_mm);

/// Inverse of world_to_voxel: world = voxel * spacing + origin.
Vec3 voxel_to_world(const Volume& v, const Vec3& voxel);

/// Candidate CSV with header `seriesuid,coordX,coordY,coordZ,class`
/// (class in {0,1}). A missing class column yields unlabeled candidates.
std::vector<Candidate> read_candidates_csv(const std::filesystem::path& path);
void write_candidates_csv(const std::vector<Candidate>& candidates,
                          const std::filesystem::path& path);

} // namespace mgi
