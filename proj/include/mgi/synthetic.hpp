#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mgi/evaluation.hpp"
#include "mgi/volume_io.hpp"

namespace mgi {

/// Desk-scale stand-in dataset: air-filled scans with soft-tissue spheres as
/// nodules and randomly oriented tubes as the vessel-like distractor class.
struct SyntheticSpec {
    std::size_t num_scans = 40;
    std::array<std::size_t, 3> volume_shape{96, 96, 48}; // (nx, ny, nz)
    Vec3 spacing_mm{0.7, 0.7, 1.25};
    std::size_t nodules_per_scan = 3;
    double nodule_radius_mm_min = 2.0;
    double nodule_radius_mm_max = 5.0;
    double nodule_hu_min = -100.0;
    double nodule_hu_max = 200.0;
    std::size_t distractors_per_scan = 15;
    double tube_radius_mm_min = 1.0;
    double tube_radius_mm_max = 2.5;
    double tube_length_mm_min = 15.0;
    double tube_length_mm_max = 40.0;
    double noise_sigma_hu = 20.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SyntheticDataset {
    std::vector<Volume> volumes;
    std::vector<GroundTruthNodule> gt;
    std::vector<Candidate> candidates; // every GT center plus every distractor
};

/// Deterministic under spec.seed; scans use independently derived seeds.
/// Throws DataError when object placement keeps colliding.
SyntheticDataset generate(const SyntheticSpec& spec);

/// MetaImage pairs plus candidates.csv and groundtruth.csv under `dir`.
void export_dataset(const SyntheticDataset& data, const std::filesystem::path& dir);

} // namespace mgi
