#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "mgi/errors.hpp"
#include "mgi/evaluation.hpp"
#include "mgi/synthetic.hpp"

using namespace mgi;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.num_scans = 3;
    s.nodules_per_scan = 2;
    s.distractors_per_scan = 4;
    s.seed = 42;
    return s;
}

} // namespace

TEST_CASE("generation counts and labels") {
    SyntheticSpec spec = small_spec();
    spec.num_scans = 10;
    spec.nodules_per_scan = 5;
    const SyntheticDataset data = generate(spec);
    CHECK(data.volumes.size() == 10);
    CHECK(data.gt.size() == 50);
    std::size_t nodules = 0;
    for (const auto& c : data.candidates) nodules += c.is_nodule() ? 1 : 0;
    CHECK(nodules == 50);
    CHECK(data.candidates.size() == 50 + 10 * spec.distractors_per_scan);
}

TEST_CASE("zero nodules means empty GT and only non-nodule candidates") {
    SyntheticSpec spec = small_spec();
    spec.nodules_per_scan = 0;
    const SyntheticDataset data = generate(spec);
    CHECK(data.gt.empty());
    for (const auto& c : data.candidates) CHECK(!c.is_nodule());
}

TEST_CASE("generation is deterministic under the seed") {
    const SyntheticDataset a = generate(small_spec());
    const SyntheticDataset b = generate(small_spec());
    REQUIRE(a.volumes.size() == b.volumes.size());
    for (std::size_t i = 0; i < a.volumes.size(); ++i)
        CHECK(a.volumes[i].voxels == b.volumes[i].voxels);

    SyntheticSpec other = small_spec();
    other.seed = 43;
    const SyntheticDataset c = generate(other);
    CHECK(a.volumes[0].voxels != c.volumes[0].voxels);
}

TEST_CASE("nodule center voxel carries the configured intensity before noise") {
    SyntheticSpec spec = small_spec();
    spec.noise_sigma_hu = 0.0;
    const SyntheticDataset data = generate(spec);
    for (const auto& n : data.gt) {
        const Volume* v = nullptr;
        for (const auto& vol : data.volumes)
            if (vol.series_id == n.series_id) v = &vol;
        REQUIRE(v != nullptr);
        const Vec3 voxel = world_to_voxel(*v, n.center_mm);
        const auto hu = v->at(static_cast<std::size_t>(std::llround(voxel[0])),
                              static_cast<std::size_t>(std::llround(voxel[1])),
                              static_cast<std::size_t>(std::llround(voxel[2])));
        CHECK(hu >= spec.nodule_hu_min - 1);
        CHECK(hu <= spec.nodule_hu_max + 1);
    }
}

TEST_CASE("every GT nodule has a candidate strictly inside it") {
    const SyntheticDataset data = generate(small_spec());
    const auto hits = match_hits(data.candidates, data.gt);
    std::vector<bool> covered(data.gt.size(), false);
    for (std::size_t i = 0; i < data.candidates.size(); ++i)
        for (const std::size_t g : hits.gt_indices[i]) covered[g] = true;
    for (const bool c : covered) CHECK(c);

    // Distractor candidates never sit inside a GT sphere: the sensitivity
    // ceiling of 1.0 comes from the nodule candidates alone.
    for (std::size_t i = 0; i < data.candidates.size(); ++i)
        if (!data.candidates[i].is_nodule()) CHECK(hits.gt_indices[i].empty());
}

TEST_CASE("export and reload round trips, byte for byte on re-export") {
    const auto dir = std::filesystem::temp_directory_path() / "mgi_synth_test";
    std::filesystem::remove_all(dir);
    const SyntheticDataset data = generate(small_spec());
    export_dataset(data, dir);

    for (const auto& v : data.volumes) {
        const Volume r = load_volume(dir / (v.series_id + ".mhd"));
        CHECK(r.voxels == v.voxels);
        CHECK(r.spacing_mm == v.spacing_mm);
        CHECK(r.origin_mm == v.origin_mm);
    }

    const auto cands = read_candidates_csv(dir / "candidates.csv");
    CHECK(cands.size() == data.candidates.size());

    const auto gt = read_gt_csv(dir / "groundtruth.csv");
    REQUIRE(gt.size() == data.gt.size());
    for (std::size_t i = 0; i < gt.size(); ++i)
        CHECK(gt[i].radius_mm == doctest::Approx(data.gt[i].radius_mm).epsilon(1e-12));
}

TEST_CASE("spec validation") {
    SyntheticSpec spec = small_spec();
    spec.spacing_mm = {0.0, 1, 1};
    CHECK_THROWS_AS(generate(spec), DataError);
    spec = small_spec();
    spec.nodule_radius_mm_min = -1;
    CHECK_THROWS_AS(generate(spec), DataError);
    spec = small_spec();
    spec.volume_shape = {30, 30, 20}; // too small for the patch scales
    CHECK_THROWS_AS(generate(spec), DataError);
}
