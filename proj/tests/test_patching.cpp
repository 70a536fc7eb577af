#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "mgi/errors.hpp"
#include "mgi/patching.hpp"
#include "mgi/rng.hpp"

using namespace mgi;

namespace {

Volume constant_volume(std::int16_t hu, std::array<std::size_t, 3> dims = {64, 64, 40},
                       const std::string& id = "const") {
    Volume v;
    v.series_id = id;
    v.dims = dims;
    v.spacing_mm = {1.0, 1.0, 1.0};
    v.origin_mm = {0.0, 0.0, 0.0};
    v.voxels.assign(v.size(), hu);
    return v;
}

/// Sphere of soft tissue at the grid center, air elsewhere. Symmetric under
/// in-plane rotations about the center.
Volume sphere_volume(std::array<std::size_t, 3> dims = {64, 64, 40}, double radius = 6.0) {
    Volume v = constant_volume(-1000, dims, "sphere");
    const double cx = (static_cast<double>(dims[0]) - 1) / 2.0;
    const double cy = (static_cast<double>(dims[1]) - 1) / 2.0;
    const double cz = (static_cast<double>(dims[2]) - 1) / 2.0;
    for (std::size_t z = 0; z < dims[2]; ++z)
        for (std::size_t y = 0; y < dims[1]; ++y)
            for (std::size_t x = 0; x < dims[0]; ++x) {
                const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy) +
                                  (z - cz) * (z - cz);
                if (d2 <= radius * radius) v.at(x, y, z) = 50;
            }
    return v;
}

Candidate candidate_at(const Volume& v, Vec3 world, bool nodule = true) {
    Candidate c;
    c.series_id = v.series_id;
    c.world_mm = world;
    c.label = nodule ? CandidateLabel::Nodule : CandidateLabel::NonNodule;
    return c;
}

Patch make_patch(PatchShape shape, float value) {
    Patch p;
    p.shape = shape;
    p.values.assign(p.size(), value);
    return p;
}

} // namespace

TEST_CASE("normalize_hu fixed window") {
    Patch p = make_patch({2, 1, 1}, 0.0f);
    p.values = {-1000.0f, 400.0f};
    const Patch n = normalize_hu(p);
    CHECK(n.values[0] == 0.0f);
    CHECK(n.values[1] == 1.0f);

    p.values = {-300.0f, 2000.0f};
    const Patch m = normalize_hu(p);
    CHECK(m.values[0] == 0.5f); // (-300+1000)/1400
    CHECK(m.values[1] == 1.0f); // clamped

    p.values = {std::nanf(""), 0.0f};
    CHECK_THROWS_AS(normalize_hu(p), NumericError);
}

TEST_CASE("normalize_hu is monotone in HU") {
    Rng rng(3);
    Patch p = make_patch({64, 1, 1}, 0.0f);
    for (auto& v : p.values) v = static_cast<float>(rng.uniform(-2000, 3000));
    std::sort(p.values.begin(), p.values.end());
    const Patch n = normalize_hu(p);
    for (std::size_t i = 1; i < n.values.size(); ++i)
        CHECK(n.values[i] >= n.values[i - 1]);
}

TEST_CASE("resize_nearest identity and index rule") {
    Patch p = make_patch({20, 20, 6}, 0.0f);
    Rng rng(5);
    for (auto& v : p.values) v = static_cast<float>(rng.uniform(-1000, 400));
    const Patch same = resize_nearest(p);
    CHECK(same.values == p.values);

    // 40 -> 20: output index i reads source index 2i+1.
    Patch line = make_patch({40, 1, 1}, 0.0f);
    for (std::size_t x = 0; x < 40; ++x) line.at(x, 0, 0) = static_cast<float>(x);
    const Patch half = resize_nearest(line, {20, 1, 1});
    for (std::size_t i = 0; i < 20; ++i)
        CHECK(half.at(i, 0, 0) == static_cast<float>(2 * i + 1));

    const Patch c = resize_nearest(make_patch({30, 30, 10}, 7.5f));
    CHECK(std::all_of(c.values.begin(), c.values.end(),
                      [](float v) { return v == 7.5f; }));

    CHECK_THROWS_AS(resize_nearest(p, {0, 20, 6}), DataError);
}

TEST_CASE("resize_nearest introduces no new values") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        Patch src = make_patch({static_cast<std::size_t>(1 + rng.uniform_index(45)),
                                static_cast<std::size_t>(1 + rng.uniform_index(45)),
                                static_cast<std::size_t>(1 + rng.uniform_index(30))},
                               0.0f);
        for (auto& v : src.values)
            v = static_cast<float>(std::floor(rng.uniform(-1000, 400)));
        const Patch out = resize_nearest(src);
        const std::set<float> src_values(src.values.begin(), src.values.end());
        for (const float v : out.values) CHECK(src_values.count(v) == 1);
    }
}

TEST_CASE("extraction of a constant air volume is all zeros") {
    const Volume v = constant_volume(-1000);
    const PatchTriple t = extract_multiscale(v, candidate_at(v, {32, 32, 20}));
    for (const Patch* p : {&t.s1, &t.s2, &t.s3}) {
        CHECK(p->shape == kPatchShape);
        for (const float x : p->values) CHECK(x == 0.0f);
    }
}

TEST_CASE("scale-3 equals the raw crop under zero shift") {
    const Volume v = sphere_volume();
    const Candidate c = candidate_at(v, {32, 32, 20});
    const PatchTriple t = extract_multiscale(v, c);
    // Resize of a 20x20x6 crop is the identity, so s3 must equal the crop
    // normalized, voxel for voxel.
    for (std::size_t z = 0; z < 6; ++z)
        for (std::size_t y = 0; y < 20; ++y)
            for (std::size_t x = 0; x < 20; ++x) {
                const std::int16_t hu = v.at(32 - 10 + x, 32 - 10 + y, 20 - 3 + z);
                const float expect = static_cast<float>(
                    std::clamp((static_cast<double>(hu) + 1000.0) / 1400.0, 0.0, 1.0));
                CHECK(t.s3.at(x, y, z) == expect);
            }
}

TEST_CASE("padding near a face is the normalized air value") {
    const Volume v = constant_volume(50); // uniform soft tissue
    const Candidate c = candidate_at(v, {1, 32, 20}); // one voxel from the x=0 face
    const PatchTriple t = extract_multiscale(v, c);

    // Brute-force index check of the pad region in s1: the crop starts at
    // x = 1 - 20 = -19, so output index i reads source x = 2i+1 - 19;
    // indices mapping to x < 0 must be pad (0 after normalization).
    const float tissue = static_cast<float>((50.0 + 1000.0) / 1400.0);
    for (std::size_t i = 0; i < 20; ++i) {
        const long src_x = 2 * static_cast<long>(i) + 1 - 19;
        const float expect = src_x < 0 ? 0.0f : tissue;
        for (std::size_t z = 0; z < 6; ++z)
            for (std::size_t y = 0; y < 20; ++y)
                CHECK(t.s1.at(i, y, z) == expect);
    }
}

TEST_CASE("extraction errors") {
    const Volume v = constant_volume(0);
    Candidate wrong = candidate_at(v, {10, 10, 10});
    wrong.series_id = "other";
    CHECK_THROWS_WITH_AS(extract_multiscale(v, wrong), doctest::Contains("series"),
                         DataError);

    const Candidate far = candidate_at(v, {500, 10, 10});
    CHECK_THROWS_WITH_AS(extract_multiscale(v, far), doctest::Contains("degenerate"),
                         DataError);
}

TEST_CASE("augmentation specs are 81 distinct entries") {
    const auto specs = all_augmentation_specs();
    REQUIRE(specs.size() == 81);
    for (std::size_t i = 0; i < specs.size(); ++i)
        for (std::size_t j = i + 1; j < specs.size(); ++j)
            CHECK(!(specs[i] == specs[j]));
    for (const auto& s : specs) {
        CHECK((s.rotation_deg == 90 || s.rotation_deg == 180 || s.rotation_deg == 270));
        for (const int d : s.shift_voxels) CHECK((d >= -1 && d <= 1));
    }
}

TEST_CASE("rotation by 90 four times is the identity") {
    Rng rng(17);
    Patch p = make_patch({20, 20, 6}, 0.0f);
    for (auto& v : p.values) v = static_cast<float>(rng.uniform(0, 1));
    Patch r = p;
    for (int i = 0; i < 4; ++i) r = rotate_transverse(r, 90);
    CHECK(r.values == p.values);

    CHECK(rotate_transverse(p, 180).values ==
          rotate_transverse(rotate_transverse(p, 90), 90).values);
    CHECK(rotate_transverse(p, 270).values ==
          rotate_transverse(rotate_transverse(rotate_transverse(p, 90), 90), 90).values);
}

TEST_CASE("enumerate_augmentations yields 81 samples for a nodule") {
    const Volume v = sphere_volume();
    const Candidate c = candidate_at(v, {31.5, 31.5, 19.5});
    const auto augmented = enumerate_augmentations(v, c);
    CHECK(augmented.size() == 81);

    const Candidate non = candidate_at(v, {31.5, 31.5, 19.5}, /*nodule=*/false);
    CHECK_THROWS_AS(enumerate_augmentations(v, non), DataError);
}

TEST_CASE("rotation orbit of a centered sphere has identical voxel multisets") {
    const Volume v = sphere_volume();
    const Candidate c = candidate_at(v, {31.5, 31.5, 19.5});
    const PatchTriple base = extract_multiscale(v, c);
    for (const Patch* p : {&base.s1, &base.s2, &base.s3}) {
        std::vector<float> reference = p->values;
        std::sort(reference.begin(), reference.end());
        for (const int deg : {90, 180, 270}) {
            std::vector<float> rotated = rotate_transverse(*p, deg).values;
            std::sort(rotated.begin(), rotated.end());
            CHECK(rotated == reference);
        }
    }
}

TEST_CASE("patch cache round trip") {
    const Volume v = sphere_volume();
    PatchCache cache;

    PatchRecord nodule;
    nodule.candidate = candidate_at(v, {31.5, 31.5, 19.5});
    for (const auto& shift : all_shift_vectors())
        nodule.shift_variants.push_back(extract_multiscale(v, nodule.candidate, shift));
    cache.records.push_back(std::move(nodule));

    PatchRecord plain;
    plain.candidate = candidate_at(v, {20, 20, 15}, /*nodule=*/false);
    plain.shift_variants.push_back(extract_multiscale(v, plain.candidate));
    cache.records.push_back(std::move(plain));

    const auto path = std::filesystem::temp_directory_path() / "mgi_cache_test.bin";
    write_patch_cache(cache, path);
    const PatchCache read = read_patch_cache(path);
    REQUIRE(read.records.size() == 2);
    CHECK(read.records[0].shift_variants.size() == 27);
    CHECK(read.records[1].shift_variants.size() == 1);
    CHECK(read.records[0].base().s2.values == cache.records[0].base().s2.values);
    CHECK(read.records[0].candidate.is_nodule());
    CHECK(read.series_ids() == std::vector<std::string>{"sphere"});

    // The zero-shift variant really is the unshifted extraction.
    const PatchTriple direct = extract_multiscale(v, read.records[0].candidate);
    CHECK(read.records[0].base().s1.values == direct.s1.values);
}

TEST_CASE("per-fold augmentation bookkeeping is 81 per nodule") {
    CHECK(1205 * 81 == 97605);
    CHECK(1262 * 81 == 102222);
    CHECK(1260 * 81 == 102060);
    CHECK(1217 * 81 == 98577);
    CHECK(1284 * 81 == 104004);
}
