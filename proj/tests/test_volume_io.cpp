#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mgi/errors.hpp"
#include "mgi/rng.hpp"
#include "mgi/volume_io.hpp"

using namespace mgi;

namespace {

Volume make_volume(std::array<std::size_t, 3> dims, Vec3 spacing, Vec3 origin,
                   const std::string& id = "test") {
    Volume v;
    v.series_id = id;
    v.dims = dims;
    v.spacing_mm = spacing;
    v.origin_mm = origin;
    v.voxels.resize(v.size());
    for (std::size_t i = 0; i < v.voxels.size(); ++i)
        v.voxels[i] = static_cast<std::int16_t>(static_cast<int>(i % 3000) - 1000);
    return v;
}

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "mgi_volio_test";
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST_CASE("MetaImage round trip preserves voxels and geometry") {
    const auto dir = temp_dir();
    const Volume v = make_volume({8, 8, 4}, {0.7, 0.7, 2.5}, {-100.0, -100.0, -50.0}, "rt");
    write_volume(v, dir / "rt.mhd");
    const Volume r = load_volume(dir / "rt.mhd");
    CHECK(r.voxels == v.voxels);
    CHECK(r.dims == v.dims);
    CHECK(r.spacing_mm == v.spacing_mm);
    CHECK(r.origin_mm == v.origin_mm);
    CHECK(r.series_id == "rt");
    CHECK(r.slice_thickness_mm() == 2.5);
}

TEST_CASE("header fields pass through") {
    const auto dir = temp_dir();
    const Volume v = make_volume({4, 3, 2}, {0.7, 0.7, 2.5}, {1.0, 2.0, 3.0}, "sp");
    write_volume(v, dir / "sp.mhd");
    const Volume r = load_volume(dir / "sp.mhd");
    CHECK(r.spacing_mm == Vec3{0.7, 0.7, 2.5});
}

TEST_CASE("loader errors name the offending input") {
    const auto dir = temp_dir();
    CHECK_THROWS_AS(load_volume(dir / "does_not_exist.mhd"), DataError);

    {
        std::ofstream h(dir / "bad_type.mhd");
        h << "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
          << "ElementType = MET_DOUBLE\nElementDataFile = bad_type.raw\n";
        std::ofstream(dir / "bad_type.raw", std::ios::binary) << std::string(64, '\0');
    }
    CHECK_THROWS_WITH_AS(load_volume(dir / "bad_type.mhd"),
                         doctest::Contains("ElementType"), DataError);

    {
        std::ofstream h(dir / "malformed.mhd");
        h << "ObjectType = Image\nNDims 3\n";
    }
    CHECK_THROWS_WITH_AS(load_volume(dir / "malformed.mhd"),
                         doctest::Contains("malformed"), DataError);

    {
        std::ofstream h(dir / "no_dims.mhd");
        h << "ObjectType = Image\nNDims = 3\nElementType = MET_SHORT\n"
          << "ElementDataFile = no_dims.raw\n";
        std::ofstream(dir / "no_dims.raw", std::ios::binary) << std::string(16, '\0');
    }
    CHECK_THROWS_WITH_AS(load_volume(dir / "no_dims.mhd"), doctest::Contains("DimSize"),
                         DataError);
}

TEST_CASE("big endian raw data is byte swapped") {
    const auto dir = temp_dir();
    {
        std::ofstream h(dir / "be.mhd");
        h << "NDims = 3\nDimSize = 2 1 1\nElementType = MET_SHORT\n"
          << "ElementByteOrderMSB = True\nElementSpacing = 1 1 1\nOffset = 0 0 0\n"
          << "ElementDataFile = be.raw\n";
        // 0x0102 and 0xFF9C (-100) big endian
        const char bytes[4] = {0x01, 0x02, '\xff', '\x9c'};
        std::ofstream raw(dir / "be.raw", std::ios::binary);
        raw.write(bytes, 4);
    }
    const Volume v = load_volume(dir / "be.mhd");
    CHECK(v.voxels[0] == 0x0102);
    CHECK(v.voxels[1] == -100);
}

TEST_CASE("slice thickness filter keeps the boundary") {
    std::vector<Volume> volumes;
    volumes.push_back(make_volume({2, 2, 2}, {1, 1, 1.0}, {0, 0, 0}, "a"));
    volumes.push_back(make_volume({2, 2, 2}, {1, 1, 2.5}, {0, 0, 0}, "b"));
    volumes.push_back(make_volume({2, 2, 2}, {1, 1, 2.6}, {0, 0, 0}, "c"));

    const auto kept = filter_by_thickness(volumes);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].series_id == "a");
    CHECK(kept[1].series_id == "b"); // exactly 2.5 mm stays

    CHECK(filter_by_thickness({}).empty());

    const auto all = filter_by_thickness({volumes[0], volumes[1]});
    CHECK(all.size() == 2);
}

TEST_CASE("filter output is a subsequence of its input") {
    Rng rng(7);
    std::vector<Volume> volumes;
    for (int i = 0; i < 20; ++i)
        volumes.push_back(make_volume({2, 2, 2}, {1, 1, rng.uniform(0.5, 4.0)}, {0, 0, 0},
                                      "s" + std::to_string(i)));
    const auto kept = filter_by_thickness(volumes);
    std::size_t cursor = 0;
    for (const auto& k : kept) {
        while (cursor < volumes.size() && volumes[cursor].series_id != k.series_id)
            ++cursor;
        CHECK(cursor < volumes.size());
    }
}

TEST_CASE("world/voxel conversion hand cases") {
    const Volume ident = make_volume({16, 16, 16}, {1, 1, 1}, {0, 0, 0});
    CHECK(world_to_voxel(ident, {5, 6, 7}) == Vec3{5, 6, 7});

    const Volume v = make_volume({32, 32, 8}, {0.7, 0.7, 2.5}, {-100, -100, -50});
    const Vec3 voxel = world_to_voxel(v, {-93, -93, -45});
    CHECK(voxel[0] == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(voxel[1] == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(voxel[2] == doctest::Approx(2.0).epsilon(1e-12));

    CHECK(world_to_voxel(v, v.origin_mm) == Vec3{0, 0, 0});
    CHECK(voxel_to_world(v, {0, 0, 0}) == Vec3{-100, -100, -50});

    const Vec3 world = voxel_to_world(v, {10, 10, 2});
    CHECK(world[0] == doctest::Approx(-93.0).epsilon(1e-12));
    CHECK(world[1] == doctest::Approx(-93.0).epsilon(1e-12));
    CHECK(world[2] == doctest::Approx(-45.0).epsilon(1e-12));
}

TEST_CASE("world/voxel round trip over random geometries") {
    Rng rng(42);
    for (int trial = 0; trial < 1000; ++trial) {
        const Volume v = make_volume(
            {4, 4, 4},
            {rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0), rng.uniform(0.2, 3.0)},
            {rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(-500, 500)});
        const Vec3 w{rng.uniform(-400, 400), rng.uniform(-400, 400),
                     rng.uniform(-400, 400)};
        const Vec3 back = voxel_to_world(v, world_to_voxel(v, w));
        for (std::size_t i = 0; i < 3; ++i) {
            const double scale = std::max(1.0, std::abs(w[i]));
            CHECK(std::abs(back[i] - w[i]) / scale < 1e-9);
        }
    }
}

TEST_CASE("candidate CSV round trip") {
    const auto dir = temp_dir();
    std::vector<Candidate> cands;
    Candidate a;
    a.series_id = "s1";
    a.world_mm = {1.5, -2.25, 3.0};
    a.label = CandidateLabel::Nodule;
    cands.push_back(a);
    Candidate b;
    b.series_id = "s2";
    b.world_mm = {-10.0, 0.5, 99.0};
    b.label = CandidateLabel::NonNodule;
    cands.push_back(b);

    write_candidates_csv(cands, dir / "cands.csv");
    const auto read = read_candidates_csv(dir / "cands.csv");
    REQUIRE(read.size() == 2);
    CHECK(read[0].series_id == "s1");
    CHECK(read[0].world_mm == Vec3{1.5, -2.25, 3.0});
    CHECK(read[0].is_nodule());
    CHECK(!read[1].is_nodule());
}

TEST_CASE("candidate CSV rejects bad input") {
    const auto dir = temp_dir();
    {
        std::ofstream f(dir / "bad_header.csv");
        f << "foo,bar\n";
    }
    CHECK_THROWS_AS(read_candidates_csv(dir / "bad_header.csv"), DataError);
    {
        std::ofstream f(dir / "bad_class.csv");
        f << "seriesuid,coordX,coordY,coordZ,class\ns,1,2,3,7\n";
    }
    CHECK_THROWS_AS(read_candidates_csv(dir / "bad_class.csv"), DataError);
}
