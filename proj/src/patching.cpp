#include "mgi/patching.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "mgi/errors.hpp"

namespace mgi {

namespace {

/// Round to nearest with ties toward +infinity.
long round_half_up(double x) { return static_cast<long>(std::floor(x + 0.5)); }

Patch crop_hu(const Volume& v, const std::array<long, 3>& center,
              const PatchShape& shape) {
    Patch p;
    p.shape = shape;
    p.values.resize(p.size());
    const std::array<long, 3> start{center[0] - static_cast<long>(shape[0]) / 2,
                                    center[1] - static_cast<long>(shape[1]) / 2,
                                    center[2] - static_cast<long>(shape[2]) / 2};
    std::size_t idx = 0;
    for (std::size_t z = 0; z < shape[2]; ++z) {
        const long vz = start[2] + static_cast<long>(z);
        const bool z_in = vz >= 0 && vz < static_cast<long>(v.nz());
        for (std::size_t y = 0; y < shape[1]; ++y) {
            const long vy = start[1] + static_cast<long>(y);
            const bool zy_in = z_in && vy >= 0 && vy < static_cast<long>(v.ny());
            for (std::size_t x = 0; x < shape[0]; ++x, ++idx) {
                const long vx = start[0] + static_cast<long>(x);
                const bool in = zy_in && vx >= 0 && vx < static_cast<long>(v.nx());
                p.values[idx] = in ? static_cast<float>(
                                         v.at(static_cast<std::size_t>(vx),
                                              static_cast<std::size_t>(vy),
                                              static_cast<std::size_t>(vz)))
                                   : static_cast<float>(kPadHu);
            }
        }
    }
    return p;
}

} // namespace

Patch resize_nearest(const Patch& src, const PatchShape& target) {
    for (const auto t : target)
        if (t == 0) throw DataError("resize_nearest: zero-sized target axis");
    for (const auto s : src.shape)
        if (s == 0) throw DataError("resize_nearest: zero-sized source axis");

    if (src.shape == target) return src;

    std::array<std::vector<std::size_t>, 3> map;
    for (std::size_t axis = 0; axis < 3; ++axis) {
        map[axis].resize(target[axis]);
        const double ratio =
            static_cast<double>(src.shape[axis]) / static_cast<double>(target[axis]);
        for (std::size_t i = 0; i < target[axis]; ++i) {
            const auto j = static_cast<std::size_t>(
                std::floor((static_cast<double>(i) + 0.5) * ratio));
            map[axis][i] = std::min(j, src.shape[axis] - 1);
        }
    }

    Patch out;
    out.shape = target;
    out.values.resize(out.size());
    std::size_t idx = 0;
    for (std::size_t z = 0; z < target[2]; ++z)
        for (std::size_t y = 0; y < target[1]; ++y)
            for (std::size_t x = 0; x < target[0]; ++x, ++idx)
                out.values[idx] = src.at(map[0][x], map[1][y], map[2][z]);
    return out;
}

Patch normalize_hu(const Patch& hu_patch) {
    Patch out;
    out.shape = hu_patch.shape;
    out.values.resize(hu_patch.values.size());
    constexpr double range = kHuWindowHi - kHuWindowLo;
    for (std::size_t i = 0; i < hu_patch.values.size(); ++i) {
        const double hu = hu_patch.values[i];
        if (std::isnan(hu))
            throw NumericError("normalize_hu: NaN voxel at index " + std::to_string(i));
        out.values[i] = static_cast<float>(
            std::clamp((hu - kHuWindowLo) / range, 0.0, 1.0));
    }
    return out;
}

Patch rotate_transverse(const Patch& p, int deg) {
    if (p.shape[0] != p.shape[1])
        throw DataError("rotate_transverse: x and y extents differ");
    const int quarter = ((deg / 90) % 4 + 4) % 4;
    if (deg % 90 != 0)
        throw DataError("rotate_transverse: angle must be a multiple of 90");
    if (quarter == 0) return p;

    const std::size_t n = p.shape[0];
    Patch out;
    out.shape = p.shape;
    out.values.resize(p.values.size());
    for (std::size_t z = 0; z < p.shape[2]; ++z) {
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
                // 90 deg counterclockwise: (x, y) <- (n-1-y, x)
                std::size_t sx = x, sy = y;
                switch (quarter) {
                    case 1: sx = n - 1 - y; sy = x; break;
                    case 2: sx = n - 1 - x; sy = n - 1 - y; break;
                    case 3: sx = y; sy = n - 1 - x; break;
                }
                out.at(x, y, z) = p.at(sx, sy, z);
            }
        }
    }
    return out;
}

std::vector<std::array<int, 3>> all_shift_vectors() {
    std::vector<std::array<int, 3>> out;
    out.reserve(27);
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) out.push_back({dx, dy, dz});
    return out;
}

std::size_t zero_shift_index() { return 13; } // center of the 3x3x3 enumeration

std::vector<AugmentationSpec> all_augmentation_specs() {
    std::vector<AugmentationSpec> out;
    out.reserve(81);
    for (const int deg : {90, 180, 270})
        for (const auto& shift : all_shift_vectors())
            out.push_back(AugmentationSpec{deg, shift});
    return out;
}

PatchTriple extract_multiscale(const Volume& v, const Candidate& c,
                               const std::array<int, 3>& shift_voxels) {
    if (c.series_id != v.series_id)
        throw DataError("extract_multiscale: candidate series '" + c.series_id +
                        "' does not match volume series '" + v.series_id + "'");

    const Vec3 voxel = world_to_voxel(v, c.world_mm);
    std::array<long, 3> center{};
    for (std::size_t i = 0; i < 3; ++i)
        center[i] = round_half_up(voxel[i]) + shift_voxels[i];

    // A candidate whose center is more than half the largest crop away from
    // the grid would produce pure padding; reject it loudly instead.
    const auto& largest = kScaleShapes[0];
    for (std::size_t i = 0; i < 3; ++i) {
        const long half = static_cast<long>(largest[i]) / 2;
        const long dim = i == 0 ? static_cast<long>(v.nx())
                       : i == 1 ? static_cast<long>(v.ny())
                                : static_cast<long>(v.nz());
        if (center[i] < -half || center[i] >= dim + half)
            throw DataError("extract_multiscale: degenerate candidate, center axis " +
                            std::to_string(i) + " at voxel " + std::to_string(center[i]) +
                            " is outside volume '" + v.series_id + "'");
    }

    PatchTriple t;
    t.source_candidate = c;
    t.s1 = normalize_hu(resize_nearest(crop_hu(v, center, kScaleShapes[0])));
    t.s2 = normalize_hu(resize_nearest(crop_hu(v, center, kScaleShapes[1])));
    t.s3 = normalize_hu(resize_nearest(crop_hu(v, center, kScaleShapes[2])));
    return t;
}

std::vector<PatchTriple> enumerate_augmentations(const Volume& v, const Candidate& c) {
    if (!c.is_nodule())
        throw DataError("enumerate_augmentations: candidate is not a nodule "
                        "(augmentation applies to nodules only)");

    // 27 extractions, 3 rotations each.
    std::vector<PatchTriple> shifted;
    shifted.reserve(27);
    for (const auto& shift : all_shift_vectors())
        shifted.push_back(extract_multiscale(v, c, shift));

    std::vector<PatchTriple> out;
    out.reserve(81);
    for (const int deg : {90, 180, 270}) {
        for (const auto& base : shifted) {
            PatchTriple t;
            t.source_candidate = base.source_candidate;
            t.s1 = rotate_transverse(base.s1, deg);
            t.s2 = rotate_transverse(base.s2, deg);
            t.s3 = rotate_transverse(base.s3, deg);
            out.push_back(std::move(t));
        }
    }
    return out;
}

const PatchTriple& PatchRecord::base() const {
    if (shift_variants.size() == 1) return shift_variants.front();
    return shift_variants.at(zero_shift_index());
}

std::vector<std::string> PatchCache::series_ids() const {
    std::set<std::string> ids;
    for (const auto& r : records) ids.insert(r.candidate.series_id);
    return {ids.begin(), ids.end()};
}

namespace {

constexpr char kCacheMagic[4] = {'M', 'G', 'P', 'C'};
constexpr std::uint32_t kCacheVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_f64(std::ofstream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_string(std::ofstream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
void write_patch(std::ofstream& out, const Patch& p) {
    out.write(reinterpret_cast<const char*>(p.values.data()),
              static_cast<std::streamsize>(p.values.size() * sizeof(float)));
}

std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
double read_f64(std::ifstream& in) {
    double v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::string read_string(std::ifstream& in) {
    const auto n = read_u32(in);
    std::string s(n, '\0');
    in.read(s.data(), n);
    return s;
}
Patch read_patch(std::ifstream& in) {
    Patch p;
    p.shape = kPatchShape;
    p.values.resize(p.size());
    in.read(reinterpret_cast<char*>(p.values.data()),
            static_cast<std::streamsize>(p.values.size() * sizeof(float)));
    return p;
}

} // namespace

void write_patch_cache(const PatchCache& cache, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw DataError("cannot write patch cache: " + path.string());
    out.write(kCacheMagic, 4);
    write_u32(out, kCacheVersion);
    write_u32(out, static_cast<std::uint32_t>(cache.records.size()));
    for (const auto& r : cache.records) {
        const auto& c = r.candidate;
        write_string(out, c.series_id);
        for (const double w : c.world_mm) write_f64(out, w);
        for (const auto& txt : c.coord_text) write_string(out, txt);
        write_u32(out, c.label ? (c.is_nodule() ? 2u : 1u) : 0u);
        write_u32(out, static_cast<std::uint32_t>(r.shift_variants.size()));
        for (const auto& t : r.shift_variants) {
            write_patch(out, t.s1);
            write_patch(out, t.s2);
            write_patch(out, t.s3);
        }
    }
    if (!out)
        throw DataError("failed writing patch cache: " + path.string());
}

PatchCache read_patch_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw DataError("cannot open patch cache: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCacheMagic, 4) != 0)
        throw DataError("patch cache: bad magic in " + path.string());
    const auto version = read_u32(in);
    if (version != kCacheVersion)
        throw DataError("patch cache: unsupported version " + std::to_string(version) +
                        " in " + path.string());

    PatchCache cache;
    const auto count = read_u32(in);
    cache.records.resize(count);
    for (auto& r : cache.records) {
        auto& c = r.candidate;
        c.series_id = read_string(in);
        for (auto& w : c.world_mm) w = read_f64(in);
        for (auto& txt : c.coord_text) txt = read_string(in);
        switch (read_u32(in)) {
            case 0: c.label.reset(); break;
            case 1: c.label = CandidateLabel::NonNodule; break;
            case 2: c.label = CandidateLabel::Nodule; break;
            default: throw DataError("patch cache: bad label code in " + path.string());
        }
        const auto variants = read_u32(in);
        if (variants != 1 && variants != 27)
            throw DataError("patch cache: record must hold 1 or 27 variants, got " +
                            std::to_string(variants));
        r.shift_variants.resize(variants);
        for (auto& t : r.shift_variants) {
            t.source_candidate = c;
            t.s1 = read_patch(in);
            t.s2 = read_patch(in);
            t.s3 = read_patch(in);
        }
        if (!in)
            throw DataError("patch cache truncated: " + path.string());
    }
    return cache;
}

} // namespace mgi
