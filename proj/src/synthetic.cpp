#include "mgi/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "mgi/errors.hpp"
#include "mgi/patching.hpp"
#include "mgi/rng.hpp"

namespace mgi {

void SyntheticSpec::validate() const {
    if (num_scans < 1) throw DataError("SyntheticSpec: num_scans must be >= 1");
    for (const auto d : volume_shape)
        if (d < 1) throw DataError("SyntheticSpec: volume dimensions must be >= 1");
    for (const auto s : spacing_mm)
        if (s <= 0.0) throw DataError("SyntheticSpec: spacing must be positive");
    if (nodule_radius_mm_min <= 0.0 || nodule_radius_mm_max < nodule_radius_mm_min)
        throw DataError("SyntheticSpec: bad nodule radius range");
    if (tube_radius_mm_min <= 0.0 || tube_radius_mm_max < tube_radius_mm_min)
        throw DataError("SyntheticSpec: bad tube radius range");
    if (tube_length_mm_min <= 0.0 || tube_length_mm_max < tube_length_mm_min)
        throw DataError("SyntheticSpec: bad tube length range");
    if (noise_sigma_hu < 0.0) throw DataError("SyntheticSpec: noise sigma must be >= 0");
}

namespace {

constexpr std::int16_t kAirHu = -1000;

std::string scan_id(std::size_t index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "synth-%04zu", index);
    return buf;
}

struct Placement {
    Vec3 center_mm;
    double radius_mm;
};

Vec3 centered_origin(const SyntheticSpec& spec) {
    return {-(static_cast<double>(spec.volume_shape[0]) / 2.0) * spec.spacing_mm[0],
            -(static_cast<double>(spec.volume_shape[1]) / 2.0) * spec.spacing_mm[1],
            -(static_cast<double>(spec.volume_shape[2]) / 2.0) * spec.spacing_mm[2]};
}

/// World-space box where candidate centers may fall: far enough inside the
/// grid that every scale crop (plus the one-voxel augmentation shifts) reads
/// real voxels.
std::array<std::array<double, 2>, 3> interior_box(const SyntheticSpec& spec) {
    const Vec3 origin = centered_origin(spec);
    std::array<std::array<double, 2>, 3> box{};
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const double margin_vox = (axis == 2 ? 26.0 / 2 : 40.0 / 2) + 1.0;
        const double lo = origin[axis] + margin_vox * spec.spacing_mm[axis];
        const double hi =
            origin[axis] + (static_cast<double>(spec.volume_shape[axis]) - margin_vox) *
                               spec.spacing_mm[axis];
        if (lo >= hi)
            throw DataError("SyntheticSpec: volume too small for the patch scales");
        box[axis] = {lo, hi};
    }
    return box;
}

Vec3 random_point(Rng& rng, const std::array<std::array<double, 2>, 3>& box) {
    return {rng.uniform(box[0][0], box[0][1]), rng.uniform(box[1][0], box[1][1]),
            rng.uniform(box[2][0], box[2][1])};
}

double dist(const Vec3& a, const Vec3& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

/// Paint `hu` into all voxels within radius_mm of center (sharp edge).
void paint_sphere(Volume& v, const Vec3& center_mm, double radius_mm, std::int16_t hu) {
    const Vec3 c = world_to_voxel(v, center_mm);
    std::array<std::array<long, 2>, 3> bounds{};
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const double r_vox = radius_mm / v.spacing_mm[axis];
        bounds[axis][0] = std::max(0L, static_cast<long>(std::floor(c[axis] - r_vox)));
        bounds[axis][1] = std::min(static_cast<long>(v.dims[axis]) - 1,
                                   static_cast<long>(std::ceil(c[axis] + r_vox)));
    }
    const double r2 = radius_mm * radius_mm;
    for (long z = bounds[2][0]; z <= bounds[2][1]; ++z)
        for (long y = bounds[1][0]; y <= bounds[1][1]; ++y)
            for (long x = bounds[0][0]; x <= bounds[0][1]; ++x) {
                const Vec3 w = voxel_to_world(
                    v, {static_cast<double>(x), static_cast<double>(y),
                        static_cast<double>(z)});
                const double d2 = (w[0] - center_mm[0]) * (w[0] - center_mm[0]) +
                                  (w[1] - center_mm[1]) * (w[1] - center_mm[1]) +
                                  (w[2] - center_mm[2]) * (w[2] - center_mm[2]);
                if (d2 <= r2)
                    v.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                         static_cast<std::size_t>(z)) = hu;
            }
}

/// Paint a finite cylinder: axis through center_mm along unit direction,
/// half-length length_mm/2, radius radius_mm.
void paint_tube(Volume& v, const Vec3& center_mm, const Vec3& direction, double radius_mm,
                double length_mm, std::int16_t hu) {
    const double half = length_mm / 2.0;
    const double reach = half + radius_mm;
    std::array<std::array<long, 2>, 3> bounds{};
    for (std::size_t axis = 0; axis < 3; ++axis) {
        const Vec3 cv = world_to_voxel(v, center_mm);
        const double r_vox = reach / v.spacing_mm[axis];
        bounds[axis][0] = std::max(0L, static_cast<long>(std::floor(cv[axis] - r_vox)));
        bounds[axis][1] = std::min(static_cast<long>(v.dims[axis]) - 1,
                                   static_cast<long>(std::ceil(cv[axis] + r_vox)));
    }
    const double r2 = radius_mm * radius_mm;
    for (long z = bounds[2][0]; z <= bounds[2][1]; ++z)
        for (long y = bounds[1][0]; y <= bounds[1][1]; ++y)
            for (long x = bounds[0][0]; x <= bounds[0][1]; ++x) {
                const Vec3 w = voxel_to_world(
                    v, {static_cast<double>(x), static_cast<double>(y),
                        static_cast<double>(z)});
                const Vec3 rel{w[0] - center_mm[0], w[1] - center_mm[1],
                               w[2] - center_mm[2]};
                const double along =
                    rel[0] * direction[0] + rel[1] * direction[1] + rel[2] * direction[2];
                if (std::abs(along) > half) continue;
                const double perp2 = rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2] -
                                     along * along;
                if (perp2 <= r2)
                    v.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y),
                         static_cast<std::size_t>(z)) = hu;
            }
}

Vec3 random_unit_vector(Rng& rng) {
    // Uniform direction via normalized Gaussian triple.
    for (;;) {
        const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
        const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if (n > 1e-6) return {v[0] / n, v[1] / n, v[2] / n};
    }
}

/// Distance from point p to the segment center +- half * direction.
double point_segment_dist(const Vec3& p, const Vec3& center, const Vec3& direction,
                          double half) {
    const Vec3 rel{p[0] - center[0], p[1] - center[1], p[2] - center[2]};
    const double along = std::clamp(
        rel[0] * direction[0] + rel[1] * direction[1] + rel[2] * direction[2], -half, half);
    const Vec3 closest{center[0] + along * direction[0], center[1] + along * direction[1],
                       center[2] + along * direction[2]};
    return dist(p, closest);
}

} // namespace

SyntheticDataset generate(const SyntheticSpec& spec) {
    spec.validate();
    const auto box = interior_box(spec);

    SyntheticDataset data;
    data.volumes.reserve(spec.num_scans);

    for (std::size_t s = 0; s < spec.num_scans; ++s) {
        Rng rng(derive_seed(spec.seed, s));
        Volume v;
        v.series_id = scan_id(s);
        v.dims = spec.volume_shape;
        v.spacing_mm = spec.spacing_mm;
        v.origin_mm = centered_origin(spec);
        v.voxels.assign(v.size(), kAirHu);

        // Place nodules first, keeping them apart so their GT spheres stay
        // unambiguous; distractor tubes must then keep clear of every nodule.
        std::vector<Placement> nodules;
        constexpr int kMaxTries = 1000;
        for (std::size_t i = 0; i < spec.nodules_per_scan; ++i) {
            const double radius =
                rng.uniform(spec.nodule_radius_mm_min, spec.nodule_radius_mm_max);
            bool placed = false;
            for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
                const Vec3 center = random_point(rng, box);
                bool collides = false;
                for (const auto& other : nodules)
                    if (dist(center, other.center_mm) <
                        radius + other.radius_mm + 4.0)
                        collides = true;
                if (collides) continue;
                nodules.push_back({center, radius});
                placed = true;
            }
            if (!placed)
                throw DataError("synthetic: nodule placement failed after " +
                                std::to_string(kMaxTries) + " tries in scan " +
                                v.series_id);
        }

        for (const auto& n : nodules) {
            const double hu = rng.uniform(spec.nodule_hu_min, spec.nodule_hu_max);
            paint_sphere(v, n.center_mm, n.radius_mm, static_cast<std::int16_t>(hu));
            data.gt.push_back({v.series_id, n.center_mm, n.radius_mm});
            Candidate c;
            c.series_id = v.series_id;
            c.world_mm = n.center_mm;
            c.label = CandidateLabel::Nodule;
            data.candidates.push_back(std::move(c));
        }

        for (std::size_t i = 0; i < spec.distractors_per_scan; ++i) {
            const double radius =
                rng.uniform(spec.tube_radius_mm_min, spec.tube_radius_mm_max);
            const double length =
                rng.uniform(spec.tube_length_mm_min, spec.tube_length_mm_max);
            bool placed = false;
            for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
                const Vec3 center = random_point(rng, box);
                const Vec3 direction = random_unit_vector(rng);
                // The whole tube body must stay clear of every nodule sphere,
                // and the tube center (the candidate) clear of GT hits.
                bool collides = false;
                for (const auto& n : nodules)
                    if (point_segment_dist(n.center_mm, center, direction, length / 2.0) <
                        n.radius_mm + radius + 1.5)
                        collides = true;
                if (collides) continue;
                const double hu = rng.uniform(spec.nodule_hu_min, spec.nodule_hu_max);
                paint_tube(v, center, direction, radius, length,
                           static_cast<std::int16_t>(hu));
                Candidate c;
                c.series_id = v.series_id;
                c.world_mm = center;
                c.label = CandidateLabel::NonNodule;
                data.candidates.push_back(std::move(c));
                placed = true;
            }
            if (!placed)
                throw DataError("synthetic: distractor placement failed after " +
                                std::to_string(kMaxTries) + " tries in scan " +
                                v.series_id);
        }

        if (spec.noise_sigma_hu > 0.0) {
            for (auto& voxel : v.voxels) {
                const double noisy = voxel + rng.normal(0.0, spec.noise_sigma_hu);
                voxel = static_cast<std::int16_t>(std::clamp(
                    std::lround(noisy), -32768L, 32767L));
            }
        }

        data.volumes.push_back(std::move(v));
    }
    return data;
}

void export_dataset(const SyntheticDataset& data, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw DataError("cannot create dataset directory " + dir.string() + ": " +
                        ec.message());
    for (const auto& v : data.volumes)
        write_volume(v, dir / (v.series_id + ".mhd"));
    write_candidates_csv(data.candidates, dir / "candidates.csv");
    write_gt_csv(data.gt, dir / "groundtruth.csv");
}

} // namespace mgi
