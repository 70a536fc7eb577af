#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mgi/volume_io.hpp"

namespace mgi {

/// A confirmed nodule: sphere of radius_mm around center_mm.
struct GroundTruthNodule {
    std::string series_id;
    Vec3 center_mm{};
    double radius_mm = 0.0; // > 0
};

/// The seven operating points the challenge averages over.
inline constexpr std::array<double, 7> kCpmFpPerScan{0.125, 0.25, 0.5, 1, 2, 4, 8};

/// Free-response operating characteristic. Points are stored with strictly
/// increasing fp_per_scan and non-decreasing sensitivity.
struct FrocCurve {
    struct Point {
        double fp_per_scan = 0.0;
        double sensitivity = 0.0;
    };
    std::vector<Point> points;
    std::size_t num_scans = 0;
    std::size_t num_gt = 0;
};

struct CpmResult {
    std::array<double, 7> sensitivities{}; // keyed by kCpmFpPerScan
    double average = 0.0;
    double ci_low = 0.0;  // 95% percentile bootstrap
    double ci_high = 0.0;
};

/// Hit relation: per prediction, the indices of every nodule it lies
/// strictly inside. Empty means the prediction is a false positive at any
/// threshold that selects it.
struct HitAssignment {
    std::vector<std::vector<std::size_t>> gt_indices; // parallel to predictions

    bool is_fp(std::size_t prediction) const { return gt_indices[prediction].empty(); }
};

/// A prediction hits a nodule iff it lies strictly inside the nodule sphere
/// on the same series (distance < radius). One prediction may hit several
/// overlapping nodules and several predictions may hit one nodule.
HitAssignment match_hits(const std::vector<Candidate>& predictions,
                         const std::vector<GroundTruthNodule>& gt);

/// Sweep thresholds over the sorted unique probabilities. At threshold t a
/// nodule counts as detected iff some hitting prediction has probability
/// >= t; every selected non-hitting prediction is a false positive.
/// Throws DataError when gt is empty.
FrocCurve froc(const std::vector<Candidate>& predictions,
               const std::vector<GroundTruthNodule>& gt, std::size_t num_scans);

/// Sensitivity at an FP/scan abscissa by linear interpolation between curve
/// points; below the smallest point the curve is anchored at (0, 0), above
/// the largest it saturates.
double sensitivity_at(const FrocCurve& curve, double fps);

/// Seven-point average sensitivity with a 95% percentile bootstrap CI from
/// resampling scans with replacement.
CpmResult cpm(const std::vector<Candidate>& predictions,
              const std::vector<GroundTruthNodule>& gt, std::size_t num_scans,
              std::size_t bootstrap_n = 1000, std::uint64_t seed = 0);

struct ConfusionCounts {
    std::size_t tp_in_gt = 0; // nodules detected at the threshold
    std::size_t fp = 0;       // selected predictions hitting no nodule
    std::size_t fn = 0;       // |gt| - tp_in_gt
};

ConfusionCounts confusion_counts(const std::vector<Candidate>& predictions,
                                 const std::vector<GroundTruthNodule>& gt,
                                 double threshold = 0.5);

/// False positives at threshold 0.5 grouped by confidence band:
/// LC [0.5, 0.7), MC [0.7, 0.9), HC [0.9, 1].
struct FpTriage {
    std::vector<std::size_t> low;      // indices into predictions
    std::vector<std::size_t> moderate;
    std::vector<std::size_t> high;
};

FpTriage triage_fps(const std::vector<Candidate>& predictions,
                    const std::vector<GroundTruthNodule>& gt);

/// Prediction CSV `seriesuid,coordX,coordY,coordZ,probability`.
std::vector<Candidate> read_predictions_csv(const std::filesystem::path& path);
void write_predictions_csv(const std::vector<Candidate>& predictions,
                           const std::filesystem::path& path);

/// GT CSV `seriesuid,coordX,coordY,coordZ,diameter_mm` (radius = diameter/2).
std::vector<GroundTruthNodule> read_gt_csv(const std::filesystem::path& path);
void write_gt_csv(const std::vector<GroundTruthNodule>& gt,
                  const std::filesystem::path& path);

/// FROC curve as CSV (fp_per_scan,sensitivity) and as a small standalone SVG.
void write_froc_csv(const FrocCurve& curve, const std::filesystem::path& path);
void write_froc_svg(const FrocCurve& curve, const std::filesystem::path& path);

} // namespace mgi
