#include "mgi/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mgi/errors.hpp"
#include "mgi/rng.hpp"

namespace mgi {

namespace {

double sq_dist(const Vec3& a, const Vec3& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double probability_of(const Candidate& c) {
    if (!c.probability)
        throw DataError("prediction for series '" + c.series_id +
                        "' carries no probability");
    return *c.probability;
}

/// Per-scan scoring ingredients, independent of any threshold: the best
/// hitting probability per nodule (detected nodules only), the nodule count,
/// and the probabilities of non-hitting predictions.
struct ScanScore {
    std::vector<double> gt_hit_probs; // one entry per nodule with >= 1 hit
    std::size_t gt_count = 0;
    std::vector<double> fp_probs;
};

std::map<std::string, ScanScore> group_by_scan(const std::vector<Candidate>& predictions,
                                               const std::vector<GroundTruthNodule>& gt,
                                               const HitAssignment& hits) {
    std::map<std::string, ScanScore> scans;
    std::vector<double> best_hit(gt.size(), -1.0);
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double p = probability_of(predictions[i]);
        if (hits.is_fp(i)) {
            scans[predictions[i].series_id].fp_probs.push_back(p);
        } else {
            for (const std::size_t g : hits.gt_indices[i])
                best_hit[g] = std::max(best_hit[g], p);
        }
    }
    for (std::size_t g = 0; g < gt.size(); ++g) {
        auto& scan = scans[gt[g].series_id];
        scan.gt_count += 1;
        if (best_hit[g] >= 0.0) scan.gt_hit_probs.push_back(best_hit[g]);
    }
    return scans;
}

FrocCurve froc_from_scans(const std::vector<const ScanScore*>& scans,
                          std::size_t num_scans) {
    std::vector<double> hit_probs;
    std::vector<double> fp_probs;
    std::size_t gt_total = 0;
    for (const auto* s : scans) {
        hit_probs.insert(hit_probs.end(), s->gt_hit_probs.begin(), s->gt_hit_probs.end());
        fp_probs.insert(fp_probs.end(), s->fp_probs.begin(), s->fp_probs.end());
        gt_total += s->gt_count;
    }
    if (gt_total == 0)
        throw DataError("froc: no ground-truth nodules, sensitivity undefined");

    std::vector<double> thresholds = hit_probs;
    thresholds.insert(thresholds.end(), fp_probs.begin(), fp_probs.end());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    std::sort(hit_probs.begin(), hit_probs.end());
    std::sort(fp_probs.begin(), fp_probs.end());

    // Descending threshold sweep; at equal fp/scan keep the best sensitivity.
    std::map<double, double> best_sens_by_fp;
    for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
        const double t = *it;
        const auto detected = static_cast<std::size_t>(
            hit_probs.end() - std::lower_bound(hit_probs.begin(), hit_probs.end(), t));
        const auto fp = static_cast<std::size_t>(
            fp_probs.end() - std::lower_bound(fp_probs.begin(), fp_probs.end(), t));
        const double sens = static_cast<double>(detected) / static_cast<double>(gt_total);
        const double fp_per_scan = static_cast<double>(fp) / static_cast<double>(num_scans);
        auto [slot, inserted] = best_sens_by_fp.try_emplace(fp_per_scan, sens);
        if (!inserted) slot->second = std::max(slot->second, sens);
    }

    FrocCurve curve;
    curve.num_scans = num_scans;
    curve.num_gt = gt_total;
    curve.points.reserve(best_sens_by_fp.size());
    double prev_sens = -1.0;
    for (const auto& [fps, sens] : best_sens_by_fp) {
        if (sens < prev_sens)
            throw NumericError("froc: sensitivity not monotone over fp/scan");
        prev_sens = sens;
        curve.points.push_back({fps, sens});
    }
    return curve;
}

} // namespace

HitAssignment match_hits(const std::vector<Candidate>& predictions,
                         const std::vector<GroundTruthNodule>& gt) {
    std::map<std::string, std::vector<std::size_t>> gt_by_series;
    for (std::size_t g = 0; g < gt.size(); ++g)
        gt_by_series[gt[g].series_id].push_back(g);

    HitAssignment out;
    out.gt_indices.resize(predictions.size());
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const auto it = gt_by_series.find(predictions[i].series_id);
        if (it == gt_by_series.end()) continue;
        for (const std::size_t g : it->second) {
            const double d2 = sq_dist(predictions[i].world_mm, gt[g].center_mm);
            // Strict inequality: a prediction exactly on the boundary misses.
            if (d2 < gt[g].radius_mm * gt[g].radius_mm) out.gt_indices[i].push_back(g);
        }
    }
    return out;
}

FrocCurve froc(const std::vector<Candidate>& predictions,
               const std::vector<GroundTruthNodule>& gt, std::size_t num_scans) {
    if (num_scans == 0)
        throw DataError("froc: num_scans must be >= 1");
    const auto hits = match_hits(predictions, gt);
    const auto scans = group_by_scan(predictions, gt, hits);
    std::vector<const ScanScore*> ptrs;
    ptrs.reserve(scans.size());
    for (const auto& [id, score] : scans) ptrs.push_back(&score);
    return froc_from_scans(ptrs, num_scans);
}

double sensitivity_at(const FrocCurve& curve, double fps) {
    if (curve.points.empty()) return 0.0;
    const auto& pts = curve.points;
    if (fps >= pts.back().fp_per_scan) return pts.back().sensitivity; // saturation

    // Anchor at (0, 0) below the smallest stored point.
    double x0 = 0.0, y0 = 0.0;
    for (const auto& p : pts) {
        if (fps <= p.fp_per_scan) {
            if (p.fp_per_scan == x0) return p.sensitivity;
            const double t = (fps - x0) / (p.fp_per_scan - x0);
            return y0 + t * (p.sensitivity - y0);
        }
        x0 = p.fp_per_scan;
        y0 = p.sensitivity;
    }
    return pts.back().sensitivity;
}

CpmResult cpm(const std::vector<Candidate>& predictions,
              const std::vector<GroundTruthNodule>& gt, std::size_t num_scans,
              std::size_t bootstrap_n, std::uint64_t seed) {
    if (bootstrap_n < 1)
        throw DataError("cpm: bootstrap_n must be >= 1");
    const auto hits = match_hits(predictions, gt);
    const auto scans = group_by_scan(predictions, gt, hits);
    if (scans.size() > num_scans)
        throw DataError("cpm: num_scans is smaller than the number of scans present");

    std::vector<const ScanScore*> all;
    all.reserve(scans.size());
    for (const auto& [id, score] : scans) all.push_back(&score);

    CpmResult result;
    const FrocCurve full = froc_from_scans(all, num_scans);
    double sum = 0.0;
    for (std::size_t i = 0; i < kCpmFpPerScan.size(); ++i) {
        result.sensitivities[i] = sensitivity_at(full, kCpmFpPerScan[i]);
        sum += result.sensitivities[i];
    }
    result.average = sum / static_cast<double>(kCpmFpPerScan.size());

    // Percentile bootstrap over scans. Scans beyond the ones present in the
    // data are empty; drawing them changes nothing but keeps the per-scan
    // false-positive denominator honest. Replicates without any nodule are
    // skipped (their sensitivity is undefined).
    const ScanScore empty_scan;
    Rng rng(seed);
    std::vector<double> averages;
    averages.reserve(bootstrap_n);
    std::vector<const ScanScore*> sample(num_scans);
    for (std::size_t rep = 0; rep < bootstrap_n; ++rep) {
        std::size_t gt_total = 0;
        for (std::size_t s = 0; s < num_scans; ++s) {
            const auto pick = rng.uniform_index(num_scans);
            sample[s] = pick < all.size() ? all[pick] : &empty_scan;
            gt_total += sample[s]->gt_count;
        }
        if (gt_total == 0) continue;
        const FrocCurve curve = froc_from_scans(sample, num_scans);
        double rep_sum = 0.0;
        for (const double fps : kCpmFpPerScan) rep_sum += sensitivity_at(curve, fps);
        averages.push_back(rep_sum / static_cast<double>(kCpmFpPerScan.size()));
    }

    if (averages.empty()) {
        result.ci_low = result.ci_high = result.average;
        return result;
    }
    std::sort(averages.begin(), averages.end());
    const auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(averages.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = static_cast<std::size_t>(std::ceil(pos));
        const double frac = pos - static_cast<double>(lo);
        return averages[lo] * (1.0 - frac) + averages[hi] * frac;
    };
    result.ci_low = std::min(quantile(0.025), result.average);
    result.ci_high = std::max(quantile(0.975), result.average);
    return result;
}

ConfusionCounts confusion_counts(const std::vector<Candidate>& predictions,
                                 const std::vector<GroundTruthNodule>& gt,
                                 double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw DataError("confusion_counts: threshold must lie in (0, 1)");
    const auto hits = match_hits(predictions, gt);
    std::vector<bool> detected(gt.size(), false);
    ConfusionCounts counts;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const double p = probability_of(predictions[i]);
        if (p < threshold) continue;
        if (hits.is_fp(i))
            counts.fp += 1;
        else
            for (const std::size_t g : hits.gt_indices[i]) detected[g] = true;
    }
    counts.tp_in_gt = static_cast<std::size_t>(
        std::count(detected.begin(), detected.end(), true));
    counts.fn = gt.size() - counts.tp_in_gt;
    return counts;
}

FpTriage triage_fps(const std::vector<Candidate>& predictions,
                    const std::vector<GroundTruthNodule>& gt) {
    const auto hits = match_hits(predictions, gt);
    FpTriage triage;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (!hits.is_fp(i)) continue;
        const double p = probability_of(predictions[i]);
        if (p >= 0.5 && p < 0.7)
            triage.low.push_back(i);
        else if (p >= 0.7 && p < 0.9)
            triage.moderate.push_back(i);
        else if (p >= 0.9 && p <= 1.0)
            triage.high.push_back(i);
    }
    return triage;
}

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) out.push_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_double_field(const std::string& s, const std::string& what,
                          std::size_t line_no, const std::filesystem::path& path) {
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw DataError("bad " + what + " '" + s + "' at line " + std::to_string(line_no) +
                        " of " + path.string());
    return value;
}

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace

std::vector<Candidate> read_predictions_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open prediction CSV: " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw DataError("prediction CSV is empty: " + path.string());
    const auto header = split_csv_line(trim(line));
    if (header.size() != 5 || header[0] != "seriesuid" || header[4] != "probability")
        throw DataError("prediction CSV: unexpected header '" + trim(line) + "' in " +
                        path.string());

    std::vector<Candidate> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 5)
            throw DataError("prediction CSV: expected 5 fields at line " +
                            std::to_string(line_no) + " of " + path.string());
        Candidate c;
        c.series_id = fields[0];
        for (std::size_t i = 0; i < 3; ++i) {
            c.coord_text[i] = fields[i + 1];
            c.world_mm[i] = parse_double_field(fields[i + 1], "coordinate", line_no, path);
        }
        const double p = parse_double_field(fields[4], "probability", line_no, path);
        if (p < 0.0 || p > 1.0)
            throw DataError("prediction CSV: probability out of [0,1] at line " +
                            std::to_string(line_no) + " of " + path.string());
        c.probability = p;
        out.push_back(std::move(c));
    }
    return out;
}

void write_predictions_csv(const std::vector<Candidate>& predictions,
                           const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write prediction CSV: " + path.string());
    out << "seriesuid,coordX,coordY,coordZ,probability\n";
    for (const auto& c : predictions) {
        out << c.series_id;
        for (std::size_t i = 0; i < 3; ++i)
            out << ',' << (c.coord_text[i].empty() ? format_double(c.world_mm[i])
                                                   : c.coord_text[i]);
        out << ',' << format_double(c.probability.value_or(0.0)) << '\n';
    }
    if (!out)
        throw DataError("failed writing prediction CSV: " + path.string());
}

std::vector<GroundTruthNodule> read_gt_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open GT CSV: " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw DataError("GT CSV is empty: " + path.string());
    const auto header = split_csv_line(trim(line));
    if (header.size() != 5 || header[0] != "seriesuid" || header[4] != "diameter_mm")
        throw DataError("GT CSV: unexpected header '" + trim(line) + "' in " +
                        path.string());

    std::vector<GroundTruthNodule> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 5)
            throw DataError("GT CSV: expected 5 fields at line " +
                            std::to_string(line_no) + " of " + path.string());
        GroundTruthNodule n;
        n.series_id = fields[0];
        for (std::size_t i = 0; i < 3; ++i)
            n.center_mm[i] = parse_double_field(fields[i + 1], "coordinate", line_no, path);
        const double diameter = parse_double_field(fields[4], "diameter", line_no, path);
        if (diameter <= 0.0)
            throw DataError("GT CSV: diameter must be positive at line " +
                            std::to_string(line_no) + " of " + path.string());
        n.radius_mm = diameter / 2.0;
        out.push_back(std::move(n));
    }
    return out;
}

void write_gt_csv(const std::vector<GroundTruthNodule>& gt,
                  const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write GT CSV: " + path.string());
    out << "seriesuid,coordX,coordY,coordZ,diameter_mm\n";
    for (const auto& n : gt) {
        out << n.series_id;
        for (std::size_t i = 0; i < 3; ++i) out << ',' << format_double(n.center_mm[i]);
        out << ',' << format_double(2.0 * n.radius_mm) << '\n';
    }
    if (!out)
        throw DataError("failed writing GT CSV: " + path.string());
}

void write_froc_csv(const FrocCurve& curve, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write FROC CSV: " + path.string());
    out << "fp_per_scan,sensitivity\n";
    for (const auto& p : curve.points)
        out << format_double(p.fp_per_scan) << ',' << format_double(p.sensitivity) << '\n';
}

void write_froc_svg(const FrocCurve& curve, const std::filesystem::path& path) {
    constexpr double width = 640, height = 420;
    constexpr double ml = 60, mr = 20, mt = 20, mb = 50;
    const double x_lo = std::log2(0.125), x_hi = std::log2(8.0);
    const auto map_x = [&](double fps) {
        const double lx = std::log2(std::max(fps, 0.0625));
        return ml + (lx - x_lo) / (x_hi - x_lo) * (width - ml - mr);
    };
    const auto map_y = [&](double sens) {
        return height - mb - sens * (height - mt - mb);
    };

    std::ofstream out(path);
    if (!out)
        throw DataError("cannot write FROC SVG: " + path.string());
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='"
        << height << "'>\n"
        << "<rect width='100%' height='100%' fill='white'/>\n";
    for (const double fps : kCpmFpPerScan) {
        const double x = map_x(fps);
        out << "<line x1='" << x << "' y1='" << mt << "' x2='" << x << "' y2='"
            << height - mb << "' stroke='#ddd'/>\n"
            << "<text x='" << x << "' y='" << height - mb + 18
            << "' font-size='11' text-anchor='middle'>" << fps << "</text>\n";
    }
    for (int i = 0; i <= 10; i += 2) {
        const double y = map_y(i / 10.0);
        out << "<line x1='" << ml << "' y1='" << y << "' x2='" << width - mr << "' y2='"
            << y << "' stroke='#ddd'/>\n"
            << "<text x='" << ml - 8 << "' y='" << y + 4
            << "' font-size='11' text-anchor='end'>" << i / 10.0 << "</text>\n";
    }
    out << "<text x='" << (ml + width - mr) / 2 << "' y='" << height - 12
        << "' font-size='12' text-anchor='middle'>false positives per scan</text>\n";
    out << "<polyline fill='none' stroke='#1f77b4' stroke-width='1.5' points='";
    for (const auto& p : curve.points)
        out << map_x(p.fp_per_scan) << ',' << map_y(p.sensitivity) << ' ';
    out << "'/>\n</svg>\n";
}

} // namespace mgi
