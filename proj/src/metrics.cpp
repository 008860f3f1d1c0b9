#include "qaf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "qaf/errors.hpp"

namespace qaf {

namespace {

void split_scores(const std::vector<ScoredTrial>& trials, std::vector<double>& bona,
                  std::vector<double>& spoof) {
    for (const auto& t : trials) {
        if (!std::isfinite(t.score)) throw ValueError("metrics: non-finite score");
        if (t.label != 0 && t.label != 1) throw ValueError("metrics: label must be 0 or 1");
        (t.label == 1 ? bona : spoof).push_back(t.score);
    }
    if (bona.empty() || spoof.empty())
        throw ValueError("metrics: need at least one trial of each class");
    std::sort(bona.begin(), bona.end());
    std::sort(spoof.begin(), spoof.end());
}

// Counting against sorted arrays; ties at the threshold count as accepted.
double far_at(const std::vector<double>& spoof, double threshold) {
    auto it = std::lower_bound(spoof.begin(), spoof.end(), threshold);
    return static_cast<double>(spoof.end() - it) / static_cast<double>(spoof.size());
}

double frr_at(const std::vector<double>& bona, double threshold) {
    auto it = std::lower_bound(bona.begin(), bona.end(), threshold);
    return static_cast<double>(it - bona.begin()) / static_cast<double>(bona.size());
}

}  // namespace

std::vector<RocPoint> roc_curve(const std::vector<ScoredTrial>& trials) {
    std::vector<double> bona, spoof;
    split_scores(trials, bona, spoof);

    std::vector<double> thresholds;
    thresholds.reserve(trials.size());
    for (const auto& t : trials) thresholds.push_back(t.score);
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    const double inf = std::numeric_limits<double>::infinity();
    std::vector<RocPoint> roc;
    roc.reserve(thresholds.size() + 2);
    roc.push_back({-inf, 1.0, 0.0});
    for (double th : thresholds) roc.push_back({th, far_at(spoof, th), frr_at(bona, th)});
    roc.push_back({inf, 0.0, 1.0});
    return roc;
}

EerResult compute_eer(const std::vector<ScoredTrial>& trials) {
    std::vector<RocPoint> roc = roc_curve(trials);

    for (const auto& p : roc) {
        if (p.far == p.frr) return {p.far, p.threshold};
    }
    // diff goes from +1 at -inf to -1 at +inf; find the sign change.
    for (std::size_t i = 0; i + 1 < roc.size(); ++i) {
        double d0 = roc[i].far - roc[i].frr;
        double d1 = roc[i + 1].far - roc[i + 1].frr;
        if (d0 > 0.0 && d1 < 0.0) {
            double t = d0 / (d0 - d1);
            double eer = roc[i].far + t * (roc[i + 1].far - roc[i].far);
            double threshold;
            if (std::isinf(roc[i + 1].threshold))
                threshold = roc[i].threshold;  // crossing against the reject-all sentinel
            else if (std::isinf(roc[i].threshold))
                threshold = roc[i + 1].threshold;
            else
                threshold = roc[i].threshold + t * (roc[i + 1].threshold - roc[i].threshold);
            return {eer, threshold};
        }
    }
    throw NumericError("compute_eer: no FAR/FRR crossing found");
}

void write_roc_csv(const std::vector<RocPoint>& roc, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw FormatError(path + ": cannot open for writing");
    f << "threshold,far,frr\n";
    char buf[96];
    for (const auto& p : roc) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", p.threshold, p.far, p.frr);
        f << buf;
    }
    if (!f) throw FormatError(path + ": write failed");
}

}  // namespace qaf
