#pragma once

#include <string>
#include <vector>

namespace qaf {

// One scored detection trial. Polarity is fixed: higher score means more
// bona fide; labels are 0 = spoof, 1 = bona fide.
struct ScoredTrial {
    double score = 0.0;
    int label = 0;
};

struct RocPoint {
    double threshold = 0.0;
    double far = 0.0;  // spoof accepted
    double frr = 0.0;  // bona fide rejected
};

// Operating points of the rule "accept iff score >= threshold": one point per
// distinct score plus sentinels at -inf (accept all) and +inf (reject all).
// FAR is non-increasing and FRR non-decreasing in the threshold.
std::vector<RocPoint> roc_curve(const std::vector<ScoredTrial>& trials);

struct EerResult {
    double eer = 0.0;
    double threshold = 0.0;
};

// Equal error rate by linear interpolation between the ROC points bracketing
// the FAR = FRR crossing; an exact crossing point is returned directly.
EerResult compute_eer(const std::vector<ScoredTrial>& trials);

// CSV: header `threshold,far,frr`, one row per ROC point.
void write_roc_csv(const std::vector<RocPoint>& roc, const std::string& path);

}  // namespace qaf
