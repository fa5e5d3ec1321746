#pragma once

#include <cmath>
#include <string>
#include <vector>

namespace ringlab {

struct SummaryStats {
    std::size_t n = 0;
    double mean = 0;
    double stddev = 0;  // sample (n-1); 0 when n < 2
    double min = 0;
    double max = 0;

    double se() const { return n > 1 ? stddev / std::sqrt(static_cast<double>(n)) : 0.0; }
};

SummaryStats summarize(const std::vector<double>& values);

/// Area under the ROC curve for the detector "flag when distance is small":
/// P(d_wm < d_clean) + 0.5 P(d_wm = d_clean), computed from midranks so ties
/// are exact.
double roc_auc(const std::vector<double>& clean, const std::vector<double>& watermarked);

struct TprPoint {
    double fpr_level = 0;
    double tpr = 0;
    double threshold = 0;   // distance below which a sample is flagged
    bool degenerate = false;  // clean sample too small to realize fpr_level
};

/// Threshold = (k+1)-th smallest clean distance with k = floor(fpr * #clean),
/// so the achieved false-positive rate is at most fpr_level.
TprPoint tpr_at_fpr(const std::vector<double>& clean, const std::vector<double>& watermarked,
                    double fpr_level);

/// 0.5 * (KL(p||q) + KL(q||p)) between histograms of a and b over shared-range
/// equal-width bins, each smoothed as (count/n + 1e-10) / (1 + bins * 1e-10).
double symmetric_kld(const std::vector<double>& a, const std::vector<double>& b, int bins = 32);

struct DetectionReport {
    SummaryStats clean;
    SummaryStats watermarked;
    double auc = 0;
    std::vector<TprPoint> tpr;
    double kld = 0;
};

DetectionReport detect_report(const std::vector<double>& clean,
                              const std::vector<double>& watermarked,
                              const std::vector<double>& fpr_levels = {0.01, 0.05, 0.1});

std::string report_to_json(const DetectionReport& r);
std::string report_to_markdown(const DetectionReport& r);

}  // namespace ringlab
