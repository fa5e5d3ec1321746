#include "ringlab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ringlab {

namespace {

void check_distances(const std::vector<double>& v, const char* who) {
    if (v.empty()) throw std::invalid_argument(std::string(who) + ": empty sample");
    for (double x : v) {
        if (!std::isfinite(x)) throw std::invalid_argument(std::string(who) + ": non-finite value");
        if (x < 0) throw std::invalid_argument(std::string(who) + ": negative distance");
    }
}

}  // namespace

SummaryStats summarize(const std::vector<double>& values) {
    check_distances(values, "summarize");
    SummaryStats s;
    s.n = values.size();
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    double sum = 0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(s.n);
    if (s.n > 1) {
        double ssq = 0;
        for (double v : values) ssq += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ssq / static_cast<double>(s.n - 1));
    }
    return s;
}

double roc_auc(const std::vector<double>& clean, const std::vector<double>& watermarked) {
    check_distances(clean, "roc_auc");
    check_distances(watermarked, "roc_auc");
    struct Entry {
        double d;
        bool wm;
    };
    std::vector<Entry> all;
    all.reserve(clean.size() + watermarked.size());
    for (double d : clean) all.push_back({d, false});
    for (double d : watermarked) all.push_back({d, true});
    std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.d < b.d; });

    // Midrank sum of the watermarked group; U counts watermarked wins under
    // "larger distance wins", and the detector scores the complement count.
    double rank_sum = 0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        while (j < all.size() && all[j].d == all[i].d) ++j;
        double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (all[k].wm) rank_sum += midrank;
        i = j;
    }
    double nw = static_cast<double>(watermarked.size());
    double nc = static_cast<double>(clean.size());
    // Ranks and counts are half-integers, so u_low is the exact numerator a
    // pairwise enumeration would produce; a single division keeps the two
    // bit-identical.
    double u_low = nw * nc - (rank_sum - nw * (nw + 1.0) / 2.0);
    return u_low / (nw * nc);
}

TprPoint tpr_at_fpr(const std::vector<double>& clean, const std::vector<double>& watermarked,
                    double fpr_level) {
    check_distances(clean, "tpr_at_fpr");
    check_distances(watermarked, "tpr_at_fpr");
    if (fpr_level < 0 || fpr_level > 1)
        throw std::invalid_argument("tpr_at_fpr: level must lie in [0, 1]");
    std::vector<double> sorted = clean;
    std::sort(sorted.begin(), sorted.end());
    std::size_t k = static_cast<std::size_t>(fpr_level * static_cast<double>(sorted.size()));
    if (k >= sorted.size()) k = sorted.size() - 1;
    TprPoint p;
    p.fpr_level = fpr_level;
    p.threshold = sorted[k];
    p.degenerate = fpr_level * static_cast<double>(sorted.size()) < 1.0;
    std::size_t hits = 0;
    for (double d : watermarked)
        if (d < p.threshold) ++hits;
    p.tpr = static_cast<double>(hits) / static_cast<double>(watermarked.size());
    return p;
}

double symmetric_kld(const std::vector<double>& a, const std::vector<double>& b, int bins) {
    check_distances(a, "symmetric_kld");
    check_distances(b, "symmetric_kld");
    if (bins < 1) throw std::invalid_argument("symmetric_kld: bins must be >= 1");
    double lo = std::min(*std::min_element(a.begin(), a.end()),
                         *std::min_element(b.begin(), b.end()));
    double hi = std::max(*std::max_element(a.begin(), a.end()),
                         *std::max_element(b.begin(), b.end()));
    double width = hi - lo;
    auto histogram = [&](const std::vector<double>& v) {
        std::vector<double> p(bins, 0.0);
        for (double x : v) {
            int idx = width > 0 ? static_cast<int>((x - lo) / width * bins) : 0;
            if (idx >= bins) idx = bins - 1;
            p[idx] += 1.0;
        }
        const double eps = 1e-10;
        double denom = 1.0 + bins * eps;
        for (double& c : p) c = (c / static_cast<double>(v.size()) + eps) / denom;
        return p;
    };
    std::vector<double> p = histogram(a), q = histogram(b);
    double kl_pq = 0, kl_qp = 0;
    for (int i = 0; i < bins; ++i) {
        kl_pq += p[i] * std::log(p[i] / q[i]);
        kl_qp += q[i] * std::log(q[i] / p[i]);
    }
    return 0.5 * (kl_pq + kl_qp);
}

DetectionReport detect_report(const std::vector<double>& clean,
                              const std::vector<double>& watermarked,
                              const std::vector<double>& fpr_levels) {
    DetectionReport r;
    r.clean = summarize(clean);
    r.watermarked = summarize(watermarked);
    r.auc = roc_auc(clean, watermarked);
    for (double level : fpr_levels) r.tpr.push_back(tpr_at_fpr(clean, watermarked, level));
    r.kld = symmetric_kld(clean, watermarked);
    return r;
}

namespace {

nlohmann::json summary_to_json(const SummaryStats& s) {
    return {{"n", s.n}, {"mean", s.mean}, {"stddev", s.stddev}, {"min", s.min}, {"max", s.max}};
}

}  // namespace

std::string report_to_json(const DetectionReport& r) {
    nlohmann::json j;
    j["clean"] = summary_to_json(r.clean);
    j["watermarked"] = summary_to_json(r.watermarked);
    j["auc"] = r.auc;
    j["symmetric_kld"] = r.kld;
    j["tpr"] = nlohmann::json::array();
    for (const TprPoint& p : r.tpr)
        j["tpr"].push_back({{"fpr_level", p.fpr_level},
                            {"tpr", p.tpr},
                            {"threshold", p.threshold},
                            {"degenerate", p.degenerate}});
    return j.dump(2) + "\n";
}

std::string report_to_markdown(const DetectionReport& r) {
    std::ostringstream out;
    out.precision(6);
    out << "## Detection report\n\n";
    out << "| group | n | mean distance | stddev | min | max |\n";
    out << "|---|---|---|---|---|---|\n";
    out << "| clean | " << r.clean.n << " | " << r.clean.mean << " | " << r.clean.stddev << " | "
        << r.clean.min << " | " << r.clean.max << " |\n";
    out << "| watermarked | " << r.watermarked.n << " | " << r.watermarked.mean << " | "
        << r.watermarked.stddev << " | " << r.watermarked.min << " | " << r.watermarked.max
        << " |\n\n";
    out << "AUC: " << r.auc << "\n\n";
    out << "Symmetric KLD: " << r.kld << "\n\n";
    out << "| FPR level | TPR | threshold | degenerate |\n";
    out << "|---|---|---|---|\n";
    for (const TprPoint& p : r.tpr)
        out << "| " << p.fpr_level << " | " << p.tpr << " | " << p.threshold << " | "
            << (p.degenerate ? "yes" : "no") << " |\n";
    return out.str();
}

}  // namespace ringlab
