#include "evcal/calibration.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "evcal/numerics.hpp"

namespace evcal::calibration {

CalibrationReport ece(const Matrix& probs, const std::vector<int>& labels,
                      std::size_t m) {
    if (m < 1) throw std::invalid_argument("ece: m must be >= 1");
    if (labels.size() != probs.rows())
        throw std::invalid_argument("ece: label count mismatch");
    const std::size_t n = probs.rows();
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0.0;
        for (double p : probs.row(i)) sum += p;
        if (std::abs(sum - 1.0) > 1e-6)
            throw std::invalid_argument("ece: probability row " + std::to_string(i) +
                                        " does not sum to 1");
    }

    CalibrationReport report;
    report.m = m;
    report.bins.resize(m);
    for (std::size_t b = 0; b < m; ++b) {
        report.bins[b].lo = static_cast<double>(b) / static_cast<double>(m);
        report.bins[b].hi = static_cast<double>(b + 1) / static_cast<double>(m);
    }

    std::vector<double> conf_sum(m, 0.0);
    std::vector<std::size_t> correct(m, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pred = numerics::argmax_row(probs, i);
        const double conf = probs(i, pred);
        // right-inclusive bins over (0, 1]: bin = ceil(conf * m) - 1
        std::size_t b = static_cast<std::size_t>(std::ceil(conf * static_cast<double>(m)));
        b = b == 0 ? 0 : b - 1;
        if (b >= m) b = m - 1;
        ++report.bins[b].count;
        conf_sum[b] += conf;
        if (static_cast<std::size_t>(labels[i]) == pred) ++correct[b];
    }
    for (std::size_t b = 0; b < m; ++b) {
        auto& bin = report.bins[b];
        if (bin.count == 0) continue;
        bin.mean_confidence = conf_sum[b] / static_cast<double>(bin.count);
        bin.accuracy = static_cast<double>(correct[b]) / static_cast<double>(bin.count);
        report.ece += static_cast<double>(bin.count) / static_cast<double>(n) *
                      std::abs(bin.accuracy - bin.mean_confidence);
    }
    report.nll = nll(probs, labels);
    return report;
}

double nll(const Matrix& probs, const std::vector<int>& labels) {
    if (labels.size() != probs.rows())
        throw std::invalid_argument("nll: label count mismatch");
    double total = 0.0;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= probs.cols())
            throw std::invalid_argument("nll: label out of range at row " +
                                        std::to_string(i));
        total -= std::log(std::max(probs(i, static_cast<std::size_t>(y)), 1e-12));
    }
    return total / static_cast<double>(probs.rows());
}

std::vector<CurvePoint> reliability_curve(const CalibrationReport& report) {
    std::vector<CurvePoint> curve;
    for (const auto& b : report.bins) {
        if (b.count == 0) continue;
        curve.push_back({b.lo, b.hi, b.count, b.mean_confidence, b.accuracy});
    }
    return curve;
}

std::string CalibrationReport::to_json() const {
    nlohmann::json j;
    j["ece"] = ece;
    j["nll"] = nll;
    j["m"] = m;
    j["bins"] = nlohmann::json::array();
    for (const auto& b : bins)
        j["bins"].push_back({{"lo", b.lo},
                             {"hi", b.hi},
                             {"count", b.count},
                             {"mean_confidence", b.mean_confidence},
                             {"accuracy", b.accuracy}});
    return j.dump(2);
}

void write_reliability_csv(const CalibrationReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write reliability csv: " + path);
    out << "bin_lo,bin_hi,count,confidence,accuracy\n";
    for (const auto& p : reliability_curve(report))
        out << p.lo << "," << p.hi << "," << p.count << "," << p.confidence << ","
            << p.accuracy << "\n";
}

}  // namespace evcal::calibration
