#pragma once

#include <string>
#include <vector>

#include "evcal/matrix.hpp"

namespace evcal::calibration {

struct Bin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double accuracy = 0.0;
};

struct CalibrationReport {
    double ece = 0.0;
    double nll = 0.0;
    std::vector<Bin> bins;  // all m bins, empty ones with count 0
    std::size_t m = 15;

    std::string to_json() const;
};

/// Equal-width confidence bins over (0, 1], right-inclusive edges.
/// Confidence is the row max of `probs`; accuracy is argmax agreement.
CalibrationReport ece(const Matrix& probs, const std::vector<int>& labels,
                      std::size_t m = 15);

/// -(1/N) sum ln p_{i, y_i}, probabilities floored at 1e-12.
double nll(const Matrix& probs, const std::vector<int>& labels);

struct CurvePoint {
    double lo, hi;
    std::size_t count;
    double confidence;
    double accuracy;
};

/// Non-empty bins only, plot-ready against the x = y reference.
std::vector<CurvePoint> reliability_curve(const CalibrationReport& report);

void write_reliability_csv(const CalibrationReport& report, const std::string& path);

}  // namespace evcal::calibration
