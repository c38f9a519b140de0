#include "evcal/numerics.hpp"

#include <cmath>
#include <stdexcept>

namespace evcal::numerics {

double log_gamma(double x) {
    if (!(x > 0.0))
        throw std::domain_error("log_gamma: argument must be positive");
    return std::lgamma(x);
}

double digamma(double x) {
    if (!(x > 0.0))
        throw std::domain_error("digamma: argument must be positive");
    // psi(x) = psi(x + 1) - 1/x, shift until the asymptotic series converges.
    double result = 0.0;
    while (x < 6.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    // Bernoulli series through x^-12.
    double series = -0.5 * inv;
    series -= inv2 * (1.0 / 12.0
              - inv2 * (1.0 / 120.0
              - inv2 * (1.0 / 252.0
              - inv2 * (1.0 / 240.0
              - inv2 * (1.0 / 132.0
              - inv2 * (691.0 / 32760.0))))));
    return result + std::log(x) + series;
}

double trigamma(double x) {
    if (!(x > 0.0))
        throw std::domain_error("trigamma: argument must be positive");
    // psi'(x) = psi'(x + 1) + 1/x^2
    double result = 0.0;
    while (x < 6.0) {
        result += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    double series = inv + 0.5 * inv2;
    series += inv * inv2 * (1.0 / 6.0
              - inv2 * (1.0 / 30.0
              - inv2 * (1.0 / 42.0
              - inv2 * (1.0 / 30.0
              - inv2 * (5.0 / 66.0
              - inv2 * (691.0 / 2730.0))))));
    return result + series;
}

Matrix softmax(const Matrix& logits) {
    require_finite(logits, "softmax logits");
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto in = logits.row(i);
        auto dst = out.row(i);
        double mx = in[0];
        for (double v : in) mx = std::max(mx, v);
        double sum = 0.0;
        for (std::size_t k = 0; k < in.size(); ++k) {
            dst[k] = std::exp(in[k] - mx);
            sum += dst[k];
        }
        for (std::size_t k = 0; k < in.size(); ++k) dst[k] /= sum;
    }
    return out;
}

Matrix calibrated_softmax(const Matrix& logits, double gamma) {
    if (gamma < 0.0)
        throw std::invalid_argument("calibrated_softmax: gamma must be >= 0");
    if (gamma == 0.0) return softmax(logits);
    require_finite(logits, "calibrated_softmax logits");
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto in = logits.row(i);
        auto dst = out.row(i);
        double sum = 0.0;
        for (std::size_t k = 0; k < in.size(); ++k) {
            dst[k] = std::exp(clamp_logit(in[k])) + gamma;
            sum += dst[k];
        }
        for (std::size_t k = 0; k < in.size(); ++k) dst[k] /= sum;
    }
    return out;
}

std::size_t argmax_row(const Matrix& m, std::size_t i) {
    auto r = m.row(i);
    std::size_t best = 0;
    for (std::size_t k = 1; k < r.size(); ++k)
        if (r[k] > r[best]) best = k;
    return best;
}

void require_finite(const Matrix& m, const char* what) {
    for (double v : m.storage())
        if (!std::isfinite(v))
            throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

}  // namespace evcal::numerics
