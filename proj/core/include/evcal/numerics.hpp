#pragma once

#include "evcal/matrix.hpp"

namespace evcal::numerics {

/// Logit clamp applied before exponentiation. Keeps e^o + offset well inside
/// the double range; evidence and calibrated-softmax paths share it.
inline constexpr double kLogitClamp = 60.0;

inline double clamp_logit(double o) {
    if (o > kLogitClamp) return kLogitClamp;
    if (o < -kLogitClamp) return -kLogitClamp;
    return o;
}

/// ln Gamma(x), x > 0. Throws std::domain_error otherwise.
double log_gamma(double x);

/// psi(x) = d/dx ln Gamma(x), x > 0. Recurrence shift to x >= 6, then the
/// asymptotic series with Bernoulli terms through x^-12.
double digamma(double x);

/// psi'(x), x > 0. Same shift-then-series scheme as digamma.
double trigamma(double x);

/// Row-wise softmax with max-subtraction. Rows sum to 1 within 1e-12.
Matrix softmax(const Matrix& logits);

/// Row-wise (e^{o_k} + gamma) / sum_j (e^{o_j} + gamma). Breaks translation
/// invariance for gamma > 0; gamma = 0 takes the softmax path exactly.
Matrix calibrated_softmax(const Matrix& logits, double gamma);

/// Index of the largest entry in a row; lowest index wins ties.
std::size_t argmax_row(const Matrix& m, std::size_t i);

void require_finite(const Matrix& m, const char* what);

}  // namespace evcal::numerics
