#include "evcal/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "evcal/numerics.hpp"

namespace evcal::losses {

using numerics::clamp_logit;
using numerics::digamma;
using numerics::log_gamma;
using numerics::trigamma;

Matrix DirichletBatch::probabilities() const {
    Matrix p(alpha.rows(), alpha.cols());
    for (std::size_t i = 0; i < alpha.rows(); ++i) {
        double s = 0.0;
        for (double a : alpha.row(i)) s += a;
        auto dst = p.row(i);
        auto src = alpha.row(i);
        for (std::size_t k = 0; k < src.size(); ++k) dst[k] = src[k] / s;
    }
    return p;
}

DirichletBatch evidence_from_logits(const Matrix& logits, double lambda) {
    if (!(lambda > 0.0))
        throw std::invalid_argument("evidence_from_logits: lambda must be > 0");
    numerics::require_finite(logits, "evidence logits");
    DirichletBatch b;
    b.lambda = lambda;
    b.alpha = Matrix(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.size(); ++i)
        b.alpha.storage()[i] = std::exp(clamp_logit(logits.storage()[i])) + lambda;
    return b;
}

void require_one_hot(const Matrix& labels) {
    for (std::size_t i = 0; i < labels.rows(); ++i) {
        int ones = 0;
        for (double v : labels.row(i)) {
            if (v == 1.0) ++ones;
            else if (v != 0.0)
                throw std::invalid_argument("labels must be one-hot (entries 0 or 1)");
        }
        if (ones != 1)
            throw std::invalid_argument("labels must have exactly one 1 per row");
    }
}

Matrix one_hot(const std::vector<int>& labels, std::size_t num_classes) {
    Matrix y(labels.size(), num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
            throw std::invalid_argument("one_hot: label out of range");
        y(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return y;
}

namespace {

void require_shapes(const DirichletBatch& b, const Matrix& labels) {
    if (!b.alpha.same_shape(labels))
        throw std::invalid_argument("loss: labels shape does not match alpha");
    require_one_hot(labels);
}

}  // namespace

LossValue nll_loss(const DirichletBatch& batch, const Matrix& labels) {
    require_shapes(batch, labels);
    const std::size_t n = batch.alpha.rows();
    const std::size_t k = batch.alpha.cols();
    LossValue out;
    out.grad_logits = Matrix(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        double strength = 0.0;
        for (double a : batch.alpha.row(i)) strength += a;
        for (std::size_t j = 0; j < k; ++j) {
            const double a = batch.alpha(i, j);
            const double y = labels(i, j);
            if (y == 1.0) out.value += std::log(strength) - std::log(a);
            // d/d alpha = 1/S - y/alpha, chained through d alpha/d o = e^o
            out.grad_logits(i, j) =
                (1.0 / strength - y / a) * (a - batch.lambda) / static_cast<double>(n);
        }
    }
    out.value /= static_cast<double>(n);
    return out;
}

LossValue kl_loss(const DirichletBatch& batch, const Matrix& labels) {
    require_shapes(batch, labels);
    const std::size_t n = batch.alpha.rows();
    const std::size_t k = batch.alpha.cols();
    const double scale = 1.0 / (static_cast<double>(n) * static_cast<double>(k));
    LossValue out;
    out.grad_logits = Matrix(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        // alpha~ keeps false-class evidence and pins the true class to 1.
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j)
            s += labels(i, j) == 1.0 ? 1.0 : batch.alpha(i, j);
        double kl = log_gamma(s) - log_gamma(static_cast<double>(k));
        const double psi_s = digamma(s);
        const double dpsi_s = trigamma(s);
        for (std::size_t j = 0; j < k; ++j) {
            const double at = labels(i, j) == 1.0 ? 1.0 : batch.alpha(i, j);
            kl += -log_gamma(at) + (at - 1.0) * (digamma(at) - psi_s);
            if (labels(i, j) != 1.0) {
                const double d_at = (at - 1.0) * trigamma(at)
                                    - (s - static_cast<double>(k)) * dpsi_s;
                out.grad_logits(i, j) = scale * d_at * (batch.alpha(i, j) - batch.lambda);
            }
        }
        out.value += kl;
    }
    out.value *= scale;
    return out;
}

LossValue edl_loss(const DirichletBatch& batch, const Matrix& labels, double beta) {
    LossValue nll = nll_loss(batch, labels);
    LossValue kl = kl_loss(batch, labels);
    LossValue out;
    out.value = nll.value + beta * kl.value;
    out.grad_logits = nll.grad_logits;
    for (std::size_t i = 0; i < out.grad_logits.size(); ++i)
        out.grad_logits.storage()[i] += beta * kl.grad_logits.storage()[i];
    return out;
}

namespace {

/// Calibrated probabilities plus the e^o / T ratio needed by IM gradients.
struct CalibratedRows {
    Matrix probs;   // (e^o + gamma) / T
    Matrix ratio;   // e^o / T
};

CalibratedRows calibrated_rows(const Matrix& logits, double gamma) {
    if (gamma < 0.0)
        throw std::invalid_argument("IM loss: gamma must be >= 0");
    numerics::require_finite(logits, "IM loss logits");
    CalibratedRows c;
    c.probs = Matrix(logits.rows(), logits.cols());
    c.ratio = Matrix(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto in = logits.row(i);
        double mx = in[0];
        for (double v : in) mx = std::max(mx, v);
        // Shift only the gamma=0 path; gamma breaks translation invariance.
        const double shift = gamma == 0.0 ? mx : 0.0;
        double t = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            c.ratio(i, j) = std::exp(clamp_logit(in[j] - shift));
            t += c.ratio(i, j) + gamma;
        }
        for (std::size_t j = 0; j < in.size(); ++j) {
            c.ratio(i, j) /= t;
            c.probs(i, j) = c.ratio(i, j) + gamma / t;
        }
    }
    return c;
}

}  // namespace

LossValue entropy_loss(const Matrix& logits, double gamma) {
    const auto c = calibrated_rows(logits, gamma);
    const std::size_t n = logits.rows();
    const std::size_t k = logits.cols();
    LossValue out;
    out.grad_logits = Matrix(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        double row_ent = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double p = c.probs(i, j);
            row_ent -= p * std::log(p);
        }
        out.value += row_ent;
        for (std::size_t j = 0; j < k; ++j)
            out.grad_logits(i, j) = -c.ratio(i, j)
                * (std::log(c.probs(i, j)) + row_ent) / static_cast<double>(n);
    }
    out.value /= static_cast<double>(n);
    return out;
}

LossValue diversity_loss(const Matrix& logits, double gamma) {
    const auto c = calibrated_rows(logits, gamma);
    const std::size_t n = logits.rows();
    const std::size_t k = logits.cols();
    std::vector<double> mean(k, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) mean[j] += c.probs(i, j);
    for (double& m : mean) m /= static_cast<double>(n);

    LossValue out;
    out.grad_logits = Matrix(n, k);
    std::vector<double> log_mean(k);
    for (std::size_t j = 0; j < k; ++j) {
        log_mean[j] = std::log(mean[j]);
        out.value += mean[j] * log_mean[j];
    }
    for (std::size_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += c.probs(i, j) * log_mean[j];
        for (std::size_t j = 0; j < k; ++j)
            out.grad_logits(i, j) =
                c.ratio(i, j) * (log_mean[j] - dot) / static_cast<double>(n);
    }
    return out;
}

LossValue total_loss(const Matrix& logits, const Matrix& labels,
                     const LossWeights& weights, double lambda) {
    const DirichletBatch batch = evidence_from_logits(logits, lambda);
    LossValue edl = edl_loss(batch, labels, weights.beta);
    LossValue ent = entropy_loss(logits, weights.gamma);
    LossValue div = diversity_loss(logits, weights.gamma);
    LossValue out;
    out.value = weights.w1 * edl.value + weights.w2 * (ent.value + div.value);
    out.grad_logits = Matrix(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < out.grad_logits.size(); ++i)
        out.grad_logits.storage()[i] =
            weights.w1 * edl.grad_logits.storage()[i]
            + weights.w2 * (ent.grad_logits.storage()[i] + div.grad_logits.storage()[i]);
    return out;
}

}  // namespace evcal::losses
