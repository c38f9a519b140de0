#pragma once

#include "evcal/matrix.hpp"

namespace evcal::losses {

/// Per-sample Dirichlet concentrations alpha_ik = e^{o_ik} + lambda.
struct DirichletBatch {
    Matrix alpha;   // N x K, every entry >= lambda
    double lambda = 1.0;

    /// alpha_ik / sum_j alpha_ij. Identical to calibrated_softmax(o, lambda).
    Matrix probabilities() const;
};

/// A scalar loss term together with its gradient w.r.t. the logits.
struct LossValue {
    double value = 0.0;
    Matrix grad_logits;
};

struct LossWeights {
    double w1 = 0.3;     // weight of the evidential term
    double w2 = 1.0;     // weight of the calibrated IM term
    double beta = 0.5;   // balance between marginal-likelihood and KL parts
    double gamma = 1.0;  // calibrated-softmax constant for the IM losses
};

DirichletBatch evidence_from_logits(const Matrix& logits, double lambda);

/// Negative log marginal likelihood under the Dirichlet, averaged over the
/// batch: (1/N) sum_i sum_k y_ik [ln S_i - ln alpha_ik].
LossValue nll_loss(const DirichletBatch& batch, const Matrix& labels);

/// (1/(N K)) sum_i KL( Dir(alpha~_i) || Dir(1) ) with the true-class entry of
/// alpha~ pinned to 1, so only false-class evidence is penalized.
LossValue kl_loss(const DirichletBatch& batch, const Matrix& labels);

/// nll + beta * kl.
LossValue edl_loss(const DirichletBatch& batch, const Matrix& labels, double beta);

/// Mean per-sample entropy of the calibrated softmax.
LossValue entropy_loss(const Matrix& logits, double gamma);

/// sum_k pbar_k ln pbar_k over the batch-mean calibrated prediction;
/// lives in [-ln K, 0].
LossValue diversity_loss(const Matrix& logits, double gamma);

/// w1 * (nll + beta * kl) + w2 * (entropy + diversity).
LossValue total_loss(const Matrix& logits, const Matrix& labels,
                     const LossWeights& weights, double lambda);

/// Labels must be exactly one-hot rows; throws otherwise.
void require_one_hot(const Matrix& labels);

Matrix one_hot(const std::vector<int>& labels, std::size_t num_classes);

}  // namespace evcal::losses
