#pragma once

#include <optional>
#include <string>
#include <vector>

#include "evcal/matrix.hpp"

namespace evcal::pseudolabel {

enum class PriorKind { UnaryBound, BinaryRelationship };

/// Target-distribution prior: per-class interval bounds (UB) or an ordering
/// chain over class proportions (BR).
struct PriorKnowledge {
    PriorKind kind = PriorKind::UnaryBound;
    std::vector<double> class_priors;  // a_k, sums to 1
    double sigma = 0.0;                // UB slack
    std::vector<int> class_order;      // descending-prior permutation

    void validate() const;

    static PriorKnowledge unary(std::vector<double> priors, double sigma);
    static PriorKnowledge binary(std::vector<double> priors);
    /// Empirical priors from source labels.
    static PriorKnowledge from_labels(const std::vector<int>& labels,
                                      std::size_t num_classes, PriorKind kind,
                                      double sigma);

    void save(const std::string& path) const;
    static PriorKnowledge load(const std::string& path);
};

enum class LabelSource { Raw, Rectified };

struct PseudolabelSet {
    std::vector<int> labels;
    LabelSource source = LabelSource::Raw;
    double log_likelihood = 0.0;  // sum_i ln p_{i, label_i}
};

/// Soft-prob weighted centroids, then nearest-centroid (cosine distance)
/// hard assignment, re-estimated for `rounds` rounds. When soft_out is set
/// it receives row-normalized centroid similarities whose argmax equals the
/// hard labels; rectification consumes these.
PseudolabelSet prototype_pseudolabels(const Matrix& features, const Matrix& probs,
                                      int rounds, Matrix* soft_out = nullptr);

/// Hard labels maximizing sum_i ln p_{i, y_i} subject to the prior's count
/// constraints; exact capacitated min-cost flow for UB, enumeration or
/// capacity repair for BR.
PseudolabelSet rectify(const Matrix& probs, const PriorKnowledge& prior);

struct ConstraintReport {
    bool ok = true;
    std::string violation;  // empty when ok
};

ConstraintReport check_constraints(const std::vector<int>& labels,
                                   const PriorKnowledge& prior,
                                   std::size_t num_classes);

std::vector<std::size_t> class_counts(const std::vector<int>& labels,
                                      std::size_t num_classes);

/// UB integer count bounds for n samples: [floor(n a_k (1-sigma)), ceil(n a_k (1+sigma))].
void unary_count_bounds(const PriorKnowledge& prior, std::size_t n,
                        std::vector<std::size_t>& lo, std::vector<std::size_t>& hi);

/// Best assignment with class counts forced into [lo_k, hi_k]; used by both
/// rectification modes. Throws on infeasibility.
PseudolabelSet assign_with_bounds(const Matrix& probs,
                                  const std::vector<std::size_t>& lo,
                                  const std::vector<std::size_t>& hi);

}  // namespace evcal::pseudolabel
