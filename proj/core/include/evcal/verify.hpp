#pragma once

#include <functional>
#include <string>
#include <vector>

#include "evcal/matrix.hpp"
#include "evcal/pseudolabel.hpp"

namespace evcal::verify {

/// Central finite differences of a scalar function of a matrix. Independent
/// of every analytic gradient it is used to check.
Matrix finite_difference(const std::function<double(const Matrix&)>& f,
                         Matrix point, double step = 1e-5);

struct GradCheckResult {
    bool ok = true;
    double worst_relative = 0.0;
    std::string worst_entry;
};

/// Entry-wise comparison: relative tolerance, absolute for near-zero entries.
GradCheckResult compare_gradients(const Matrix& analytic, const Matrix& numeric,
                                  double rel_tol = 1e-5, double abs_floor = 1e-8);

/// Exhaustive K^N search for the constrained max-log-likelihood labeling.
/// Returns an empty label vector when no feasible assignment exists.
pseudolabel::PseudolabelSet brute_force_rectify(const Matrix& probs,
                                                const pseudolabel::PriorKnowledge& prior);

/// Reference ECE with its own binning loop.
double reference_ece(const Matrix& probs, const std::vector<int>& labels,
                     std::size_t m);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// The fixed-seed invariant suite behind the `verify` CLI command.
std::vector<CheckResult> run_all_checks(std::uint64_t seed = 7);

}  // namespace evcal::verify
