#include "evcal/verify.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "evcal/calibration.hpp"
#include "evcal/losses.hpp"
#include "evcal/numerics.hpp"

namespace evcal::verify {

Matrix finite_difference(const std::function<double(const Matrix&)>& f,
                         Matrix point, double step) {
    Matrix grad(point.rows(), point.cols());
    for (std::size_t i = 0; i < point.size(); ++i) {
        const double orig = point.storage()[i];
        point.storage()[i] = orig + step;
        const double up = f(point);
        point.storage()[i] = orig - step;
        const double down = f(point);
        point.storage()[i] = orig;
        grad.storage()[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

GradCheckResult compare_gradients(const Matrix& analytic, const Matrix& numeric,
                                  double rel_tol, double abs_floor) {
    GradCheckResult result;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic.storage()[i];
        const double n = numeric.storage()[i];
        double err;
        if (std::abs(a) < abs_floor) {
            err = std::abs(a - n);
            if (err > abs_floor) result.ok = false;
            err /= abs_floor;  // report on the rel scale
        } else {
            err = std::abs(a - n) / std::max(std::abs(a), std::abs(n));
            if (err > rel_tol) result.ok = false;
        }
        if (err > result.worst_relative) {
            result.worst_relative = err;
            std::ostringstream os;
            os << "entry " << i << ": analytic " << a << " vs numeric " << n;
            result.worst_entry = os.str();
        }
    }
    return result;
}

pseudolabel::PseudolabelSet brute_force_rectify(
    const Matrix& probs, const pseudolabel::PriorKnowledge& prior) {
    const std::size_t n = probs.rows();
    const std::size_t k = probs.cols();
    std::vector<int> current(n, 0);
    pseudolabel::PseudolabelSet best;
    bool have = false;
    while (true) {
        if (pseudolabel::check_constraints(current, prior, k).ok) {
            double ll = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                ll += std::log(std::max(probs(i, static_cast<std::size_t>(current[i])), 1e-12));
            if (!have || ll > best.log_likelihood) {
                best.labels = current;
                best.log_likelihood = ll;
                best.source = pseudolabel::LabelSource::Rectified;
                have = true;
            }
        }
        // odometer over K^N assignments
        std::size_t pos = 0;
        while (pos < n && ++current[pos] == static_cast<int>(k)) current[pos++] = 0;
        if (pos == n) break;
    }
    if (!have) best.labels.clear();
    return best;
}

double reference_ece(const Matrix& probs, const std::vector<int>& labels,
                     std::size_t m) {
    const std::size_t n = probs.rows();
    double total = 0.0;
    for (std::size_t b = 0; b < m; ++b) {
        const double lo = static_cast<double>(b) / static_cast<double>(m);
        const double hi = static_cast<double>(b + 1) / static_cast<double>(m);
        double conf = 0.0, acc = 0.0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t pred = 0;
            for (std::size_t c = 1; c < probs.cols(); ++c)
                if (probs(i, c) > probs(i, pred)) pred = c;
            const double p = probs(i, pred);
            const bool in_bin = (b == 0) ? (p <= hi) : (p > lo && p <= hi);
            if (!in_bin) continue;
            ++count;
            conf += p;
            if (static_cast<std::size_t>(labels[i]) == pred) acc += 1.0;
        }
        if (count)
            total += static_cast<double>(count) / static_cast<double>(n) *
                     std::abs(acc / count - conf / count);
    }
    return total;
}

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                     double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Matrix m(rows, cols);
    for (double& v : m.storage()) v = dist(rng);
    return m;
}

std::vector<int> random_labels(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dist(0, static_cast<int>(k) - 1);
    std::vector<int> y(n);
    for (int& v : y) v = dist(rng);
    return y;
}

CheckResult check_gradient(const std::string& name,
                           const std::function<losses::LossValue(const Matrix&)>& loss,
                           const Matrix& logits) {
    CheckResult result{name, false, ""};
    const Matrix analytic = loss(logits).grad_logits;
    const Matrix numeric =
        finite_difference([&](const Matrix& o) { return loss(o).value; }, logits);
    const auto cmp = compare_gradients(analytic, numeric, 1e-4, 1e-8);
    result.passed = cmp.ok;
    result.detail = cmp.ok ? "max deviation " + std::to_string(cmp.worst_relative)
                           : cmp.worst_entry;
    return result;
}

}  // namespace

std::vector<CheckResult> run_all_checks(std::uint64_t seed) {
    std::vector<CheckResult> results;
    std::mt19937_64 rng(seed);

    // special function recurrences
    {
        bool ok = true;
        std::uniform_real_distribution<double> dist(1e-3, 100.0);
        for (int i = 0; i < 200 && ok; ++i) {
            const double x = dist(rng);
            ok = std::abs(numerics::digamma(x + 1.0) - numerics::digamma(x) - 1.0 / x) < 1e-10 &&
                 std::abs(numerics::log_gamma(x + 1.0) - numerics::log_gamma(x) - std::log(x)) < 1e-10;
        }
        results.push_back({"special-function recurrences", ok, ""});
    }

    // gradient checks, one per loss term
    {
        const Matrix logits = random_matrix(8, 5, rng);
        const Matrix y = losses::one_hot(random_labels(8, 5, rng), 5);
        const double lambda = 1.0, gamma = 1.0, beta = 0.5;
        results.push_back(check_gradient("grad L_nll", [&](const Matrix& o) {
            return losses::nll_loss(losses::evidence_from_logits(o, lambda), y);
        }, logits));
        results.push_back(check_gradient("grad L_kl", [&](const Matrix& o) {
            return losses::kl_loss(losses::evidence_from_logits(o, lambda), y);
        }, logits));
        results.push_back(check_gradient("grad L_edl", [&](const Matrix& o) {
            return losses::edl_loss(losses::evidence_from_logits(o, lambda), y, beta);
        }, logits));
        results.push_back(check_gradient("grad L_ent", [&](const Matrix& o) {
            return losses::entropy_loss(o, gamma);
        }, logits));
        results.push_back(check_gradient("grad L_div", [&](const Matrix& o) {
            return losses::diversity_loss(o, gamma);
        }, logits));
        results.push_back(check_gradient("grad L_total", [&](const Matrix& o) {
            return losses::total_loss(o, y, losses::LossWeights{}, lambda);
        }, logits));
    }

    // rectification vs exhaustive search
    {
        bool ok = true;
        std::string detail;
        for (int t = 0; t < 50 && ok; ++t) {
            const std::size_t n = 4 + t % 5;
            const std::size_t k = 2 + t % 2;
            Matrix probs = random_matrix(n, k, rng, 0.05, 1.0);
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (double v : probs.row(i)) s += v;
                for (std::size_t c = 0; c < k; ++c) probs(i, c) /= s;
            }
            std::vector<double> priors(k, 1.0 / static_cast<double>(k));
            auto prior = (t % 2 == 0)
                             ? pseudolabel::PriorKnowledge::unary(priors, 0.3)
                             : pseudolabel::PriorKnowledge::binary(priors);
            const auto flow = pseudolabel::rectify(probs, prior);
            const auto brute = brute_force_rectify(probs, prior);
            if (std::abs(flow.log_likelihood - brute.log_likelihood) > 1e-9) {
                ok = false;
                detail = "instance " + std::to_string(t) + ": flow " +
                         std::to_string(flow.log_likelihood) + " vs brute " +
                         std::to_string(brute.log_likelihood);
            }
        }
        results.push_back({"rectification vs brute force", ok, detail});
    }

    // ECE vs reference binning
    {
        bool ok = true;
        for (int t = 0; t < 100 && ok; ++t) {
            const std::size_t n = 20, k = 4;
            Matrix probs = random_matrix(n, k, rng, 0.01, 1.0);
            for (std::size_t i = 0; i < n; ++i) {
                double s = 0.0;
                for (double v : probs.row(i)) s += v;
                for (std::size_t c = 0; c < k; ++c) probs(i, c) /= s;
            }
            const auto labels = random_labels(n, k, rng);
            const auto report = calibration::ece(probs, labels, 15);
            ok = std::abs(report.ece - reference_ece(probs, labels, 15)) < 1e-12;
        }
        results.push_back({"ECE vs reference binning", ok, ""});
    }

    return results;
}

}  // namespace evcal::verify
