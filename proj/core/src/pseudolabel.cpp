#include "evcal/pseudolabel.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace evcal::pseudolabel {

namespace {

constexpr double kProbFloor = 1e-12;

double floored_log(double p) { return std::log(std::max(p, kProbFloor)); }

double log_likelihood_of(const Matrix& probs, const std::vector<int>& labels) {
    double ll = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        ll += floored_log(probs(i, static_cast<std::size_t>(labels[i])));
    return ll;
}

/// Successive-shortest-path min-cost max-flow. Costs are integers so the
/// residual graph is exactly free of negative cycles and SPFA terminates;
/// negative costs (lower-bound forcing arcs) are fine.
class MinCostFlow {
public:
    explicit MinCostFlow(int n) : head_(n, -1) {}

    int add_edge(int u, int v, long long cap, long long cost) {
        const int id = static_cast<int>(to_.size());
        to_.push_back(v); cap_.push_back(cap); cost_.push_back(cost);
        next_.push_back(head_[u]); head_[u] = id;
        to_.push_back(u); cap_.push_back(0); cost_.push_back(-cost);
        next_.push_back(head_[v]); head_[v] = id + 1;
        return id;
    }

    long long flow_on(int edge_id) const { return cap_[edge_id ^ 1]; }

    long long run(int s, int t) {
        const int n = static_cast<int>(head_.size());
        long long total = 0;
        while (true) {
            std::vector<long long> dist(n, std::numeric_limits<long long>::max());
            std::vector<int> in_edge(n, -1);
            std::vector<char> in_queue(n, 0);
            std::deque<int> queue;
            dist[s] = 0;
            queue.push_back(s);
            in_queue[s] = 1;
            while (!queue.empty()) {
                const int u = queue.front();
                queue.pop_front();
                in_queue[u] = 0;
                for (int e = head_[u]; e != -1; e = next_[e]) {
                    if (cap_[e] <= 0) continue;
                    const int v = to_[e];
                    const long long nd = dist[u] + cost_[e];
                    if (nd < dist[v]) {
                        dist[v] = nd;
                        in_edge[v] = e;
                        if (!in_queue[v]) {
                            queue.push_back(v);
                            in_queue[v] = 1;
                        }
                    }
                }
            }
            if (in_edge[t] == -1) break;
            long long push = std::numeric_limits<long long>::max();
            for (int v = t; v != s; v = to_[in_edge[v] ^ 1])
                push = std::min(push, cap_[in_edge[v]]);
            for (int v = t; v != s; v = to_[in_edge[v] ^ 1]) {
                cap_[in_edge[v]] -= push;
                cap_[in_edge[v] ^ 1] += push;
            }
            total += push;
        }
        return total;
    }

private:
    std::vector<int> head_, to_, next_;
    std::vector<long long> cap_, cost_;
};

}  // namespace

void PriorKnowledge::validate() const {
    if (class_priors.empty())
        throw std::invalid_argument("prior: class_priors empty");
    double sum = 0.0;
    for (double a : class_priors) {
        if (a < 0.0) throw std::invalid_argument("prior: negative class prior");
        sum += a;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("prior: class_priors must sum to 1");
    if (sigma < 0.0) throw std::invalid_argument("prior: sigma must be >= 0");
    if (!class_order.empty()) {
        std::vector<int> seen(class_priors.size(), 0);
        for (int c : class_order) {
            if (c < 0 || static_cast<std::size_t>(c) >= class_priors.size() || seen[c]++)
                throw std::invalid_argument("prior: class_order is not a permutation");
        }
    }
}

namespace {

std::vector<int> descending_order(const std::vector<double>& priors) {
    std::vector<int> order(priors.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (priors[a] != priors[b]) return priors[a] > priors[b];
        return a < b;
    });
    return order;
}

}  // namespace

PriorKnowledge PriorKnowledge::unary(std::vector<double> priors, double sigma) {
    PriorKnowledge p;
    p.kind = PriorKind::UnaryBound;
    p.class_priors = std::move(priors);
    p.sigma = sigma;
    p.class_order = descending_order(p.class_priors);
    p.validate();
    return p;
}

PriorKnowledge PriorKnowledge::binary(std::vector<double> priors) {
    PriorKnowledge p;
    p.kind = PriorKind::BinaryRelationship;
    p.class_priors = std::move(priors);
    p.class_order = descending_order(p.class_priors);
    p.validate();
    return p;
}

PriorKnowledge PriorKnowledge::from_labels(const std::vector<int>& labels,
                                           std::size_t num_classes, PriorKind kind,
                                           double sigma) {
    std::vector<double> priors(num_classes, 0.0);
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
            throw std::invalid_argument("from_labels: label out of range");
        priors[static_cast<std::size_t>(y)] += 1.0;
    }
    for (double& a : priors) a /= static_cast<double>(labels.size());
    return kind == PriorKind::UnaryBound ? unary(std::move(priors), sigma)
                                         : binary(std::move(priors));
}

void PriorKnowledge::save(const std::string& path) const {
    nlohmann::json j;
    j["kind"] = kind == PriorKind::UnaryBound ? "UB" : "BR";
    j["class_priors"] = class_priors;
    j["sigma"] = sigma;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write prior file: " + path);
    out << j.dump(2) << "\n";
}

PriorKnowledge PriorKnowledge::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read prior file: " + path);
    nlohmann::json j;
    in >> j;
    const std::string kind = j.at("kind").get<std::string>();
    auto priors = j.at("class_priors").get<std::vector<double>>();
    if (kind == "UB") return unary(std::move(priors), j.value("sigma", 0.0));
    if (kind == "BR") return binary(std::move(priors));
    throw std::runtime_error("prior file: kind must be UB or BR");
}

std::vector<std::size_t> class_counts(const std::vector<int>& labels,
                                      std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (int y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
}

void unary_count_bounds(const PriorKnowledge& prior, std::size_t n,
                        std::vector<std::size_t>& lo, std::vector<std::size_t>& hi) {
    const std::size_t k = prior.class_priors.size();
    lo.assign(k, 0);
    hi.assign(k, 0);
    const double dn = static_cast<double>(n);
    for (std::size_t c = 0; c < k; ++c) {
        const double a = prior.class_priors[c];
        lo[c] = static_cast<std::size_t>(
            std::floor(std::max(0.0, dn * a * (1.0 - prior.sigma))));
        hi[c] = static_cast<std::size_t>(
            std::min(dn, std::ceil(dn * a * (1.0 + prior.sigma))));
    }
}

PseudolabelSet assign_with_bounds(const Matrix& probs,
                                  const std::vector<std::size_t>& lo,
                                  const std::vector<std::size_t>& hi) {
    const std::size_t n = probs.rows();
    const std::size_t k = probs.cols();
    if (lo.size() != k || hi.size() != k)
        throw std::invalid_argument("assign_with_bounds: bound size mismatch");
    std::size_t lo_sum = 0, hi_sum = 0;
    for (std::size_t c = 0; c < k; ++c) {
        if (lo[c] > hi[c])
            throw std::runtime_error("rectify infeasible: class " + std::to_string(c) +
                                     " has lower bound above upper bound");
        lo_sum += lo[c];
        hi_sum += hi[c];
    }
    if (lo_sum > n)
        throw std::runtime_error("rectify infeasible: sum of lower bounds " +
                                 std::to_string(lo_sum) + " exceeds N = " +
                                 std::to_string(n));
    if (hi_sum < n)
        throw std::runtime_error("rectify infeasible: sum of upper bounds " +
                                 std::to_string(hi_sum) + " is below N = " +
                                 std::to_string(n));

    // source 0, samples 1..n, classes n+1..n+k, sink n+k+1
    const int src = 0;
    const int sink = static_cast<int>(n + k) + 1;
    MinCostFlow flow(sink + 1);
    // -ln p scaled to integers: exact arithmetic in the solver, and the
    // quantization (5e-13 per arc) is far below any decision margin we test.
    const double scale = 1e12;
    auto arc_cost = [&](double p) {
        return static_cast<long long>(std::llround(-floored_log(p) * scale));
    };
    // Forces lower-bound arcs to fill first; any real path costs at most
    // n * 27.7 * scale, so this dwarfs the achievable cost gap for n < 1e4.
    const long long forcing = 1LL << 60;
    std::vector<std::vector<int>> sample_edges(n);
    for (std::size_t i = 0; i < n; ++i) {
        flow.add_edge(src, static_cast<int>(i) + 1, 1, 0);
        sample_edges[i].reserve(k);
        for (std::size_t c = 0; c < k; ++c)
            sample_edges[i].push_back(flow.add_edge(
                static_cast<int>(i) + 1, static_cast<int>(n + c) + 1, 1,
                arc_cost(probs(i, c))));
    }
    std::vector<int> forced_edges(k, -1);
    for (std::size_t c = 0; c < k; ++c) {
        if (lo[c] > 0)
            forced_edges[c] = flow.add_edge(static_cast<int>(n + c) + 1, sink,
                                            static_cast<long long>(lo[c]), -forcing);
        if (hi[c] > lo[c])
            flow.add_edge(static_cast<int>(n + c) + 1, sink,
                          static_cast<long long>(hi[c] - lo[c]), 0);
    }

    if (flow.run(src, sink) != static_cast<long long>(n))
        throw std::runtime_error("rectify infeasible: could not assign all samples");
    for (std::size_t c = 0; c < k; ++c)
        if (forced_edges[c] != -1 &&
            flow.flow_on(forced_edges[c]) != static_cast<long long>(lo[c]))
            throw std::runtime_error("rectify infeasible: lower bound on class " +
                                     std::to_string(c) + " not met");

    PseudolabelSet out;
    out.source = LabelSource::Rectified;
    out.labels.assign(n, -1);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < k; ++c)
            if (flow.flow_on(sample_edges[i][c]) == 1) out.labels[i] = static_cast<int>(c);
    out.log_likelihood = log_likelihood_of(probs, out.labels);
    return out;
}

namespace {

std::vector<int> argmax_labels(const Matrix& probs) {
    std::vector<int> labels(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        auto r = probs.row(i);
        std::size_t best = 0;
        for (std::size_t c = 1; c < r.size(); ++c)
            if (r[c] > r[best]) best = c;
        labels[i] = static_cast<int>(best);
    }
    return labels;
}

/// Number of non-increasing count vectors of length k summing to n
/// (partitions of n into at most k parts), capped at `limit`.
std::size_t monotone_vector_count(std::size_t n, std::size_t k, std::size_t limit) {
    // dp over (remaining, parts left, current max) is overkill; recursive count
    // with cap keeps it simple.
    struct Counter {
        std::size_t limit;
        std::size_t count = 0;
        void rec(std::size_t rem, std::size_t parts, std::size_t max_part) {
            if (count >= limit) return;
            if (parts == 1) {
                if (rem <= max_part) ++count;
                return;
            }
            const std::size_t hi = std::min(rem, max_part);
            // each part needs the rest to still fit: rem - v <= v*(parts-1)
            for (std::size_t v = hi + 1; v-- > 0;) {
                if (rem - v > v * (parts - 1)) break;
                rec(rem - v, parts - 1, v);
            }
        }
    } c{limit};
    c.rec(n, k, n);
    return c.count;
}

void enumerate_monotone(std::size_t rem, std::size_t parts, std::size_t max_part,
                        std::vector<std::size_t>& prefix,
                        const std::function<void(const std::vector<std::size_t>&)>& visit) {
    if (parts == 1) {
        if (rem <= max_part) {
            prefix.push_back(rem);
            visit(prefix);
            prefix.pop_back();
        }
        return;
    }
    const std::size_t hi = std::min(rem, max_part);
    for (std::size_t v = hi + 1; v-- > 0;) {
        if (rem - v > v * (parts - 1)) break;
        prefix.push_back(v);
        enumerate_monotone(rem - v, parts - 1, v, prefix, visit);
        prefix.pop_back();
    }
}

/// Integer isotonic (non-increasing) projection of counts along the chain,
/// preserving the total.
std::vector<std::size_t> isotonic_counts(const std::vector<std::size_t>& counts) {
    const std::size_t k = counts.size();
    std::vector<double> value(counts.begin(), counts.end());
    std::vector<double> weight(k, 1.0);
    std::vector<std::size_t> len(k, 1);
    std::size_t blocks = 0;
    std::vector<double> bv(k);
    std::vector<std::size_t> bl(k);
    for (std::size_t i = 0; i < k; ++i) {
        bv[blocks] = value[i];
        bl[blocks] = 1;
        ++blocks;
        while (blocks > 1 && bv[blocks - 2] < bv[blocks - 1]) {
            const double merged =
                (bv[blocks - 2] * bl[blocks - 2] + bv[blocks - 1] * bl[blocks - 1]) /
                static_cast<double>(bl[blocks - 2] + bl[blocks - 1]);
            bl[blocks - 2] += bl[blocks - 1];
            bv[blocks - 2] = merged;
            --blocks;
        }
    }
    std::vector<double> fitted;
    for (std::size_t b = 0; b < blocks; ++b)
        fitted.insert(fitted.end(), bl[b], bv[b]);

    std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    std::vector<std::size_t> out(k);
    std::size_t floor_sum = 0;
    for (std::size_t i = 0; i < k; ++i) {
        out[i] = static_cast<std::size_t>(std::floor(fitted[i]));
        floor_sum += out[i];
    }
    // Distribute the remainder over the front; a +1 prefix stays monotone.
    std::size_t rem = total - floor_sum;
    for (std::size_t i = 0; i < k && rem > 0; ++i, --rem) ++out[i];
    return out;
}

PseudolabelSet solve_equality_counts(const Matrix& probs,
                                     const std::vector<std::size_t>& counts_by_class) {
    return assign_with_bounds(probs, counts_by_class, counts_by_class);
}

PseudolabelSet rectify_binary(const Matrix& probs, const PriorKnowledge& prior) {
    const std::size_t n = probs.rows();
    const std::size_t k = probs.cols();
    const auto& order = prior.class_order;

    auto to_class_counts = [&](const std::vector<std::size_t>& chain) {
        std::vector<std::size_t> by_class(k, 0);
        for (std::size_t j = 0; j < k; ++j) by_class[static_cast<std::size_t>(order[j])] = chain[j];
        return by_class;
    };

    constexpr std::size_t kEnumerationLimit = 500;
    if (monotone_vector_count(n, k, kEnumerationLimit) < kEnumerationLimit) {
        // Exact: ordering constraints only touch counts, so the optimum over
        // all monotone count vectors is the global optimum.
        PseudolabelSet best;
        bool have = false;
        std::vector<std::size_t> prefix;
        enumerate_monotone(n, k, n, prefix, [&](const std::vector<std::size_t>& chain) {
            PseudolabelSet cand = solve_equality_counts(probs, to_class_counts(chain));
            if (!have || cand.log_likelihood > best.log_likelihood) {
                best = std::move(cand);
                have = true;
            }
        });
        if (!have) throw std::runtime_error("rectify infeasible: no monotone count vector");
        return best;
    }

    // Large instances: isotonic projection of the argmax counts, then greedy
    // single-unit moves along the chain while they improve the likelihood.
    auto labels = argmax_labels(probs);
    auto counts = class_counts(labels, k);
    std::vector<std::size_t> chain(k);
    for (std::size_t j = 0; j < k; ++j) chain[j] = counts[static_cast<std::size_t>(order[j])];
    chain = isotonic_counts(chain);
    PseudolabelSet best = solve_equality_counts(probs, to_class_counts(chain));
    const std::size_t max_iter = k * n;
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        bool improved = false;
        for (std::size_t u = 0; u < k && !improved; ++u) {
            for (std::size_t v = 0; v < k && !improved; ++v) {
                if (u == v || chain[u] == 0) continue;
                std::vector<std::size_t> cand = chain;
                --cand[u];
                ++cand[v];
                bool monotone = true;
                for (std::size_t j = 0; j + 1 < k; ++j)
                    if (cand[j] < cand[j + 1]) { monotone = false; break; }
                if (!monotone) continue;
                PseudolabelSet sol = solve_equality_counts(probs, to_class_counts(cand));
                if (sol.log_likelihood > best.log_likelihood + 1e-12) {
                    best = std::move(sol);
                    chain = std::move(cand);
                    improved = true;
                }
            }
        }
        if (!improved) break;
    }
    return best;
}

}  // namespace

PseudolabelSet rectify(const Matrix& probs, const PriorKnowledge& prior) {
    prior.validate();
    if (prior.class_priors.size() != probs.cols())
        throw std::invalid_argument("rectify: prior class count does not match probs");
    if (probs.rows() == 0) throw std::invalid_argument("rectify: empty batch");
    if (prior.kind == PriorKind::UnaryBound) {
        std::vector<std::size_t> lo, hi;
        unary_count_bounds(prior, probs.rows(), lo, hi);
        return assign_with_bounds(probs, lo, hi);
    }
    return rectify_binary(probs, prior);
}

ConstraintReport check_constraints(const std::vector<int>& labels,
                                   const PriorKnowledge& prior,
                                   std::size_t num_classes) {
    ConstraintReport report;
    const auto counts = class_counts(labels, num_classes);
    if (prior.kind == PriorKind::UnaryBound) {
        std::vector<std::size_t> lo, hi;
        unary_count_bounds(prior, labels.size(), lo, hi);
        for (std::size_t c = 0; c < num_classes; ++c) {
            if (counts[c] < lo[c]) {
                report.ok = false;
                report.violation = "class " + std::to_string(c) + " count " +
                                   std::to_string(counts[c]) + " below lower bound " +
                                   std::to_string(lo[c]);
                return report;
            }
            if (counts[c] > hi[c]) {
                report.ok = false;
                report.violation = "class " + std::to_string(c) + " count " +
                                   std::to_string(counts[c]) + " above upper bound " +
                                   std::to_string(hi[c]);
                return report;
            }
        }
        return report;
    }
    const auto& order = prior.class_order;
    for (std::size_t j = 0; j + 1 < order.size(); ++j) {
        const std::size_t a = static_cast<std::size_t>(order[j]);
        const std::size_t b = static_cast<std::size_t>(order[j + 1]);
        if (counts[a] < counts[b]) {
            report.ok = false;
            report.violation = "ordering violated: class " + std::to_string(a) +
                               " count " + std::to_string(counts[a]) +
                               " < class " + std::to_string(b) + " count " +
                               std::to_string(counts[b]);
            return report;
        }
    }
    return report;
}

PseudolabelSet prototype_pseudolabels(const Matrix& features, const Matrix& probs,
                                      int rounds, Matrix* soft_out) {
    if (rounds < 1) throw std::invalid_argument("prototype_pseudolabels: rounds >= 1");
    if (features.rows() != probs.rows())
        throw std::invalid_argument("prototype_pseudolabels: row count mismatch");
    const std::size_t n = features.rows();
    const std::size_t d = features.cols();
    const std::size_t k = probs.cols();

    std::vector<double> feat_norm(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (double v : features.row(i)) s += v * v;
        feat_norm[i] = std::sqrt(s);
        if (feat_norm[i] < 1e-300)
            throw std::invalid_argument("prototype_pseudolabels: zero-norm feature row " +
                                        std::to_string(i));
    }

    std::vector<double> global_mean(d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) global_mean[j] += features(i, j);
    for (double& v : global_mean) v /= static_cast<double>(n);

    Matrix centroids(k, d);
    Matrix similarity(n, k);
    std::vector<int> labels(n, 0);

    auto assign = [&]() {
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (std::size_t c = 0; c < k; ++c) {
                double dot = 0.0, cn = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    dot += features(i, j) * centroids(c, j);
                    cn += centroids(c, j) * centroids(c, j);
                }
                cn = std::sqrt(cn);
                const double cosine = cn < 1e-300 ? 0.0 : dot / (feat_norm[i] * cn);
                similarity(i, c) = cosine;
                const double dist = 1.0 - cosine;
                if (dist < best) {  // strict: lowest class index wins ties
                    best = dist;
                    best_c = static_cast<int>(c);
                }
            }
            labels[i] = best_c;
        }
    };

    // Round 0: soft-prob weighted centroids.
    for (std::size_t c = 0; c < k; ++c) {
        double wsum = 0.0;
        for (std::size_t i = 0; i < n; ++i) wsum += probs(i, c);
        if (wsum < 1e-12) {
            for (std::size_t j = 0; j < d; ++j) centroids(c, j) = global_mean[j];
            continue;
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                centroids(c, j) += probs(i, c) * features(i, j);
        for (std::size_t j = 0; j < d; ++j) centroids(c, j) /= wsum;
    }
    assign();

    for (int r = 1; r < rounds; ++r) {
        for (std::size_t c = 0; c < k; ++c) {
            std::size_t count = 0;
            std::vector<double> sum(d, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                if (labels[i] != static_cast<int>(c)) continue;
                ++count;
                for (std::size_t j = 0; j < d; ++j) sum[j] += features(i, j);
            }
            if (count == 0) continue;  // empty class keeps its previous centroid
            for (std::size_t j = 0; j < d; ++j)
                centroids(c, j) = sum[j] / static_cast<double>(count);
        }
        assign();
    }

    if (soft_out) {
        // (1 + cos)/2 per row, normalized; monotone in cosine so the argmax
        // matches the hard assignment.
        *soft_out = Matrix(n, k);
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                (*soft_out)(i, c) = 0.5 * (1.0 + similarity(i, c));
                sum += (*soft_out)(i, c);
            }
            if (sum < 1e-300) sum = 1.0;
            for (std::size_t c = 0; c < k; ++c) (*soft_out)(i, c) /= sum;
        }
    }

    PseudolabelSet out;
    out.labels = std::move(labels);
    out.source = LabelSource::Raw;
    out.log_likelihood = log_likelihood_of(probs, out.labels);
    return out;
}

}  // namespace evcal::pseudolabel
