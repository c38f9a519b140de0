#include "evcal/adaptation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "evcal/numerics.hpp"

namespace evcal::adaptation {

std::size_t worker_count() {
    if (const char* env = std::getenv("EVCAL_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

network::Mlp::Activations forward_all(const network::Mlp& model, const Matrix& x) {
    const std::size_t n = x.rows();
    const std::size_t workers = std::min(worker_count(), std::max<std::size_t>(n / 64, 1));
    if (workers <= 1) return model.forward(x);

    network::Mlp::Activations acts;
    acts.hidden_pre = Matrix(n, model.hidden_dim());
    acts.features = Matrix(n, model.bottleneck_dim());
    acts.logits = Matrix(n, model.num_classes());

    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(begin + chunk, n);
        if (begin >= end) break;
        pool.emplace_back([&, begin, end] {
            Matrix slice(end - begin, x.cols());
            for (std::size_t i = begin; i < end; ++i)
                for (std::size_t j = 0; j < x.cols(); ++j)
                    slice(i - begin, j) = x(i, j);
            auto part = model.forward(slice);
            for (std::size_t i = begin; i < end; ++i) {
                for (std::size_t j = 0; j < model.hidden_dim(); ++j)
                    acts.hidden_pre(i, j) = part.hidden_pre(i - begin, j);
                for (std::size_t j = 0; j < model.bottleneck_dim(); ++j)
                    acts.features(i, j) = part.features(i - begin, j);
                for (std::size_t j = 0; j < model.num_classes(); ++j)
                    acts.logits(i, j) = part.logits(i - begin, j);
            }
        });
    }
    for (auto& t : pool) t.join();
    return acts;
}

namespace {

pseudolabel::PseudolabelSet refresh_pseudolabels(const network::Mlp& model,
                                                 const Matrix& target_x,
                                                 const AdaptConfig& cfg) {
    auto acts = forward_all(model, target_x);
    const Matrix probs =
        numerics::calibrated_softmax(acts.logits, cfg.weights.gamma);
    Matrix soft;
    auto raw = pseudolabel::prototype_pseudolabels(acts.features, probs,
                                                   cfg.prototype_rounds, &soft);
    if (!cfg.prior) return raw;
    // Rectification refines the prototype assignment: the flow costs come
    // from the prototype similarities, so a vacuous prior reproduces the raw
    // labels exactly and ES == EKS-with-vacuous-prior.
    return pseudolabel::rectify(soft, *cfg.prior);
}

}  // namespace

AdaptResult adapt(const network::Mlp& source_model, const Matrix& target_x,
                  const AdaptConfig& cfg, const std::vector<int>* monitor_labels) {
    if (target_x.rows() == 0) throw std::invalid_argument("adapt: empty target set");
    if (cfg.relabel_interval < 1)
        throw std::invalid_argument("adapt: relabel_interval must be >= 1");

    AdaptResult result;
    result.model = source_model;
    network::Mlp& model = result.model;
    const std::size_t n = target_x.rows();
    const std::size_t k = model.num_classes();

    network::SgdConfig sgd;
    sgd.learning_rate = cfg.learning_rate;
    sgd.momentum = cfg.momentum;
    network::MlpParams velocity = network::zeros_like(model);

    std::vector<int> labels;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.seed);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (epoch % cfg.relabel_interval == 0)
            labels = refresh_pseudolabels(model, target_x, cfg).labels;

        std::shuffle(order.begin(), order.end(), rng);
        EpochStats stats;
        stats.epoch = epoch;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, n);
            Matrix bx(end - start, target_x.cols());
            std::vector<int> by(end - start);
            for (std::size_t r = start; r < end; ++r) {
                for (std::size_t c = 0; c < target_x.cols(); ++c)
                    bx(r - start, c) = target_x(order[r], c);
                by[r - start] = labels[order[r]];
            }
            auto acts = model.forward(bx);
            const Matrix y = losses::one_hot(by, k);

            const auto batch = losses::evidence_from_logits(acts.logits, cfg.lambda);
            auto nll = losses::nll_loss(batch, y);
            auto kl = losses::kl_loss(batch, y);
            auto ent = losses::entropy_loss(acts.logits, cfg.weights.gamma);
            auto div = losses::diversity_loss(acts.logits, cfg.weights.gamma);

            Matrix grad(acts.logits.rows(), acts.logits.cols());
            for (std::size_t i = 0; i < grad.size(); ++i)
                grad.storage()[i] =
                    cfg.weights.w1 * (nll.grad_logits.storage()[i] +
                                      cfg.weights.beta * kl.grad_logits.storage()[i]) +
                    cfg.weights.w2 * (ent.grad_logits.storage()[i] +
                                      div.grad_logits.storage()[i]);

            stats.nll += nll.value;
            stats.kl += kl.value;
            stats.entropy += ent.value;
            stats.diversity += div.value;
            stats.total += cfg.weights.w1 * (nll.value + cfg.weights.beta * kl.value) +
                           cfg.weights.w2 * (ent.value + div.value);
            ++batches;

            // head stays frozen through the whole run
            network::MlpParams grads = model.backward(bx, acts, grad, /*freeze_head=*/true);
            network::sgd_step(model, grads, velocity, sgd);
        }
        const double inv = 1.0 / static_cast<double>(batches);
        stats.nll *= inv;
        stats.kl *= inv;
        stats.entropy *= inv;
        stats.diversity *= inv;
        stats.total *= inv;
        if (monitor_labels)
            stats.accuracy = evaluate(model, target_x, *monitor_labels).accuracy;
        result.history.push_back(stats);
    }
    return result;
}

EvalResult evaluate(const network::Mlp& model, const Matrix& x,
                    const std::vector<int>& labels) {
    if (labels.size() != x.rows())
        throw std::invalid_argument("evaluate: label count mismatch");
    auto acts = forward_all(model, x);
    const std::size_t k = model.num_classes();
    std::vector<std::size_t> per_class_total(k, 0), per_class_correct(k, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw std::invalid_argument("evaluate: label out of range");
        const std::size_t pred = numerics::argmax_row(acts.logits, i);
        ++per_class_total[static_cast<std::size_t>(y)];
        if (pred == static_cast<std::size_t>(y)) {
            ++correct;
            ++per_class_correct[static_cast<std::size_t>(y)];
        }
    }
    EvalResult out;
    out.accuracy = static_cast<double>(correct) / static_cast<double>(x.rows());
    out.per_class.resize(k, 0.0);
    for (std::size_t c = 0; c < k; ++c)
        if (per_class_total[c])
            out.per_class[c] = static_cast<double>(per_class_correct[c]) /
                               static_cast<double>(per_class_total[c]);
    return out;
}

void write_history_jsonl(const std::vector<EpochStats>& history,
                         const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write history: " + path);
    for (const auto& s : history) {
        nlohmann::json j = {{"epoch", s.epoch},       {"total", s.total},
                            {"nll", s.nll},           {"kl", s.kl},
                            {"entropy", s.entropy},   {"diversity", s.diversity}};
        if (s.accuracy >= 0.0) j["accuracy"] = s.accuracy;
        out << j.dump() << "\n";
    }
}

}  // namespace evcal::adaptation
