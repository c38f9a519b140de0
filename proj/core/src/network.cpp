#include "evcal/network.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "evcal/numerics.hpp"

namespace evcal::network {

namespace {

Matrix matmul(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double v = a(i, k);
            if (v == 0.0) continue;
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += v * b(k, j);
        }
    return out;
}

void add_bias(Matrix& m, const Matrix& bias) {
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) m(i, j) += bias(0, j);
}

Matrix init_block(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    // He-style scale on the fan-in.
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(rows)));
    Matrix m(rows, cols);
    for (double& v : m.storage()) v = dist(rng);
    return m;
}

}  // namespace

Mlp::Mlp(std::size_t d_in, std::size_t hidden, std::size_t bottleneck,
         std::size_t num_classes, std::uint64_t seed)
    : d_in_(d_in), hidden_(hidden), bottleneck_(bottleneck), classes_(num_classes),
      seed_(seed) {
    std::mt19937_64 rng(seed);
    params_.w1 = init_block(d_in, hidden, rng);
    params_.b1 = Matrix(1, hidden);
    params_.w2 = init_block(hidden, bottleneck, rng);
    params_.b2 = Matrix(1, bottleneck);
    params_.w3 = init_block(bottleneck, num_classes, rng);
    params_.b3 = Matrix(1, num_classes);
}

Mlp::Activations Mlp::forward(const Matrix& x) const {
    if (x.cols() != d_in_)
        throw std::invalid_argument("Mlp::forward: input dim mismatch");
    Activations a;
    a.hidden_pre = matmul(x, params_.w1);
    add_bias(a.hidden_pre, params_.b1);
    Matrix h = a.hidden_pre;
    for (double& v : h.storage()) v = std::max(v, 0.0);
    a.features = matmul(h, params_.w2);
    add_bias(a.features, params_.b2);
    a.logits = matmul(a.features, params_.w3);
    add_bias(a.logits, params_.b3);
    return a;
}

MlpParams Mlp::backward(const Matrix& x, const Activations& acts,
                        const Matrix& grad_logits, bool freeze_head) const {
    const std::size_t n = x.rows();
    MlpParams g;
    g.w1 = Matrix(d_in_, hidden_);
    g.b1 = Matrix(1, hidden_);
    g.w2 = Matrix(hidden_, bottleneck_);
    g.b2 = Matrix(1, bottleneck_);
    g.w3 = Matrix(bottleneck_, classes_);
    g.b3 = Matrix(1, classes_);

    // Head: logits = features * w3 + b3
    if (!freeze_head) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t b = 0; b < bottleneck_; ++b)
                for (std::size_t k = 0; k < classes_; ++k)
                    g.w3(b, k) += acts.features(i, b) * grad_logits(i, k);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < classes_; ++k) g.b3(0, k) += grad_logits(i, k);
    }

    // d features
    Matrix d_feat(n, bottleneck_);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t b = 0; b < bottleneck_; ++b) {
            double s = 0.0;
            for (std::size_t k = 0; k < classes_; ++k)
                s += grad_logits(i, k) * params_.w3(b, k);
            d_feat(i, b) = s;
        }

    // Bottleneck: features = relu(hidden_pre) * w2 + b2
    Matrix h(n, hidden_);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hidden_; ++j)
            h(i, j) = std::max(acts.hidden_pre(i, j), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hidden_; ++j)
            for (std::size_t b = 0; b < bottleneck_; ++b)
                g.w2(j, b) += h(i, j) * d_feat(i, b);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t b = 0; b < bottleneck_; ++b) g.b2(0, b) += d_feat(i, b);

    // d hidden through ReLU
    Matrix d_hidden(n, hidden_);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hidden_; ++j) {
            double s = 0.0;
            for (std::size_t b = 0; b < bottleneck_; ++b)
                s += d_feat(i, b) * params_.w2(j, b);
            d_hidden(i, j) = acts.hidden_pre(i, j) > 0.0 ? s : 0.0;
        }

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t d = 0; d < d_in_; ++d) {
            const double xv = x(i, d);
            if (xv == 0.0) continue;
            for (std::size_t j = 0; j < hidden_; ++j) g.w1(d, j) += xv * d_hidden(i, j);
        }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < hidden_; ++j) g.b1(0, j) += d_hidden(i, j);

    return g;
}

MlpParams zeros_like(const Mlp& model) {
    MlpParams z;
    auto src = model.params().blocks();
    auto dst = z.blocks();
    for (std::size_t i = 0; i < src.size(); ++i)
        *dst[i] = Matrix(src[i]->rows(), src[i]->cols());
    return z;
}

void sgd_step(Mlp& model, const MlpParams& grads, MlpParams& velocity,
              const SgdConfig& cfg) {
    auto theta = model.params().blocks();
    auto g = grads.blocks();
    auto v = velocity.blocks();
    for (std::size_t b = 0; b < theta.size(); ++b) {
        if (!theta[b]->same_shape(*g[b]) || !theta[b]->same_shape(*v[b]))
            throw std::invalid_argument("sgd_step: shape mismatch");
        auto& tv = theta[b]->storage();
        auto& gv = g[b]->storage();
        auto& vv = v[b]->storage();
        for (std::size_t i = 0; i < tv.size(); ++i) {
            vv[i] = cfg.momentum * vv[i] + gv[i];
            tv[i] -= cfg.learning_rate * (vv[i] + cfg.weight_decay * tv[i]);
        }
    }
}

double smoothed_ce(const Matrix& logits, const std::vector<int>& labels,
                   double smoothing, Matrix* grad_logits) {
    const std::size_t n = logits.rows();
    const std::size_t k = logits.cols();
    if (labels.size() != n)
        throw std::invalid_argument("smoothed_ce: label count mismatch");
    const Matrix probs = numerics::softmax(logits);
    const double off = smoothing / static_cast<double>(k);
    double loss = 0.0;
    if (grad_logits) *grad_logits = Matrix(n, k);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw std::invalid_argument("smoothed_ce: label out of range");
        for (std::size_t j = 0; j < k; ++j) {
            const double target = off + (static_cast<std::size_t>(y) == j ? 1.0 - smoothing : 0.0);
            loss -= target * std::log(std::max(probs(i, j), 1e-300));
            if (grad_logits)
                (*grad_logits)(i, j) = (probs(i, j) - target) / static_cast<double>(n);
        }
    }
    return loss / static_cast<double>(n);
}

TrainHistory train_source(Mlp& model, const Matrix& x, const std::vector<int>& labels,
                          double smoothing, const SgdConfig& cfg) {
    if (x.rows() == 0) throw std::invalid_argument("train_source: empty dataset");
    if (smoothing < 0.0 || smoothing >= 1.0)
        throw std::invalid_argument("train_source: smoothing must be in [0, 1)");
    const std::size_t n = x.rows();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.seed);
    MlpParams velocity = zeros_like(model);
    TrainHistory history;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(start + cfg.batch_size, n);
            Matrix bx(end - start, x.cols());
            std::vector<int> by(end - start);
            for (std::size_t r = start; r < end; ++r) {
                for (std::size_t c = 0; c < x.cols(); ++c)
                    bx(r - start, c) = x(order[r], c);
                by[r - start] = labels[order[r]];
            }
            auto acts = model.forward(bx);
            Matrix grad;
            epoch_loss += smoothed_ce(acts.logits, by, smoothing, &grad);
            MlpParams grads = model.backward(bx, acts, grad);
            sgd_step(model, grads, velocity, cfg);
            ++batches;
        }
        history.epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
    }
    return history;
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.storage()}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
    Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
    auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != m.size())
        throw std::runtime_error("checkpoint: matrix size mismatch");
    m.storage() = std::move(data);
    return m;
}

}  // namespace

void Mlp::save(const std::string& path) const {
    nlohmann::json j;
    j["format"] = "evcal-mlp";
    j["version"] = 1;
    j["d_in"] = d_in_;
    j["hidden"] = hidden_;
    j["bottleneck"] = bottleneck_;
    j["classes"] = classes_;
    j["seed"] = seed_;
    const char* names[] = {"w1", "b1", "w2", "b2", "w3", "b3"};
    auto blocks = params_.blocks();
    for (std::size_t i = 0; i < blocks.size(); ++i)
        j["params"][names[i]] = matrix_to_json(*blocks[i]);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << j.dump();
}

Mlp Mlp::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "evcal-mlp" || j.value("version", 0) != 1)
        throw std::runtime_error("unrecognized checkpoint format: " + path);
    Mlp m;
    m.d_in_ = j.at("d_in").get<std::size_t>();
    m.hidden_ = j.at("hidden").get<std::size_t>();
    m.bottleneck_ = j.at("bottleneck").get<std::size_t>();
    m.classes_ = j.at("classes").get<std::size_t>();
    m.seed_ = j.at("seed").get<std::uint64_t>();
    const char* names[] = {"w1", "b1", "w2", "b2", "w3", "b3"};
    auto blocks = m.params_.blocks();
    for (std::size_t i = 0; i < blocks.size(); ++i)
        *blocks[i] = matrix_from_json(j.at("params").at(names[i]));
    return m;
}

}  // namespace evcal::network
