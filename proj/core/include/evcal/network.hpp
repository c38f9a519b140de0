#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "evcal/matrix.hpp"

namespace evcal::network {

struct SgdConfig {
    double learning_rate = 0.05;
    double momentum = 0.9;
    double weight_decay = 0.0;
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
};

/// Parameter blocks of the d_in -> hidden (ReLU) -> bottleneck -> K network.
/// Also doubles as the gradient / momentum carrier.
struct MlpParams {
    Matrix w1, b1;  // d_in x h, 1 x h
    Matrix w2, b2;  // h x b,    1 x b
    Matrix w3, b3;  // b x K,    1 x K  (classifier head)

    std::vector<Matrix*> blocks() { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
    std::vector<const Matrix*> blocks() const { return {&w1, &b1, &w2, &b2, &w3, &b3}; }
};

class Mlp {
public:
    Mlp() = default;
    Mlp(std::size_t d_in, std::size_t hidden, std::size_t bottleneck,
        std::size_t num_classes, std::uint64_t seed);

    struct Activations {
        Matrix hidden_pre;   // N x h, before ReLU
        Matrix features;     // N x b, bottleneck output
        Matrix logits;       // N x K
    };

    Activations forward(const Matrix& x) const;

    /// Gradients of all parameter blocks given dL/dlogits. When
    /// freeze_head, the head gradients are zeroed.
    MlpParams backward(const Matrix& x, const Activations& acts,
                       const Matrix& grad_logits, bool freeze_head = false) const;

    std::size_t input_dim() const { return d_in_; }
    std::size_t hidden_dim() const { return hidden_; }
    std::size_t bottleneck_dim() const { return bottleneck_; }
    std::size_t num_classes() const { return classes_; }
    std::uint64_t seed() const { return seed_; }

    MlpParams& params() { return params_; }
    const MlpParams& params() const { return params_; }

    void save(const std::string& path) const;
    static Mlp load(const std::string& path);

private:
    std::size_t d_in_ = 0, hidden_ = 0, bottleneck_ = 0, classes_ = 0;
    std::uint64_t seed_ = 0;
    MlpParams params_;
};

/// v <- m*v + g; theta <- theta - lr*(v + wd*theta). State shapes must match.
void sgd_step(Mlp& model, const MlpParams& grads, MlpParams& velocity,
              const SgdConfig& cfg);

MlpParams zeros_like(const Mlp& model);

struct TrainHistory {
    std::vector<double> epoch_loss;
};

/// Label-smoothing cross entropy source training: targets are
/// (1-s)*onehot + s/K, minimized by minibatch SGD.
TrainHistory train_source(Mlp& model, const Matrix& x, const std::vector<int>& labels,
                          double smoothing, const SgdConfig& cfg);

/// Smoothed-CE value and logit gradient on one batch; exposed for tests.
double smoothed_ce(const Matrix& logits, const std::vector<int>& labels,
                   double smoothing, Matrix* grad_logits = nullptr);

}  // namespace evcal::network
