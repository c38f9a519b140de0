#pragma once

#include <optional>
#include <string>
#include <vector>

#include "evcal/losses.hpp"
#include "evcal/matrix.hpp"
#include "evcal/network.hpp"
#include "evcal/pseudolabel.hpp"

namespace evcal::adaptation {

struct AdaptConfig {
    losses::LossWeights weights;     // w1, w2, beta, gamma
    double lambda = 1.0;             // evidence offset
    std::optional<pseudolabel::PriorKnowledge> prior;  // EKS when set, ES otherwise
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    double learning_rate = 0.02;
    double momentum = 0.9;
    std::size_t relabel_interval = 1;  // epochs between pseudolabel refreshes
    int prototype_rounds = 2;
    std::uint64_t seed = 0;
};

struct EpochStats {
    std::size_t epoch = 0;
    double total = 0.0;
    double nll = 0.0;
    double kl = 0.0;
    double entropy = 0.0;
    double diversity = 0.0;
    double accuracy = -1.0;  // only when monitor labels were supplied
};

struct AdaptResult {
    network::Mlp model;
    std::vector<EpochStats> history;
};

/// Self-training loop: prototype pseudolabels over the full target set
/// (rectified when a prior is present), then evidential + calibrated IM
/// minibatch SGD with the classifier head frozen.
AdaptResult adapt(const network::Mlp& source_model, const Matrix& target_x,
                  const AdaptConfig& cfg,
                  const std::vector<int>* monitor_labels = nullptr);

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> per_class;
};

/// Accuracy of argmax-evidence predictions (identical to argmax logits).
EvalResult evaluate(const network::Mlp& model, const Matrix& x,
                    const std::vector<int>& labels);

void write_history_jsonl(const std::vector<EpochStats>& history,
                         const std::string& path);

/// Worker cap from EVCAL_THREADS (>= 1); hardware concurrency otherwise.
std::size_t worker_count();

/// Forward pass over the full set, chunked across workers with fixed-order
/// row placement so results are identical for any worker count.
network::Mlp::Activations forward_all(const network::Mlp& model, const Matrix& x);

}  // namespace evcal::adaptation
