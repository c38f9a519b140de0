// Command-line pipeline: synthetic domain-pair generation, source training,
// ES/EKS adaptation, evaluation, calibration reports and the invariant suite.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "evcal/adaptation.hpp"
#include "evcal/calibration.hpp"
#include "evcal/datagen.hpp"
#include "evcal/losses.hpp"
#include "evcal/network.hpp"
#include "evcal/numerics.hpp"
#include "evcal/pseudolabel.hpp"
#include "evcal/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes: 0 success, 1 validation error, 2 runtime/infeasibility.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix-style stream derivation from the one top-level seed
    std::uint64_t z = seed + stream * 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed,
                         const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw ValidationError("config: unknown key '" + it.key() + "' in " + where);
    }
}

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir = "out";

    evcal::datagen::DomainSpec data;

    // source training
    std::size_t hidden = 32;
    std::size_t bottleneck = 16;
    double smoothing = 0.1;
    evcal::network::SgdConfig source_sgd;

    evcal::adaptation::AdaptConfig adapt;

    std::string prior_kind = "UB";
    double sigma = 0.0;
    std::optional<std::vector<double>> class_priors;  // empirical when absent

    std::size_t report_bins = 15;
};

RunConfig parse_config(const std::string& path) {
    RunConfig cfg;
    cfg.data.shift = {3.0, -3.0, 1.5, 0.0, 0.0, 0.0, 0.0, 0.0};
    cfg.data.rotation_angle = 0.6;
    cfg.source_sgd.epochs = 40;
    cfg.adapt.epochs = 25;

    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ValidationError("config parse error: " + std::string(e.what()));
    }

    reject_unknown_keys(j, {"seed", "output_dir", "data", "source_training",
                            "adaptation", "prior", "report"}, "top level");
    cfg.seed = j.value("seed", cfg.seed);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);

    if (j.contains("data")) {
        const auto& d = j["data"];
        reject_unknown_keys(d, {"num_classes", "n_per_class", "dim", "cov_scale",
                                "shift", "rotation_angle", "label_noise"}, "data");
        cfg.data.num_classes = d.value("num_classes", cfg.data.num_classes);
        cfg.data.n_per_class = d.value("n_per_class", cfg.data.n_per_class);
        cfg.data.dim = d.value("dim", cfg.data.dim);
        cfg.data.cov_scale = d.value("cov_scale", cfg.data.cov_scale);
        if (d.contains("shift")) cfg.data.shift = d["shift"].get<std::vector<double>>();
        cfg.data.rotation_angle = d.value("rotation_angle", cfg.data.rotation_angle);
        cfg.data.label_noise = d.value("label_noise", cfg.data.label_noise);
    }
    if (cfg.data.shift.size() > cfg.data.dim) cfg.data.shift.resize(cfg.data.dim);
    while (cfg.data.shift.size() < cfg.data.dim) cfg.data.shift.push_back(0.0);

    if (j.contains("source_training")) {
        const auto& s = j["source_training"];
        reject_unknown_keys(s, {"learning_rate", "momentum", "weight_decay", "epochs",
                                "batch_size", "smoothing", "hidden", "bottleneck"},
                            "source_training");
        cfg.source_sgd.learning_rate = s.value("learning_rate", cfg.source_sgd.learning_rate);
        cfg.source_sgd.momentum = s.value("momentum", cfg.source_sgd.momentum);
        cfg.source_sgd.weight_decay = s.value("weight_decay", cfg.source_sgd.weight_decay);
        cfg.source_sgd.epochs = s.value("epochs", cfg.source_sgd.epochs);
        cfg.source_sgd.batch_size = s.value("batch_size", cfg.source_sgd.batch_size);
        cfg.smoothing = s.value("smoothing", cfg.smoothing);
        cfg.hidden = s.value("hidden", cfg.hidden);
        cfg.bottleneck = s.value("bottleneck", cfg.bottleneck);
    }

    if (j.contains("adaptation")) {
        const auto& a = j["adaptation"];
        reject_unknown_keys(a, {"w1", "w2", "beta", "gamma", "lambda", "epochs",
                                "batch_size", "learning_rate", "momentum",
                                "relabel_interval", "prototype_rounds"},
                            "adaptation");
        cfg.adapt.weights.w1 = a.value("w1", cfg.adapt.weights.w1);
        cfg.adapt.weights.w2 = a.value("w2", cfg.adapt.weights.w2);
        cfg.adapt.weights.beta = a.value("beta", cfg.adapt.weights.beta);
        cfg.adapt.weights.gamma = a.value("gamma", cfg.adapt.weights.gamma);
        cfg.adapt.lambda = a.value("lambda", cfg.adapt.lambda);
        cfg.adapt.epochs = a.value("epochs", cfg.adapt.epochs);
        cfg.adapt.batch_size = a.value("batch_size", cfg.adapt.batch_size);
        cfg.adapt.learning_rate = a.value("learning_rate", cfg.adapt.learning_rate);
        cfg.adapt.momentum = a.value("momentum", cfg.adapt.momentum);
        cfg.adapt.relabel_interval = a.value("relabel_interval", cfg.adapt.relabel_interval);
        cfg.adapt.prototype_rounds = a.value("prototype_rounds", cfg.adapt.prototype_rounds);
    }

    if (j.contains("prior")) {
        const auto& p = j["prior"];
        reject_unknown_keys(p, {"kind", "sigma", "class_priors"}, "prior");
        cfg.prior_kind = p.value("kind", cfg.prior_kind);
        if (cfg.prior_kind != "UB" && cfg.prior_kind != "BR")
            throw ValidationError("config: prior.kind must be UB or BR");
        cfg.sigma = p.value("sigma", cfg.sigma);
        if (p.contains("class_priors"))
            cfg.class_priors = p["class_priors"].get<std::vector<double>>();
    }

    if (j.contains("report")) {
        reject_unknown_keys(j["report"], {"m"}, "report");
        cfg.report_bins = j["report"].value("m", cfg.report_bins);
    }

    try {
        cfg.data.validate();
    } catch (const std::invalid_argument& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    if (cfg.smoothing < 0.0 || cfg.smoothing >= 1.0)
        throw ValidationError("config: smoothing must be in [0, 1)");
    return cfg;
}

evcal::pseudolabel::PriorKnowledge build_prior(const RunConfig& cfg,
                                               const std::vector<int>& source_labels) {
    using evcal::pseudolabel::PriorKind;
    using evcal::pseudolabel::PriorKnowledge;
    const PriorKind kind = cfg.prior_kind == "UB" ? PriorKind::UnaryBound
                                                  : PriorKind::BinaryRelationship;
    if (cfg.class_priors) {
        return kind == PriorKind::UnaryBound
                   ? PriorKnowledge::unary(*cfg.class_priors, cfg.sigma)
                   : PriorKnowledge::binary(*cfg.class_priors);
    }
    return PriorKnowledge::from_labels(source_labels, cfg.data.num_classes, kind,
                                       cfg.sigma);
}

std::string model_path(const RunConfig& cfg, const std::string& name) {
    return cfg.output_dir + "/" + name;
}

evcal::datagen::LoadedCsv load_required(const std::string& path) {
    if (!fs::exists(path))
        throw std::runtime_error("missing artifact: " + path +
                                 " (run the earlier pipeline stage first)");
    return evcal::datagen::load_csv(path);
}

int cmd_gen(const RunConfig& cfg) {
    fs::create_directories(cfg.output_dir);
    evcal::datagen::DomainSpec spec = cfg.data;
    spec.seed = sub_seed(cfg.seed, 1);
    auto pair = evcal::datagen::generate_pair(spec);
    evcal::datagen::save_csv(pair.source, model_path(cfg, "source.csv"), true);
    evcal::datagen::save_csv({pair.target.x, {}}, model_path(cfg, "target.csv"), false);
    evcal::datagen::save_csv(pair.target, model_path(cfg, "target_eval.csv"), true);
    evcal::datagen::write_manifest(spec, cfg.output_dir,
                                   {"source.csv", "target.csv", "target_eval.csv"});
    std::cout << "generated " << pair.source.x.rows() << " source and "
              << pair.target.x.rows() << " target samples ("
              << spec.num_classes << " classes, dim " << spec.dim << ") in "
              << cfg.output_dir << "\n";
    return 0;
}

int cmd_train_source(const RunConfig& cfg) {
    auto source = load_required(model_path(cfg, "source.csv"));
    if (!source.labels) throw std::runtime_error("source.csv has no label column");
    evcal::network::Mlp model(source.x.cols(), cfg.hidden, cfg.bottleneck,
                              cfg.data.num_classes, sub_seed(cfg.seed, 2));
    evcal::network::SgdConfig sgd = cfg.source_sgd;
    sgd.seed = sub_seed(cfg.seed, 3);
    auto history = evcal::network::train_source(model, source.x, *source.labels,
                                                cfg.smoothing, sgd);
    model.save(model_path(cfg, "source_model.json"));
    std::ofstream hist(model_path(cfg, "source_history.jsonl"));
    for (std::size_t e = 0; e < history.epoch_loss.size(); ++e)
        hist << json{{"epoch", e}, {"loss", history.epoch_loss[e]}}.dump() << "\n";
    const auto eval = evcal::adaptation::evaluate(model, source.x, *source.labels);
    std::cout << "source model trained: final loss "
              << history.epoch_loss.back() << ", source accuracy " << eval.accuracy
              << "\n";
    return 0;
}

int cmd_adapt(const RunConfig& cfg, const std::string& mode) {
    auto target = load_required(model_path(cfg, "target.csv"));
    auto model = evcal::network::Mlp::load(model_path(cfg, "source_model.json"));

    evcal::adaptation::AdaptConfig acfg = cfg.adapt;
    acfg.seed = sub_seed(cfg.seed, 4);
    if (mode == "eks") {
        auto source = load_required(model_path(cfg, "source.csv"));
        if (!source.labels) throw std::runtime_error("source.csv has no label column");
        acfg.prior = build_prior(cfg, *source.labels);
    }

    auto result = evcal::adaptation::adapt(model, target.x, acfg);
    result.model.save(model_path(cfg, "adapted_" + mode + ".json"));
    evcal::adaptation::write_history_jsonl(result.history,
                                           model_path(cfg, "history_" + mode + ".jsonl"));
    std::cout << "adapted (" << mode << "): final total loss "
              << result.history.back().total << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& mode) {
    auto eval_set = load_required(model_path(cfg, "target_eval.csv"));
    if (!eval_set.labels) throw std::runtime_error("target_eval.csv has no label column");
    auto source_model = evcal::network::Mlp::load(model_path(cfg, "source_model.json"));
    auto adapted = evcal::network::Mlp::load(model_path(cfg, "adapted_" + mode + ".json"));

    const auto src = evcal::adaptation::evaluate(source_model, eval_set.x, *eval_set.labels);
    const auto adp = evcal::adaptation::evaluate(adapted, eval_set.x, *eval_set.labels);
    std::cout << "source-only accuracy: " << src.accuracy << "\n"
              << "adapted (" << mode << ") accuracy: " << adp.accuracy << "\n"
              << "difference: " << adp.accuracy - src.accuracy << "\n";
    for (std::size_t c = 0; c < adp.per_class.size(); ++c)
        std::cout << "  class " << c << ": source " << src.per_class[c]
                  << ", adapted " << adp.per_class[c] << "\n";
    return 0;
}

int cmd_report(const RunConfig& cfg, const std::string& mode) {
    auto eval_set = load_required(model_path(cfg, "target_eval.csv"));
    if (!eval_set.labels) throw std::runtime_error("target_eval.csv has no label column");
    const double gamma = cfg.adapt.weights.gamma;

    auto report_for = [&](const std::string& checkpoint, const std::string& tag) {
        auto model = evcal::network::Mlp::load(model_path(cfg, checkpoint));
        auto acts = evcal::adaptation::forward_all(model, eval_set.x);
        const auto probs = evcal::numerics::calibrated_softmax(acts.logits, gamma);
        auto report = evcal::calibration::ece(probs, *eval_set.labels, cfg.report_bins);
        json j = json::parse(report.to_json());
        j["model"] = tag;
        j["gamma"] = gamma;
        if (tag == "eks") {
            j["kappa"] = cfg.prior_kind;
            j["sigma"] = cfg.sigma;
        }
        std::ofstream out(model_path(cfg, "report_" + tag + ".json"));
        out << j.dump(2) << "\n";
        evcal::calibration::write_reliability_csv(
            report, model_path(cfg, "reliability_" + tag + ".csv"));
        std::cout << tag << ": ECE " << report.ece << ", NLL " << report.nll << "\n";
        return report;
    };

    report_for("source_model.json", "source");
    report_for("adapted_" + mode + ".json", mode);
    return 0;
}

int cmd_verify() {
    const auto results = evcal::verify::run_all_checks();
    bool all_ok = true;
    for (const auto& r : results) {
        std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name;
        if (!r.detail.empty()) std::cout << " (" << r.detail << ")";
        std::cout << "\n";
        all_ok = all_ok && r.passed;
    }
    return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Evidential calibration for source-free domain adaptation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string mode = "es";
    std::optional<double> sigma_override;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> out_override;
    app.add_option("--config", config_path, "JSON run configuration");
    app.add_option("--mode", mode, "es|eks")->check(CLI::IsMember({"es", "eks"}));
    app.add_option("--sigma", sigma_override, "unary-bound slack override");
    app.add_option("--seed", seed_override, "top-level seed override");
    app.add_option("--out", out_override, "output directory override");

    auto* gen = app.add_subcommand("gen", "generate the synthetic domain pair");
    auto* train = app.add_subcommand("train-source", "train the source model");
    auto* adapt = app.add_subcommand("adapt", "adapt to the target domain (ES/EKS)");
    auto* eval = app.add_subcommand("eval", "evaluate source vs adapted model");
    auto* report = app.add_subcommand("report", "write calibration reports");
    auto* verify = app.add_subcommand("verify", "run the invariant suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(verify)) return cmd_verify();

        RunConfig cfg = parse_config(config_path);
        if (sigma_override) cfg.sigma = *sigma_override;
        if (seed_override) cfg.seed = *seed_override;
        if (out_override) cfg.output_dir = *out_override;

        if (app.got_subcommand(gen)) return cmd_gen(cfg);
        if (app.got_subcommand(train)) return cmd_train_source(cfg);
        if (app.got_subcommand(adapt)) return cmd_adapt(cfg, mode);
        if (app.got_subcommand(eval)) return cmd_eval(cfg, mode);
        if (app.got_subcommand(report)) return cmd_report(cfg, mode);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
