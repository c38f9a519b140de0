#include "evcal/datagen.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace evcal::datagen {

void DomainSpec::validate() const {
    if (num_classes < 2) throw std::invalid_argument("spec: need at least 2 classes");
    if (n_per_class < 1) throw std::invalid_argument("spec: n_per_class must be >= 1");
    if (dim < 2) throw std::invalid_argument("spec: dim must be >= 2");
    if (!(cov_scale > 0.0)) throw std::invalid_argument("spec: cov_scale must be > 0");
    if (label_noise < 0.0 || label_noise >= 0.5)
        throw std::invalid_argument("spec: label_noise must be in [0, 0.5)");
    if (!shift.empty() && shift.size() != dim)
        throw std::invalid_argument("spec: shift dimension mismatch");
    if (class_means.size() != 0 &&
        (class_means.rows() != num_classes || class_means.cols() != dim))
        throw std::invalid_argument("spec: class_means shape mismatch");
}

namespace {

Matrix default_means(const DomainSpec& spec, std::mt19937_64& rng) {
    // Classes on a circle in the first two dims, jitter elsewhere; spacing
    // scales with cov_scale so classes stay separable.
    Matrix means(spec.num_classes, spec.dim);
    const double radius = 4.0 * spec.cov_scale;
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        const double angle =
            2.0 * M_PI * static_cast<double>(c) / static_cast<double>(spec.num_classes);
        means(c, 0) = radius * std::cos(angle);
        means(c, 1) = radius * std::sin(angle);
        for (std::size_t j = 2; j < spec.dim; ++j)
            means(c, j) = radius * jitter(rng);
    }
    return means;
}

Dataset sample_domain(const DomainSpec& spec, const Matrix& means,
                      std::mt19937_64& rng) {
    const std::size_t n = spec.num_classes * spec.n_per_class;
    Dataset data;
    data.x = Matrix(n, spec.dim);
    data.labels.resize(n);
    std::normal_distribution<double> noise(0.0, spec.cov_scale);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::uniform_int_distribution<int> random_class(0, static_cast<int>(spec.num_classes) - 1);
    std::size_t row = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c)
        for (std::size_t s = 0; s < spec.n_per_class; ++s, ++row) {
            for (std::size_t j = 0; j < spec.dim; ++j)
                data.x(row, j) = means(c, j) + noise(rng);
            int label = static_cast<int>(c);
            if (spec.label_noise > 0.0 && unif(rng) < spec.label_noise)
                label = random_class(rng);
            data.labels[row] = label;
        }
    return data;
}

}  // namespace

DomainPair generate_pair(const DomainSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    Matrix means = spec.class_means.size() ? spec.class_means : default_means(spec, rng);

    DomainPair pair;
    pair.source = sample_domain(spec, means, rng);

    Matrix target_means = means;
    const double c = std::cos(spec.rotation_angle);
    const double s = std::sin(spec.rotation_angle);
    for (std::size_t k = 0; k < target_means.rows(); ++k) {
        const double x0 = target_means(k, 0);
        const double x1 = target_means(k, 1);
        target_means(k, 0) = c * x0 - s * x1;
        target_means(k, 1) = s * x0 + c * x1;
        if (!spec.shift.empty())
            for (std::size_t j = 0; j < spec.dim; ++j) target_means(k, j) += spec.shift[j];
    }
    pair.target = sample_domain(spec, target_means, rng);
    return pair;
}

void save_csv(const Dataset& data, const std::string& path, bool with_labels) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write csv: " + path);
    out.precision(17);
    for (std::size_t j = 0; j < data.x.cols(); ++j) {
        if (j) out << ",";
        out << "f" << j;
    }
    if (with_labels) out << ",label";
    out << "\n";
    for (std::size_t i = 0; i < data.x.rows(); ++i) {
        for (std::size_t j = 0; j < data.x.cols(); ++j) {
            if (j) out << ",";
            out << data.x(i, j);
        }
        if (with_labels) out << "," << data.labels[i];
        out << "\n";
    }
}

LoadedCsv load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open csv: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");

    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    bool has_labels = !header.empty() && header.back() == "label";
    const std::size_t dim = header.size() - (has_labels ? 1 : 0);
    for (std::size_t j = 0; j < dim; ++j)
        if (header[j] != "f" + std::to_string(j))
            throw std::runtime_error(path + ": line 1: bad header column '" + header[j] + "'");

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t rows = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                if (used != cell.size()) throw std::invalid_argument(cell);
                if (col < dim) values.push_back(v);
                else labels.push_back(static_cast<int>(v));
            } catch (const std::exception&) {
                throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                                         ": non-numeric cell '" + cell + "'");
            }
            ++col;
        }
        if (col != header.size())
            throw std::runtime_error(path + ": line " + std::to_string(lineno) +
                                     ": expected " + std::to_string(header.size()) +
                                     " cells, got " + std::to_string(col));
        ++rows;
    }

    LoadedCsv out;
    out.x = Matrix(rows, dim);
    out.x.storage() = std::move(values);
    if (has_labels) out.labels = std::move(labels);
    return out;
}

std::uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for checksum: " + path);
    // FNV-1a
    std::uint64_t h = 1469598103934665603ULL;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

void write_manifest(const DomainSpec& spec, const std::string& dir,
                    const std::vector<std::string>& files) {
    nlohmann::json j;
    j["spec"] = {{"num_classes", spec.num_classes},
                 {"n_per_class", spec.n_per_class},
                 {"dim", spec.dim},
                 {"cov_scale", spec.cov_scale},
                 {"shift", spec.shift},
                 {"rotation_angle", spec.rotation_angle},
                 {"label_noise", spec.label_noise},
                 {"seed", spec.seed}};
    for (const auto& f : files)
        j["files"][f] = {{"checksum", file_checksum(dir + "/" + f)}};
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw std::runtime_error("cannot write manifest in " + dir);
    out << j.dump(2) << "\n";
}

}  // namespace evcal::datagen
