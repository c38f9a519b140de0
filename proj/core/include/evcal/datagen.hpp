#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evcal/matrix.hpp"

namespace evcal::datagen {

/// Synthetic two-domain stand-in: isotropic Gaussian classes; the target
/// domain applies a mean shift plus a rotation in the first two dims.
struct DomainSpec {
    std::size_t num_classes = 3;
    std::size_t n_per_class = 60;
    std::size_t dim = 8;
    Matrix class_means;               // K x dim; generated from seed if empty
    double cov_scale = 1.0;
    std::vector<double> shift;        // dim-vector applied to target means
    double rotation_angle = 0.0;      // radians, first two dims
    double label_noise = 0.0;         // in [0, 0.5)
    std::uint64_t seed = 0;

    void validate() const;
};

struct Dataset {
    Matrix x;
    std::vector<int> labels;
};

struct DomainPair {
    Dataset source;
    Dataset target;  // labels held out for evaluation only
};

/// Stratified exact class counts; deterministic per seed.
DomainPair generate_pair(const DomainSpec& spec);

void save_csv(const Dataset& data, const std::string& path, bool with_labels);

struct LoadedCsv {
    Matrix x;
    std::optional<std::vector<int>> labels;
};

/// Header `f0,...,f{d-1}[,label]`; parse errors carry the line number.
LoadedCsv load_csv(const std::string& path);

/// Spec echo plus file checksums, written beside generated CSVs.
void write_manifest(const DomainSpec& spec, const std::string& dir,
                    const std::vector<std::string>& files);

std::uint64_t file_checksum(const std::string& path);

}  // namespace evcal::datagen
