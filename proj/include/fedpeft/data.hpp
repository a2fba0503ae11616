// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedpeft/errors.hpp"
#include "fedpeft/model.hpp"
#include "fedpeft/rng.hpp"

namespace fedpeft {

/// Immutable labeled dataset; features are stored contiguously, one
/// feature_shape for all samples.
struct Dataset {
    std::vector<float> features;      // size() * feature_size() values
    std::vector<std::size_t> feature_shape;
    std::vector<int> labels;
    int class_count = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t feature_size() const { return shape_numel(feature_shape); }
    const float* sample(std::size_t i) const { return features.data() + i * feature_size(); }

    void validate() const {
        for (std::size_t i = 0; i < labels.size(); ++i)
            if (labels[i] < 0 || labels[i] >= class_count)
                throw InputError("dataset: label " + std::to_string(labels[i]) + " at sample " +
                                 std::to_string(i) + " out of [0," + std::to_string(class_count) + ")");
    }
};

/// Per-sample owner map produced by the Dirichlet partitioner.
struct PartitionAssignment {
    std::vector<int> owner;   // owner[i] in [0, num_clients)
    int num_clients = 0;
    double alpha = 0;
    std::uint64_t seed = 0;

    std::vector<std::vector<std::size_t>> shards() const {
        std::vector<std::vector<std::size_t>> s(num_clients);
        for (std::size_t i = 0; i < owner.size(); ++i) s[owner[i]].push_back(i);
        return s;
    }
};

/// Class-conditional synthetic task. task_seed fixes the task itself
/// (prototypes, textures); the generation seed fixes the sample draws, so the
/// same task can be sampled for pretraining and for a shifted fine-tuning
/// stage. shift = 0 reproduces the pretraining distribution exactly.
struct SyntheticTaskSpec {
    Family family = Family::vit;
    int class_count = 8;
    int samples_per_class = 64;
    int feature_dim = 16;     // mlp family
    int image_size = 32;      // vit family (3 channels)
    double shift = 0.0;       // in [0, 1]
    double noise = 0.1;
    double separation = 1.0;  // mlp prototype separation
    std::uint64_t task_seed = 1;

    void validate() const {
        if (class_count < 1 || samples_per_class < 1)
            throw InputError("synthetic spec: class_count and samples_per_class must be positive");
        if (family == Family::mlp && feature_dim < 1)
            throw InputError("synthetic spec: feature_dim must be positive");
        if (family == Family::vit && image_size < 1)
            throw InputError("synthetic spec: image_size must be positive");
        if (shift < 0 || shift > 1) throw InputError("synthetic spec: shift must be in [0,1]");
    }
};

/// For each class independently, draws proportions ~ Dirichlet(alpha * 1_N)
/// and deals that class's samples to clients with largest-remainder rounding.
PartitionAssignment dirichlet_partition(const std::vector<int>& labels, int num_clients,
                                        double alpha, std::uint64_t seed);

Dataset make_synthetic(const SyntheticTaskSpec& spec, std::uint64_t seed);

/// Standard IDX pair (0x00000803 image magic / 0x00000801 label magic,
/// big-endian dims). Pixel bytes are scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// CSV with header row `label,f0,f1,...`. When expected_classes > 0, labels
/// are validated against it; otherwise class_count = max label + 1.
Dataset load_csv(const std::string& path, int expected_classes = -1);

/// Horizontal flip of a [C, H, W] sample, in place.
void hflip(float* features, const std::vector<std::size_t>& shape);

/// Seeded stochastic flip with the given probability.
void augment_hflip(float* features, const std::vector<std::size_t>& shape, double probability,
                   Rng& rng);

/// Mean over clients of the total-variation distance between the client's
/// label distribution and the global label distribution.
double partition_heterogeneity(const Dataset& data, const PartitionAssignment& part);

}  // namespace fedpeft
