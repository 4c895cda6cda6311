#pragma once

#include <cstdint>
#include <vector>

#include "nadjust/evaluator.hpp"
#include "nadjust/tensor.hpp"

namespace nadjust {

/// Procedural classification task standing in for a natural-image dataset
/// at desk scale. Classes render distinct pattern families (oriented bars,
/// blob pairs, rings) with per-sample jitter plus Gaussian noise.
struct SyntheticDatasetSpec {
    int num_classes = 4;
    int samples_per_class = 64;  // training split; val/test get 1/4 each (rounded up)
    int image_size = 16;
    double noise_level = 0.15;
    uint64_t seed = 1;
};

struct Dataset {
    Tensor4 images;           // (N, channels, image_size, image_size)
    std::vector<int> labels;  // length N
};

/// Pure in (spec, channels, split): same arguments, same bytes. Splits are
/// disjoint by construction (distinct per-sample index ranges).
Dataset generate_dataset(const SyntheticDatasetSpec& spec, int channels, Split split);

int split_samples_per_class(const SyntheticDatasetSpec& spec, Split split);

void write_dataset(const std::string& images_path, const std::string& labels_path,
                   const Dataset& ds);
Dataset read_dataset(const std::string& images_path, const std::string& labels_path);

}  // namespace nadjust
