#include "nadjust/dataset.hpp"

#include <cmath>

#include "nadjust/errors.hpp"
#include "nadjust/rng.hpp"

namespace nadjust {

namespace {

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

constexpr double kPi = 3.14159265358979323846;

// Soft-edged pattern value at (y, x) for one class. Families cycle with the
// class index; the free parameter (angle, separation, radius) advances every
// third class so any class count stays separable.
double pattern_value(int family, int variant, double y, double x, double size, double angle_jit,
                     double geom_jit) {
    const double cx = size / 2.0, cy = size / 2.0;
    const double px = x - cx, py = y - cy;
    switch (family) {
        case 0: {  // oriented bar
            double angle = (15.0 + 50.0 * variant) * kPi / 180.0 + angle_jit;
            double along = px * std::cos(angle) + py * std::sin(angle);
            double perp = -px * std::sin(angle) + py * std::cos(angle);
            if (std::abs(along) > 0.42 * size) return 0.0;
            double sigma = 1.2;
            return std::exp(-perp * perp / (2.0 * sigma * sigma));
        }
        case 1: {  // mirrored blob pair
            double phi = (30.0 + 45.0 * variant) * kPi / 180.0 + angle_jit;
            double off = size * 0.22 + geom_jit;
            double bx = off * std::cos(phi), by = off * std::sin(phi);
            double sigma = size * 0.11;
            double d1 = (px - bx) * (px - bx) + (py - by) * (py - by);
            double d2 = (px + bx) * (px + bx) + (py + by) * (py + by);
            return std::exp(-d1 / (2.0 * sigma * sigma)) + std::exp(-d2 / (2.0 * sigma * sigma));
        }
        default: {  // ring
            double r = size * 0.22 + 1.8 * variant + geom_jit;
            double d = std::sqrt(px * px + py * py) - r;
            double sigma = 1.3;
            return std::exp(-d * d / (2.0 * sigma * sigma));
        }
    }
}

}  // namespace

int split_samples_per_class(const SyntheticDatasetSpec& spec, Split split) {
    if (split == Split::Train) return spec.samples_per_class;
    return (spec.samples_per_class + 3) / 4;
}

Dataset generate_dataset(const SyntheticDatasetSpec& spec, int channels, Split split) {
    if (spec.num_classes < 2) throw ConfigError("dataset needs at least 2 classes");
    if (spec.image_size < 8) throw ConfigError("dataset image_size must be >= 8");
    if (channels < 1) throw ConfigError("dataset channels must be >= 1");

    const int spc = split_samples_per_class(spec, split);
    const int total = spc * spec.num_classes;
    const double size = spec.image_size;

    Dataset ds;
    ds.images = Tensor4(total, channels, spec.image_size, spec.image_size);
    ds.labels.resize(total);

    RngStream split_rng = RngStream(spec.seed).child("data").child(split_name(split));

    // Round-robin class order so any prefix of the dataset is balanced.
    for (int i = 0; i < spc; ++i) {
        for (int k = 0; k < spec.num_classes; ++k) {
            const int idx = i * spec.num_classes + k;
            ds.labels[idx] = k;
            RngStream rng = split_rng.child(static_cast<uint64_t>(k)).child(static_cast<uint64_t>(i));

            const double dx = (rng.next_double() - 0.5) * size / 4.0;
            const double dy = (rng.next_double() - 0.5) * size / 4.0;
            const double angle_jit = (rng.next_double() - 0.5) * 0.20;
            const double geom_jit = (rng.next_double() - 0.5) * 1.6;
            const double amp = 0.85 + 0.3 * rng.next_double();

            const int family = k % 3;
            const int variant = k / 3;

            for (int c = 0; c < channels; ++c) {
                const double chan_scale = 1.0 / (1.0 + 0.35 * c);
                double* plane = ds.images.plane(idx, c);
                for (int y = 0; y < spec.image_size; ++y) {
                    for (int x = 0; x < spec.image_size; ++x) {
                        double v = pattern_value(family, variant, y - dy, x - dx, size, angle_jit,
                                                 geom_jit);
                        plane[static_cast<size_t>(y) * spec.image_size + x] =
                            amp * chan_scale * v + spec.noise_level * rng.next_normal();
                    }
                }
            }
        }
    }
    return ds;
}

void write_dataset(const std::string& images_path, const std::string& labels_path,
                   const Dataset& ds) {
    write_tensor(images_path, ds.images);
    Tensor4 labels(static_cast<int>(ds.labels.size()), 1, 1, 1);
    for (size_t i = 0; i < ds.labels.size(); ++i) labels.data[i] = ds.labels[i];
    write_tensor(labels_path, labels);
}

Dataset read_dataset(const std::string& images_path, const std::string& labels_path) {
    Dataset ds;
    ds.images = read_tensor(images_path);
    Tensor4 labels = read_tensor(labels_path);
    if (labels.n != ds.images.n)
        throw ConfigError("dataset images/labels length mismatch: " + std::to_string(ds.images.n) +
                          " vs " + std::to_string(labels.n));
    ds.labels.resize(labels.n);
    for (int i = 0; i < labels.n; ++i) ds.labels[i] = static_cast<int>(labels.data[i]);
    return ds;
}

}  // namespace nadjust
