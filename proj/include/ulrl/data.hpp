#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "ulrl/checkpoint.hpp"
#include "ulrl/errors.hpp"
#include "ulrl/rng.hpp"
#include "ulrl/tensor.hpp"

namespace ulrl {

/// Images in [0,1] with integer labels and a per-sample poison mask.
struct LabeledDataset {
    Tensor<float> images;  // [N,C,H,W]
    std::vector<int> labels;
    std::vector<std::uint8_t> poison_mask;
    int num_classes = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t sample_numel() const { return size() == 0 ? 0 : images.numel() / size(); }

    float* sample(std::size_t i) { return images.ptr() + i * sample_numel(); }
    const float* sample(std::size_t i) const { return images.ptr() + i * sample_numel(); }

    bool any_poisoned() const {
        for (auto m : poison_mask)
            if (m) return true;
        return false;
    }
};

/// Synthetic class-prototype data: per class a fixed random prototype with pixel
/// values 0.5 + separation*(u - 0.5), samples are prototype + Gaussian noise
/// clamped to [0,1]. Samples are laid out class-major; the poison mask is all false.
inline LabeledDataset gen_synthetic(int num_classes, int n_per_class, std::size_t channels,
                                    std::size_t height, std::size_t width, double separation,
                                    double noise_std, Rng& rng) {
    if (num_classes < 2) throw InputError("gen_synthetic: need at least 2 classes");
    if (n_per_class < 1) throw InputError("gen_synthetic: n_per_class must be >= 1");
    if (channels < 1 || height < 4 || width < 4)
        throw InputError("gen_synthetic: degenerate extents (need C>=1, H,W>=4)");
    if (separation < 0.0 || separation > 1.0) throw InputError("gen_synthetic: separation must be in [0,1]");
    if (noise_std < 0.0) throw InputError("gen_synthetic: noise_std must be >= 0");

    const std::size_t d = channels * height * width;
    const std::size_t n = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(n_per_class);
    LabeledDataset ds;
    ds.num_classes = num_classes;
    ds.images = Tensor<float>({n, channels, height, width});
    ds.labels.resize(n);
    ds.poison_mask.assign(n, 0);

    std::vector<float> prototype(d);
    std::size_t si = 0;
    for (int k = 0; k < num_classes; ++k) {
        for (std::size_t j = 0; j < d; ++j)
            prototype[j] = static_cast<float>(0.5 + separation * (rng.uniform() - 0.5));
        for (int s = 0; s < n_per_class; ++s, ++si) {
            float* img = ds.sample(si);
            for (std::size_t j = 0; j < d; ++j) {
                double v = prototype[j] + noise_std * rng.normal();
                img[j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
            ds.labels[si] = k;
        }
    }
    return ds;
}

/// Stratified subsample of an unpoisoned set: floor(fraction*N) samples total,
/// split per class as total/K each with the remainder going to the lowest class
/// indices, drawn uniformly without replacement inside each class.
inline LabeledDataset sample_defense_set(const LabeledDataset& clean, double fraction, Rng& rng) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InputError("sample_defense_set: fraction must be in (0,1]");
    if (clean.any_poisoned()) throw InputError("sample_defense_set: input must be unpoisoned");
    const std::size_t n = clean.size();
    const int k = clean.num_classes;
    const std::size_t total = static_cast<std::size_t>(fraction * static_cast<double>(n));
    if (total < static_cast<std::size_t>(k))
        throw InputError("sample_defense_set: fraction yields fewer samples than classes");

    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < n; ++i) by_class[clean.labels[i]].push_back(i);

    const std::size_t base = total / k;
    const std::size_t extra = total % k;
    std::vector<std::size_t> chosen;
    chosen.reserve(total);
    for (int c = 0; c < k; ++c) {
        const std::size_t want = base + (static_cast<std::size_t>(c) < extra ? 1 : 0);
        auto& pool = by_class[c];
        if (pool.size() < want)
            throw InputError("sample_defense_set: class " + std::to_string(c) + " has too few samples");
        // partial Fisher-Yates: the first `want` entries become the sample
        for (std::size_t i = 0; i < want; ++i) {
            std::size_t j = i + rng.uniform_below(pool.size() - i);
            std::swap(pool[i], pool[j]);
            chosen.push_back(pool[i]);
        }
    }

    LabeledDataset out;
    out.num_classes = k;
    out.images = Tensor<float>({total, clean.images.extent(1), clean.images.extent(2), clean.images.extent(3)});
    out.labels.resize(total);
    out.poison_mask.assign(total, 0);
    const std::size_t d = clean.sample_numel();
    for (std::size_t i = 0; i < total; ++i) {
        std::memcpy(out.sample(i), clean.sample(chosen[i]), d * sizeof(float));
        out.labels[i] = clean.labels[chosen[i]];
    }
    return out;
}

// Dataset file format (version 1), little-endian:
//   magic "ULRD" | u32 version | u32 K | u32 N | u32 C | u32 H | u32 W |
//   N*C*H*W f32 images | N u16 labels | ceil(N/8) bytes poison mask, LSB-first.
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const LabeledDataset& ds, std::ostream& out) {
    out.write("ULRD", 4);
    detail::write_u32(out, kDatasetVersion);
    detail::write_u32(out, static_cast<std::uint32_t>(ds.num_classes));
    detail::write_u32(out, static_cast<std::uint32_t>(ds.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(ds.images.extent(1)));
    detail::write_u32(out, static_cast<std::uint32_t>(ds.images.extent(2)));
    detail::write_u32(out, static_cast<std::uint32_t>(ds.images.extent(3)));
    detail::write_f32_block(out, ds.images);
    for (int label : ds.labels) {
        unsigned char b[2] = {static_cast<unsigned char>(label), static_cast<unsigned char>(label >> 8)};
        out.write(reinterpret_cast<const char*>(b), 2);
    }
    const std::size_t n = ds.size();
    for (std::size_t byte = 0; byte * 8 < n; ++byte) {
        unsigned char packed = 0;
        for (std::size_t bit = 0; bit < 8 && byte * 8 + bit < n; ++bit)
            if (ds.poison_mask[byte * 8 + bit]) packed |= static_cast<unsigned char>(1u << bit);
        out.put(static_cast<char>(packed));
    }
}

inline void save_dataset(const LabeledDataset& ds, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_dataset: cannot open " + path);
    save_dataset(ds, out);
    if (!out) throw IoError("save_dataset: write failed for " + path);
}

inline LabeledDataset load_dataset(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "ULRD", 4) != 0) throw IoError("load_dataset: bad magic");
    if (detail::read_u32(in) != kDatasetVersion) throw IoError("load_dataset: unsupported version");
    LabeledDataset ds;
    ds.num_classes = static_cast<int>(detail::read_u32(in));
    const std::size_t n = detail::read_u32(in);
    const std::size_t c = detail::read_u32(in), h = detail::read_u32(in), w = detail::read_u32(in);
    ds.images = Tensor<float>({n, c, h, w});
    detail::read_f32_block(in, ds.images);
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char b[2];
        in.read(reinterpret_cast<char*>(b), 2);
        ds.labels[i] = static_cast<int>(b[0]) | (static_cast<int>(b[1]) << 8);
    }
    ds.poison_mask.assign(n, 0);
    for (std::size_t byte = 0; byte * 8 < n; ++byte) {
        const int packed = in.get();
        for (std::size_t bit = 0; bit < 8 && byte * 8 + bit < n; ++bit)
            ds.poison_mask[byte * 8 + bit] = (packed >> bit) & 1;
    }
    if (!in) throw IoError("load_dataset: truncated file");
    return ds;
}

inline LabeledDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_dataset: cannot open " + path);
    return load_dataset(in);
}

}  // namespace ulrl
