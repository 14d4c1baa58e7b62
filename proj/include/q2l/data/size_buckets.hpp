#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "q2l/data/synth.hpp"

namespace q2l::data {

enum class SizeBucket : std::uint8_t { small = 0, medium = 1, large = 2 };

inline const char* to_string(SizeBucket b) {
    switch (b) {
        case SizeBucket::small:
            return "small";
        case SizeBucket::medium:
            return "medium";
        case SizeBucket::large:
            return "large";
    }
    return "?";
}

/// Areas up to and including `small` are small, up to and including `medium`
/// are medium, the rest large.
inline SizeBucket bucket_of(std::uint64_t area, const SizeThresholds& t) {
    if (area <= t.small) return SizeBucket::small;
    if (area <= t.medium) return SizeBucket::medium;
    return SizeBucket::large;
}

/// Per-bucket evaluation masks over (sample, category) pairs, N x K row-major.
///
/// Negative pairs appear in every view. A positive pair appears only in the
/// bucket of that category's largest object in the sample, so the positive
/// pairs are partitioned across the three views.
struct BucketViews {
    std::size_t samples = 0, classes = 0;
    std::array<std::vector<std::uint8_t>, 3> include;
    std::array<std::size_t, 3> positive_pairs{};
    std::size_t total_positive_pairs = 0;

    /// Union of the given buckets' positives plus all negatives.
    std::vector<std::uint8_t> combined(std::initializer_list<SizeBucket> buckets) const {
        std::vector<std::uint8_t> m(samples * classes, 0);
        for (auto b : buckets)
            for (std::size_t i = 0; i < m.size(); ++i) m[i] |= include[static_cast<std::size_t>(b)][i];
        return m;
    }
};

inline BucketViews size_bucket_eval_split(std::span<const SampleRecord> samples, std::size_t classes,
                                          const SizeThresholds& t) {
    BucketViews v;
    v.samples = samples.size();
    v.classes = classes;
    for (auto& m : v.include) m.assign(v.samples * classes, 0);
    for (std::size_t n = 0; n < samples.size(); ++n) {
        const auto& s = samples[n];
        if (s.labels.size() != classes) throw DatasetError("size_bucket_eval_split: label width mismatch");
        for (std::size_t k = 0; k < classes; ++k) {
            const std::size_t idx = n * classes + k;
            if (!s.labels[k]) {
                for (auto& m : v.include) m[idx] = 1;
                continue;
            }
            std::uint64_t largest = 0;
            bool found = false;
            for (const auto& b : s.boxes)
                if (b.category == k) {
                    largest = std::max(largest, b.area());
                    found = true;
                }
            if (!found)
                throw DatasetError("size_bucket_eval_split: sample " + std::to_string(s.id) +
                                   " is missing boxes for category " + std::to_string(k));
            const auto b = static_cast<std::size_t>(bucket_of(largest, t));
            v.include[b][idx] = 1;
            ++v.positive_pairs[b];
            ++v.total_positive_pairs;
        }
    }
    return v;
}

}  // namespace q2l::data
