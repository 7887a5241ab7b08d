#pragma once

#include <filesystem>
#include <vector>

#include "adaptparse/scene.hpp"

namespace adaptparse {

// On-disk layout: manifest.tsv with one `<id>\t<image>\t<label>\t<domain>`
// line per sample (empty label column for unlabeled samples), images under
// images/<id>.tsr (f32 3xHxW) and labels under labels/<id>.tsr (u8 HxW).
// Iteration order is manifest order.

void write_dataset(const std::vector<DomainSample>& samples, const std::filesystem::path& dir);

class Dataset {
public:
    static Dataset load(const std::filesystem::path& dir);

    std::int64_t size() const { return static_cast<std::int64_t>(samples_.size()); }
    const DomainSample& sample(std::int64_t i) const { return samples_[static_cast<std::size_t>(i)]; }
    bool fully_labeled() const;
    std::int64_t image_h() const { return samples_.empty() ? 0 : samples_[0].image.dim(1); }
    std::int64_t image_w() const { return samples_.empty() ? 0 : samples_[0].image.dim(2); }

    /// Stacks the given samples into an [n,3,H,W] batch; labels come along
    /// only when every selected sample carries them.
    struct Stacked {
        Tensor images;
        Tensor labels;
        bool has_labels;
    };
    Stacked stack(const std::vector<std::int64_t>& indices) const;

private:
    std::vector<DomainSample> samples_;
};

}  // namespace adaptparse
