#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "adaptparse/errors.hpp"

namespace adaptparse {

/// Width/depth knobs for the five networks. The desk profile keeps the layer
/// pattern of the full-size model at a fraction of the width so every
/// numerical check runs in seconds on a CPU.
struct ScaleProfile {
    std::array<int, 5> stage_channels{8, 16, 32, 32, 32};
    int comp_base_channels = 8;
    int num_residual_blocks = 6;
    std::vector<int> aspp_dilations{2, 4};
    int label_adv_stride2_layers = 3;
    int num_classes = 4;
    int input_h = 49;
    int input_w = 25;

    static ScaleProfile desk() { return {}; }

    /// Full-size VGG-16 / DeepLab widths, 241x121 inputs.
    static ScaleProfile paper() {
        ScaleProfile p;
        p.stage_channels = {64, 128, 256, 512, 512};
        p.comp_base_channels = 64;
        p.num_residual_blocks = 6;
        p.aspp_dilations = {6, 12, 18, 24};
        p.label_adv_stride2_layers = 3;
        p.num_classes = 4;
        p.input_h = 241;
        p.input_w = 121;
        return p;
    }

    /// Overall stride of the extractor (three stride-2 pools).
    static constexpr int extractor_stride() { return 8; }
    /// Stride of the conv1..pool1 prefix the compensator consumes.
    static constexpr int split_stride() { return 2; }

    void validate() const;
};

}  // namespace adaptparse
