#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "adaptparse/tensor.hpp"

namespace adaptparse {

enum class Domain { Source, Target };

const char* domain_name(Domain d);
Domain domain_from_name(const std::string& s);

struct SceneParams {
    std::uint64_t seed = 1;
    int canvas_h = 49;
    int canvas_w = 25;
    double scale_min = 0.55;
    double scale_max = 0.85;
    double pose_jitter = 0.3;
    double background_texture = 0.3;
    int label_set = 4;  // 4 or 12 (adds left/right arm, leg and shoe splits)

    void validate() const;
};

/// Shift operator magnitudes; (1.0, 0, 0, 1, 0) is the identity.
struct ShiftParams {
    double brightness_factor = 1.0;
    double blur_sigma = 0.0;
    double noise_std = 0.0;
    int downscale_factor = 1;
    int motion_blur_len = 0;

    bool is_identity() const;
    static ShiftParams identity() { return {}; }
    /// Compound shift used by the adaptation experiments.
    static ShiftParams default_target() { return {0.5, 1.0, 0.05, 2, 3}; }
    void validate() const;
};

struct DomainSample {
    std::string id;
    Tensor image;                 // f32 [3,H,W] in [0,1]
    std::optional<Tensor> labels; // u8 [H,W]
    Domain domain = Domain::Source;
};

// 4-class ids.
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kHead = 1;
inline constexpr std::uint8_t kUpperBody = 2;
inline constexpr std::uint8_t kLowerBody = 3;

/// Renders one articulated figure over a textured background. Deterministic
/// in (params.seed, index); the label map is exact by construction and every
/// class of the active label set is present.
DomainSample generate_scene(const SceneParams& params, std::int64_t index);

/// brightness -> Gaussian blur (kernel truncated at radius 3 sigma) ->
/// horizontal box motion blur -> downscale-then-upscale (nearest) ->
/// additive Gaussian noise -> clamp to [0,1]. Labels are never touched.
Tensor apply_domain_shift(const Tensor& image, const ShiftParams& shift, std::uint64_t rng_seed);

}  // namespace adaptparse
