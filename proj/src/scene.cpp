#include "adaptparse/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "adaptparse/rng.hpp"

namespace adaptparse {

const char* domain_name(Domain d) { return d == Domain::Source ? "source" : "target"; }

Domain domain_from_name(const std::string& s) {
    if (s == "source") return Domain::Source;
    if (s == "target") return Domain::Target;
    throw IoError("unknown domain tag '" + s + "'");
}

void SceneParams::validate() const {
    if (canvas_h < 16 || canvas_w < 16) {
        throw UsageError("canvas too small to place the minimal figure: " + std::to_string(canvas_h) +
                         "x" + std::to_string(canvas_w) + " (need at least 16x16)");
    }
    if (scale_min <= 0.0 || scale_max > 1.0 || scale_min > scale_max) {
        throw UsageError("figure scale range must satisfy 0 < min <= max <= 1");
    }
    if (pose_jitter < 0.0 || background_texture < 0.0) {
        throw UsageError("pose_jitter and background_texture must be nonnegative");
    }
    if (label_set != 4 && label_set != 12) {
        throw UsageError("label_set must be 4 or 12, got " + std::to_string(label_set));
    }
}

bool ShiftParams::is_identity() const {
    return brightness_factor == 1.0 && blur_sigma == 0.0 && noise_std == 0.0 &&
           downscale_factor == 1 && motion_blur_len == 0;
}

void ShiftParams::validate() const {
    if (brightness_factor <= 0.0) throw UsageError("brightness_factor must be positive");
    if (blur_sigma < 0.0 || noise_std < 0.0) throw UsageError("blur/noise magnitudes must be >= 0");
    if (downscale_factor < 1) throw UsageError("downscale_factor must be >= 1");
    if (motion_blur_len < 0) throw UsageError("motion_blur_len must be >= 0");
}

namespace {

// 12-class ids mirror the fine label set: bg, face, hair, u-clothes, l-arm,
// r-arm, pants, l-leg, r-leg, dress, l-shoe, r-shoe.
enum Fine : std::uint8_t {
    kFBg = 0,
    kFace = 1,
    kHair = 2,
    kUClothes = 3,
    kLArm = 4,
    kRArm = 5,
    kPants = 6,
    kLLeg = 7,
    kRLeg = 8,
    kDress = 9,
    kLShoe = 10,
    kRShoe = 11,
};

struct Painter {
    int H, W;
    Tensor* labels;
    Tensor* image;
    double rgb[3] = {0, 0, 0};

    void set_color(double r, double g, double b) {
        rgb[0] = r;
        rgb[1] = g;
        rgb[2] = b;
    }

    void paint(std::int64_t y, std::int64_t x, std::uint8_t cls, double shade) {
        if (y < 0 || y >= H || x < 0 || x >= W) return;
        labels->as<std::uint8_t>()[static_cast<std::size_t>(y * W + x)] = cls;
        auto img = image->as<float>();
        for (int c = 0; c < 3; ++c) {
            const double v = std::clamp(rgb[c] * shade, 0.0, 1.0);
            img[static_cast<std::size_t>(c * H * W + y * W + x)] = static_cast<float>(v);
        }
    }

    void fill_ellipse(double cy, double cx, double ry, double rx, std::uint8_t cls, double shade) {
        const auto y0 = static_cast<std::int64_t>(std::floor(cy - ry));
        const auto y1 = static_cast<std::int64_t>(std::ceil(cy + ry));
        const auto x0 = static_cast<std::int64_t>(std::floor(cx - rx));
        const auto x1 = static_cast<std::int64_t>(std::ceil(cx + rx));
        for (std::int64_t y = y0; y <= y1; ++y) {
            for (std::int64_t x = x0; x <= x1; ++x) {
                const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
                const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
                if (dy * dy + dx * dx <= 1.0) paint(y, x, cls, shade);
            }
        }
    }

    // Rectangle of the given length/width, rotated by angle around its top
    // midpoint (angle 0 points straight down).
    void fill_strip(double top_y, double top_x, double length, double width, double angle,
                    std::uint8_t cls, double shade) {
        const double dy = std::cos(angle), dx = std::sin(angle);
        const int steps = std::max(2, static_cast<int>(std::ceil(length * 3)));
        const int lateral = std::max(1, static_cast<int>(std::ceil(width * 2)));
        for (int s = 0; s <= steps; ++s) {
            const double f = length * static_cast<double>(s) / steps;
            const double cy = top_y + f * dy;
            const double cx = top_x + f * dx;
            for (int l = -lateral; l <= lateral; ++l) {
                const double off = width * 0.5 * static_cast<double>(l) / lateral;
                paint(static_cast<std::int64_t>(std::floor(cy - off * dx)),
                      static_cast<std::int64_t>(std::floor(cx + off * dy)), cls, shade);
            }
        }
    }

    // Upright trapezoid: half-widths at the top and bottom edges.
    void fill_trapezoid(double y_top, double y_bot, double cx, double half_top, double half_bot,
                        double shear, std::uint8_t cls, double shade) {
        const auto y0 = static_cast<std::int64_t>(std::floor(y_top));
        const auto y1 = static_cast<std::int64_t>(std::ceil(y_bot));
        for (std::int64_t y = y0; y <= y1; ++y) {
            const double f = (static_cast<double>(y) - y_top) / std::max(1.0, y_bot - y_top);
            if (f < 0.0 || f > 1.0) continue;
            const double half = half_top + (half_bot - half_top) * f;
            const double center = cx + shear * (static_cast<double>(y) - y_top);
            const auto x0 = static_cast<std::int64_t>(std::floor(center - half));
            const auto x1 = static_cast<std::int64_t>(std::ceil(center + half));
            for (std::int64_t x = x0; x <= x1; ++x) {
                if (std::abs(static_cast<double>(x) + 0.5 - center) <= half) paint(y, x, cls, shade);
            }
        }
    }
};

std::uint8_t coarse_of(std::uint8_t fine) {
    switch (fine) {
        case kFace:
        case kHair: return kHead;
        case kUClothes:
        case kLArm:
        case kRArm:
        case kDress: return kUpperBody;
        default: return fine == kFBg ? kBackground : kLowerBody;
    }
}

}  // namespace

DomainSample generate_scene(const SceneParams& params, std::int64_t index) {
    params.validate();
    const int H = params.canvas_h, W = params.canvas_w;
    Rng rng(derive_seed(derive_seed(params.seed, "scene"), static_cast<std::uint64_t>(index)));

    DomainSample out;
    out.id = "sample_" + std::to_string(index);
    out.image = Tensor({3, H, W}, DType::F32);
    out.labels = Tensor({static_cast<std::int64_t>(H), static_cast<std::int64_t>(W)}, DType::U8);

    // Background: tinted gray with a smooth gradient, a sinusoid and pixel
    // noise scaled by the texture level.
    {
        const double base = rng.uniform(0.62, 0.8);
        const double tint[3] = {rng.uniform(0.92, 1.0), rng.uniform(0.92, 1.0), rng.uniform(0.92, 1.0)};
        const double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);
        const double freq = rng.uniform(1.0, 3.0), phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        auto img = out.image.as<float>();
        for (int y = 0; y < H; ++y) {
            for (int x = 0; x < W; ++x) {
                const double u = static_cast<double>(x) / W, v = static_cast<double>(y) / H;
                const double tex = params.background_texture *
                                   (0.12 * std::sin(2.0 * std::numbers::pi * freq * (u + v) + phase) +
                                    0.08 * (gx * u + gy * v) + 0.05 * (rng.uniform() - 0.5));
                const double val = base + tex;
                for (int c = 0; c < 3; ++c) {
                    img[static_cast<std::size_t>(c * H * W + y * W + x)] =
                        static_cast<float>(std::clamp(val * tint[c], 0.0, 1.0));
                }
            }
        }
    }

    Painter p{H, W, &*out.labels, &out.image, {}};
    const bool fine = params.label_set == 12;

    // Figure proportions, clamped so every part stays on canvas. Height is
    // additionally capped by the canvas width so arm spread always fits.
    const double fig_h = std::min({rng.uniform(params.scale_min, params.scale_max) * H,
                                   0.88 * (H - 2), static_cast<double>(W)});
    const double head_r = std::max(1.6, 0.11 * fig_h);
    const double torso_h = 0.34 * fig_h;
    const double leg_len = std::max(3.0, fig_h - torso_h - 2.0 * head_r);
    const double torso_half_top = std::max(1.4, 0.26 * torso_h);
    const double torso_half_bot = torso_half_top * 1.15;
    const double arm_len = 0.9 * torso_h;
    const double arm_w = std::max(1.0, 0.3 * head_r);
    const double leg_w = std::max(1.0, 0.45 * head_r);

    const double jit = params.pose_jitter;
    const double max_half = torso_half_bot + arm_len * 0.5 + arm_w + 1.0;
    const double lo_x = std::min(max_half, W / 2.0);
    const double hi_x = std::max(static_cast<double>(W) - max_half, W / 2.0);
    const double cx = std::clamp(W / 2.0 + jit * rng.uniform(-3.0, 3.0), lo_x, hi_x);
    const double feet_y = std::min(static_cast<double>(H) - 1.5,
                                   H - 1.5 - jit * rng.uniform(0.0, 2.0));
    const double hip_y = feet_y - leg_len;
    const double shoulder_y = hip_y - torso_h;
    const double head_cy = shoulder_y - head_r;
    const double lean = jit * rng.uniform(-0.12, 0.12);

    // Per-sample clothing and skin colors with small jitter.
    const double skin[3] = {rng.uniform(0.78, 0.92), rng.uniform(0.62, 0.74), rng.uniform(0.5, 0.62)};
    const double top_col[3] = {rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9)};
    const double bot_col[3] = {rng.uniform(0.1, 0.75), rng.uniform(0.1, 0.75), rng.uniform(0.1, 0.75)};
    const double hair_col[3] = {rng.uniform(0.08, 0.35), rng.uniform(0.05, 0.3), rng.uniform(0.02, 0.25)};
    const double shoe_col[3] = {rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.3)};

    // Legs (under the torso), with an optional shoe band in fine mode.
    const double leg_gap = torso_half_bot * 0.45;
    const double leg_angle[2] = {lean + jit * rng.uniform(-0.08, 0.02), lean + jit * rng.uniform(-0.02, 0.08)};
    for (int side = 0; side < 2; ++side) {
        const double sign = side == 0 ? -1.0 : 1.0;
        const double top_x = cx + sign * leg_gap;
        const double shoe_len = fine ? std::max(1.0, 0.15 * leg_len) : 0.0;
        const double pants_len = fine ? 0.55 * leg_len : leg_len;
        p.set_color(bot_col[0], bot_col[1], bot_col[2]);
        p.fill_strip(hip_y, top_x, pants_len, leg_w, leg_angle[side],
                     fine ? kPants : kLowerBody, rng.uniform(0.9, 1.05));
        if (fine) {
            const double knee_y = hip_y + pants_len * std::cos(leg_angle[side]);
            const double knee_x = top_x + pants_len * std::sin(leg_angle[side]);
            const double shin_len = leg_len - pants_len - shoe_len;
            p.set_color(skin[0], skin[1], skin[2]);
            p.fill_strip(knee_y, knee_x, shin_len, leg_w, leg_angle[side],
                         side == 0 ? kLLeg : kRLeg, rng.uniform(0.9, 1.05));
            const double ankle_y = knee_y + shin_len * std::cos(leg_angle[side]);
            const double ankle_x = knee_x + shin_len * std::sin(leg_angle[side]);
            p.set_color(shoe_col[0], shoe_col[1], shoe_col[2]);
            p.fill_strip(ankle_y, ankle_x, shoe_len, leg_w * 1.4, leg_angle[side],
                         side == 0 ? kLShoe : kRShoe, 1.0);
        }
    }

    // Torso.
    p.set_color(top_col[0], top_col[1], top_col[2]);
    p.fill_trapezoid(shoulder_y, hip_y, cx, torso_half_top, torso_half_bot, lean,
                     fine ? kUClothes : kUpperBody, rng.uniform(0.92, 1.05));
    if (fine) {
        // Skirt band across the hips keeps all twelve classes present.
        p.set_color(top_col[0] * 0.8 + 0.15, top_col[1] * 0.6 + 0.1, top_col[2] * 0.7 + 0.1);
        p.fill_trapezoid(hip_y - 0.12 * torso_h, hip_y + 0.16 * leg_len, cx, torso_half_bot,
                         torso_half_bot * 1.3, lean, kDress, 1.0);
    }

    // Arms hang from the shoulders, spread slightly outward past the torso.
    for (int side = 0; side < 2; ++side) {
        const double sign = side == 0 ? -1.0 : 1.0;
        const double angle = lean + sign * (0.28 + jit * rng.uniform(0.0, 0.25));
        p.set_color(skin[0], skin[1], skin[2]);
        p.fill_strip(shoulder_y + 0.06 * torso_h, cx + sign * torso_half_top, arm_len, arm_w, angle,
                     fine ? (side == 0 ? kLArm : kRArm) : kUpperBody, rng.uniform(0.9, 1.05));
    }

    // Head last so hair and face never get occluded.
    if (fine) {
        p.set_color(skin[0], skin[1], skin[2]);
        p.fill_ellipse(head_cy, cx + lean * 0.5, head_r, head_r * 0.85, kFace, 1.0);
        p.set_color(hair_col[0], hair_col[1], hair_col[2]);
        p.fill_ellipse(head_cy - head_r * 0.45, cx + lean * 0.5, head_r * 0.6, head_r * 0.9, kHair, 1.0);
    } else {
        p.set_color(skin[0], skin[1], skin[2]);
        p.fill_ellipse(head_cy, cx + lean * 0.5, head_r, head_r * 0.85, kHead, 1.0);
    }

    // Construction guarantee: every class of the active set is present.
    std::vector<std::int64_t> counts(static_cast<std::size_t>(params.label_set), 0);
    for (const std::uint8_t v : out.labels->as<const std::uint8_t>()) {
        ++counts[v];
    }
    for (std::size_t cls = 0; cls < counts.size(); ++cls) {
        if (counts[cls] == 0) {
            throw NumericalError("generated scene " + out.id + " lost class " + std::to_string(cls));
        }
    }
    return out;
}

namespace {

void gaussian_blur(std::vector<double>& pix, int H, int W, double sigma) {
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        const double w = std::exp(-static_cast<double>(i) * i / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(i + r)] = w;
        sum += w;
    }
    for (auto& w : k) w /= sum;

    std::vector<double> tmp(pix.size());
    // Horizontal pass, then vertical, replicated edges.
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int sx = std::clamp(x + i, 0, W - 1);
                acc += k[static_cast<std::size_t>(i + r)] * pix[static_cast<std::size_t>(y * W + sx)];
            }
            tmp[static_cast<std::size_t>(y * W + x)] = acc;
        }
    }
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int sy = std::clamp(y + i, 0, H - 1);
                acc += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(sy * W + x)];
            }
            pix[static_cast<std::size_t>(y * W + x)] = acc;
        }
    }
}

void motion_blur(std::vector<double>& pix, int H, int W, int len) {
    const int lo = -((len - 1) / 2);
    const int hi = lo + len - 1;
    std::vector<double> tmp(pix.size());
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int i = lo; i <= hi; ++i) {
                const int sx = std::clamp(x + i, 0, W - 1);
                acc += pix[static_cast<std::size_t>(y * W + sx)];
            }
            tmp[static_cast<std::size_t>(y * W + x)] = acc / len;
        }
    }
    pix.swap(tmp);
}

}  // namespace

Tensor apply_domain_shift(const Tensor& image, const ShiftParams& shift, std::uint64_t rng_seed) {
    shift.validate();
    if (image.dtype() != DType::F32 || image.rank() != 3 || image.dim(0) != 3) {
        throw ShapeError("apply_domain_shift expects f32 [3,H,W], got " + dims_to_string(image.dims()));
    }
    Tensor out = image;
    if (shift.is_identity()) return out;

    const int H = static_cast<int>(image.dim(1)), W = static_cast<int>(image.dim(2));
    auto px = out.as<float>();

    if (shift.brightness_factor != 1.0) {
        const auto f = static_cast<float>(shift.brightness_factor);
        for (auto& v : px) v *= f;
    }

    if (shift.blur_sigma > 0.0 || shift.motion_blur_len >= 2) {
        for (int c = 0; c < 3; ++c) {
            std::vector<double> plane(static_cast<std::size_t>(H) * W);
            for (std::size_t i = 0; i < plane.size(); ++i) {
                plane[i] = static_cast<double>(px[static_cast<std::size_t>(c) * plane.size() + i]);
            }
            if (shift.blur_sigma > 0.0) gaussian_blur(plane, H, W, shift.blur_sigma);
            if (shift.motion_blur_len >= 2) motion_blur(plane, H, W, shift.motion_blur_len);
            for (std::size_t i = 0; i < plane.size(); ++i) {
                px[static_cast<std::size_t>(c) * plane.size() + i] = static_cast<float>(plane[i]);
            }
        }
    }

    if (shift.downscale_factor > 1) {
        const int d = shift.downscale_factor;
        Tensor coarse = out;
        const auto src = coarse.as<const float>();
        for (int c = 0; c < 3; ++c) {
            for (int y = 0; y < H; ++y) {
                const int sy = std::min((y / d) * d, H - 1);
                for (int x = 0; x < W; ++x) {
                    const int sx = std::min((x / d) * d, W - 1);
                    px[static_cast<std::size_t>((c * H + y) * W + x)] =
                        src[static_cast<std::size_t>((c * H + sy) * W + sx)];
                }
            }
        }
    }

    if (shift.noise_std > 0.0) {
        Rng rng(derive_seed(rng_seed, "shift_noise"));
        for (auto& v : px) v += static_cast<float>(rng.normal(0.0, shift.noise_std));
    }

    for (auto& v : px) v = std::clamp(v, 0.0f, 1.0f);
    return out;
}

}  // namespace adaptparse
