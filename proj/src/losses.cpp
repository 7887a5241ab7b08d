#include "adaptparse/losses.hpp"

namespace adaptparse {

Tape::Value pixelwise_cross_entropy(Tape& tape, Tape::Value scores, const Tensor& labels,
                                    std::optional<int> ignore_id) {
    return tape.cross_entropy_mean(scores, labels, ignore_id);
}

Tape::Value loss_feature_adversary(Tape& tape, NetworkInstance& feature_adv, Tape::Value target_feat,
                                   Tape::Value comp_feat, bool update_stats) {
    const Tensor& a = tape.value_of(target_feat);
    const Tensor& b = tape.value_of(comp_feat);
    if (a.dims() != b.dims()) {
        throw ShapeError("feature adversary: target features " + dims_to_string(a.dims()) +
                         " vs compensated features " + dims_to_string(b.dims()));
    }
    const Tape::Value on_target = feature_adv.forward(tape, target_feat, /*trainable=*/true, update_stats);
    const Tape::Value on_comp = feature_adv.forward(tape, comp_feat, /*trainable=*/true, update_stats);
    const Tape::Value real_term = tape.half_mse_to_const(on_target, 1.0);
    const Tape::Value fake_term = tape.half_mse_to_const(on_comp, 0.0);
    return tape.elementwise_add(real_term, fake_term);
}

Tape::Value loss_compensator(Tape& tape, NetworkInstance& feature_adv, Tape::Value comp_feat,
                             bool update_stats) {
    const Tape::Value score = feature_adv.forward(tape, comp_feat, /*trainable=*/false, update_stats);
    return tape.half_mse_to_const(score, 1.0);
}

namespace {

void check_label_adv_input(const NetworkInstance& label_adv, const Tensor& t, const char* what) {
    if (t.rank() != 4 || t.dim(1) != label_adv.input_channels()) {
        throw ShapeError(std::string("label adversary: ") + what + " has dims " +
                         dims_to_string(t.dims()) + ", expected " +
                         std::to_string(label_adv.input_channels()) + " class channels");
    }
}

}  // namespace

Tape::Value loss_label_adversary(Tape& tape, NetworkInstance& label_adv, Tape::Value gt_onehot,
                                 Tape::Value pred_probs, bool update_stats) {
    check_label_adv_input(label_adv, tape.value_of(gt_onehot), "ground-truth map");
    check_label_adv_input(label_adv, tape.value_of(pred_probs), "prediction map");
    const Tape::Value on_gt = label_adv.forward(tape, gt_onehot, /*trainable=*/true, update_stats);
    const Tape::Value on_pred = label_adv.forward(tape, pred_probs, /*trainable=*/true, update_stats);
    const Tape::Value real_term = tape.half_mse_to_const(on_gt, 1.0);
    const Tape::Value fake_term = tape.half_mse_to_const(on_pred, 0.0);
    return tape.elementwise_add(real_term, fake_term);
}

Tape::Value loss_parser_adversarial(Tape& tape, NetworkInstance& label_adv, Tape::Value pred_probs,
                                    bool update_stats) {
    check_label_adv_input(label_adv, tape.value_of(pred_probs), "prediction map");
    const Tape::Value score = label_adv.forward(tape, pred_probs, /*trainable=*/false, update_stats);
    return tape.half_mse_to_const(score, 1.0);
}

Tensor downsample_labels(const Tensor& labels, int stride, std::int64_t out_h, std::int64_t out_w) {
    if (labels.dtype() != DType::U8 || labels.rank() != 3) {
        throw ShapeError("downsample_labels expects u8 [N,H,W], got " + dims_to_string(labels.dims()));
    }
    const std::int64_t N = labels.dim(0), H = labels.dim(1), W = labels.dim(2);
    Tensor out({N, out_h, out_w}, DType::U8);
    const auto src = labels.as<const std::uint8_t>();
    auto dst = out.as<std::uint8_t>();
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t y = 0; y < out_h; ++y) {
            const std::int64_t sy = std::min<std::int64_t>(y * stride, H - 1);
            for (std::int64_t x = 0; x < out_w; ++x) {
                const std::int64_t sx = std::min<std::int64_t>(x * stride, W - 1);
                dst[static_cast<std::size_t>((n * out_h + y) * out_w + x)] =
                    src[static_cast<std::size_t>((n * H + sy) * W + sx)];
            }
        }
    }
    return out;
}

Tensor onehot(const Tensor& labels, int num_classes, DType dtype) {
    if (labels.dtype() != DType::U8 || labels.rank() != 3) {
        throw ShapeError("onehot expects u8 [N,h,w], got " + dims_to_string(labels.dims()));
    }
    const std::int64_t N = labels.dim(0), H = labels.dim(1), W = labels.dim(2);
    Tensor out({N, num_classes, H, W}, dtype);
    const auto src = labels.as<const std::uint8_t>();
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < H * W; ++i) {
            const int cls = src[static_cast<std::size_t>(n * H * W + i)];
            if (cls >= num_classes) {
                throw NumericalError("onehot: label id " + std::to_string(cls) + " out of range");
            }
            out.set((n * num_classes + cls) * H * W + i, 1.0);
        }
    }
    return out;
}

Tensor argmax_channels(const Tensor& probs) {
    if (probs.rank() != 4) throw ShapeError("argmax_channels expects [N,K,h,w]");
    const std::int64_t N = probs.dim(0), K = probs.dim(1), HW = probs.dim(2) * probs.dim(3);
    Tensor out({N, probs.dim(2), probs.dim(3)}, DType::U8);
    auto dst = out.as<std::uint8_t>();
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t i = 0; i < HW; ++i) {
            int best = 0;
            double best_v = probs.get(n * K * HW + i);
            for (std::int64_t k = 1; k < K; ++k) {
                const double v = probs.get((n * K + k) * HW + i);
                if (v > best_v) {
                    best_v = v;
                    best = static_cast<int>(k);
                }
            }
            dst[static_cast<std::size_t>(n * HW + i)] = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

Tensor upsample_labels(const Tensor& labels, int stride, std::int64_t out_h, std::int64_t out_w) {
    if (labels.dtype() != DType::U8) throw ShapeError("upsample_labels expects u8 maps");
    const bool batched = labels.rank() == 3;
    if (!batched && labels.rank() != 2) {
        throw ShapeError("upsample_labels expects [h,w] or [N,h,w]");
    }
    const std::int64_t N = batched ? labels.dim(0) : 1;
    const std::int64_t h = labels.dim(batched ? 1 : 0), w = labels.dim(batched ? 2 : 1);
    Tensor out(batched ? std::vector<std::int64_t>{N, out_h, out_w}
                       : std::vector<std::int64_t>{out_h, out_w},
               DType::U8);
    const auto src = labels.as<const std::uint8_t>();
    auto dst = out.as<std::uint8_t>();
    for (std::int64_t n = 0; n < N; ++n) {
        for (std::int64_t y = 0; y < out_h; ++y) {
            const std::int64_t sy = std::min(y / stride, h - 1);
            for (std::int64_t x = 0; x < out_w; ++x) {
                const std::int64_t sx = std::min(x / stride, w - 1);
                dst[static_cast<std::size_t>((n * out_h + y) * out_w + x)] =
                    src[static_cast<std::size_t>((n * h + sy) * w + sx)];
            }
        }
    }
    return out;
}

}  // namespace adaptparse
