#pragma once

#include <optional>

#include "adaptparse/networks.hpp"

namespace adaptparse {

/// Mean over non-ignored pixels of -log softmax(scores)[label]. Used in two
/// configurations: on plain source features (P1) and on compensated source
/// features (P2), both against the source labels.
Tape::Value pixelwise_cross_entropy(Tape& tape, Tape::Value scores, const Tensor& labels,
                                    std::optional<int> ignore_id = {});

/// Discriminator objective on pool-level features: regress target features
/// to 1 and compensated source features to 0, least-squares, per location.
/// Gradients reach only the adversary; callers pass detached features.
Tape::Value loss_feature_adversary(Tape& tape, NetworkInstance& feature_adv, Tape::Value target_feat,
                                   Tape::Value comp_feat, bool update_stats = true);

/// Compensator objective: drive the adversary's score on compensated source
/// features to 1. The adversary is frozen here.
Tape::Value loss_compensator(Tape& tape, NetworkInstance& feature_adv, Tape::Value comp_feat,
                             bool update_stats = true);

/// Label-map discriminator objective: ground-truth one-hot maps to 1,
/// predicted target-domain probability maps to 0. Predictions must come in
/// detached (computed under frozen E and L).
Tape::Value loss_label_adversary(Tape& tape, NetworkInstance& label_adv, Tape::Value gt_onehot,
                                 Tape::Value pred_probs, bool update_stats = true);

/// Parser refinement: drive the (frozen) label adversary's score on target
/// predictions to 1; gradients flow through the predictions into E and L.
Tape::Value loss_parser_adversarial(Tape& tape, NetworkInstance& label_adv, Tape::Value pred_probs,
                                    bool update_stats = true);

// Label-map plumbing shared by the training objectives and evaluation.

/// Nearest-neighbor reduction of [N,H,W] label maps to score resolution:
/// samples at (stride*i, stride*j).
Tensor downsample_labels(const Tensor& labels, int stride, std::int64_t out_h, std::int64_t out_w);

/// One-hot encoding [N,h,w] -> [N,K,h,w] in the given float dtype.
Tensor onehot(const Tensor& labels, int num_classes, DType dtype);

/// Channel argmax of a [N,K,h,w] map -> u8 [N,h,w]; lowest id wins ties.
Tensor argmax_channels(const Tensor& probs);

/// Nearest-neighbor upsample of a u8 [h,w] or [N,h,w] map by an integer
/// stride, clipped to (out_h, out_w).
Tensor upsample_labels(const Tensor& labels, int stride, std::int64_t out_h, std::int64_t out_w);

}  // namespace adaptparse
