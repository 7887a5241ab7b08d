#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adaptparse/checkpoint.hpp"
#include "adaptparse/losses.hpp"
#include "adaptparse/networks.hpp"
#include "adaptparse/optim.hpp"

namespace adaptparse {

enum class StepKind { P1, EQ2, EQ1, EQ4, EQ3, P2 };

const char* step_name(StepKind k);    // P1 | EQ2 | EQ1 | EQ4 | EQ3 | P2
const char* step_params(StepKind k);  // E,L | C | A_f | A_l

struct TrainConfig {
    std::int64_t iterations = 600;
    std::int64_t k_c = 5;  // label-adversary gating period
    int batch_size = 4;
    double lr_main = 1e-2;
    double lr_feature_adv = 1e-3;
    double lr_label_adv = 1e-3;
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    double sgd_momentum = 0.9;
    double sgd_weight_decay = 5e-4;
    std::uint64_t seed = 1;
    ScaleProfile profile;

    // Schedule toggles: the full method runs everything; source-only keeps
    // P1 alone; the two ablations keep one adversarial branch each.
    bool feature_branch = true;  // steps (b),(c) and the P2 pass
    bool label_branch = true;    // step (d), gated by k_c

    // Equivalence mode for the zero-adversarial-rate comparison: batch-norm
    // running stats freeze during steps (b),(c),(d).
    bool equivalence_mode = false;

    void validate() const;
};

struct AuditRecord {
    std::int64_t t;
    StepKind step;
    double loss;
};

/// `t=<t> step=<name> params=<set> loss=<float>`
std::string format_audit(const AuditRecord& r);

struct Batch {
    Tensor images;  // [N,3,H,W] f32
    Tensor labels;  // [N,H,W] u8; empty tensor when the batch is unlabeled
    bool has_labels = false;
};

/// Deterministic batch selection: a pure function of (seed, domain, t), so a
/// resumed run samples exactly like an uninterrupted one. Each epoch is an
/// independent uniform shuffle; a trailing partial batch is dropped.
std::vector<std::int64_t> sample_batch_indices(std::uint64_t seed, const char* domain,
                                               std::int64_t dataset_size, int batch_size,
                                               std::int64_t t);

/// Owns the five networks and their optimizers and runs the alternating
/// schedule. E and L share one SGD optimizer; C, A_f and A_l each get their
/// own Adam so every objective updates exactly its parameter set.
class Trainer {
public:
    explicit Trainer(const TrainConfig& cfg);

    /// One scheduled iteration (t is 1-based). The source batch must be
    /// labeled; the target batch is never inspected for labels.
    std::vector<AuditRecord> step(std::int64_t t, const Batch& source, const Batch& target);

    std::int64_t iteration() const { return iteration_; }
    const TrainConfig& config() const { return cfg_; }

    NetworkInstance& extractor() { return extractor_; }
    NetworkInstance& compensator() { return compensator_; }
    NetworkInstance& labeler() { return labeler_; }
    NetworkInstance& feature_adversary() { return feature_adv_; }
    NetworkInstance& label_adversary() { return label_adv_; }

    NamedTensors state() const;
    void restore(const NamedTensors& records);
    void save_checkpoint(const std::filesystem::path& path) const;
    void load_checkpoint(const std::filesystem::path& path);

private:
    Tape::Value target_prediction_probs(Tape& tape, Tape::Value images, bool trainable,
                                        bool update_stats);
    Tensor downsampled_source_labels(const Batch& source, const Tensor& scores_like) const;
    double run_objective_step(StepKind kind, Tape& tape, Tape::Value loss);

    TrainConfig cfg_;
    NetworkInstance extractor_, compensator_, labeler_, feature_adv_, label_adv_;
    std::unique_ptr<SgdOptimizer> opt_main_;
    std::unique_ptr<AdamOptimizer> opt_comp_, opt_feature_adv_, opt_label_adv_;
    std::int64_t iteration_ = 0;
};

/// Architecture metadata and E/L weights from a checkpoint, enough to run
/// inference and evaluation without the training config.
struct LoadedParser {
    ScaleProfile profile;
    NetworkInstance extractor;
    NetworkInstance labeler;
    std::int64_t iteration = 0;
};

LoadedParser load_parser(const std::filesystem::path& checkpoint_path);

NamedTensors profile_meta_records(const ScaleProfile& profile);
ScaleProfile profile_from_meta(const NamedTensors& records);

}  // namespace adaptparse
