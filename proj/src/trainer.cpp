#include "adaptparse/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "adaptparse/rng.hpp"

namespace adaptparse {

const char* step_name(StepKind k) {
    switch (k) {
        case StepKind::P1: return "P1";
        case StepKind::EQ2: return "EQ2";
        case StepKind::EQ1: return "EQ1";
        case StepKind::EQ4: return "EQ4";
        case StepKind::EQ3: return "EQ3";
        case StepKind::P2: return "P2";
    }
    return "?";
}

const char* step_params(StepKind k) {
    switch (k) {
        case StepKind::P1:
        case StepKind::EQ4:
        case StepKind::P2: return "E,L";
        case StepKind::EQ2: return "C";
        case StepKind::EQ1: return "A_f";
        case StepKind::EQ3: return "A_l";
    }
    return "?";
}

void TrainConfig::validate() const {
    if (iterations < 1) throw UsageError("iterations must be >= 1");
    if (k_c < 1) throw UsageError("k_c must be >= 1");
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (lr_main <= 0 || lr_feature_adv <= 0 || lr_label_adv <= 0) {
        throw UsageError("learning rates must be positive");
    }
    profile.validate();
}

std::string format_audit(const AuditRecord& r) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "t=%lld step=%s params=%s loss=%.9g",
                  static_cast<long long>(r.t), step_name(r.step), step_params(r.step), r.loss);
    return buf;
}

std::vector<std::int64_t> sample_batch_indices(std::uint64_t seed, const char* domain,
                                               std::int64_t dataset_size, int batch_size,
                                               std::int64_t t) {
    if (dataset_size < batch_size) {
        throw UsageError("dataset of " + std::to_string(dataset_size) +
                         " samples cannot fill batches of " + std::to_string(batch_size));
    }
    const std::int64_t batches_per_epoch = dataset_size / batch_size;
    const std::int64_t epoch = (t - 1) / batches_per_epoch;
    const std::int64_t slot = (t - 1) % batches_per_epoch;
    Rng rng(derive_seed(derive_seed(seed, domain), static_cast<std::uint64_t>(epoch)));
    const auto perm = rng.permutation(dataset_size);
    std::vector<std::int64_t> out(static_cast<std::size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) {
        out[static_cast<std::size_t>(i)] = perm[static_cast<std::size_t>(slot * batch_size + i)];
    }
    return out;
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg),
      extractor_(build_extractor(cfg.profile, DType::F32, cfg.seed)),
      compensator_(build_compensator(cfg.profile, DType::F32, cfg.seed)),
      labeler_(build_labeler(cfg.profile, DType::F32, cfg.seed)),
      feature_adv_(build_feature_adversary(cfg.profile, DType::F32, cfg.seed)),
      label_adv_(build_label_adversary(cfg.profile, DType::F32, cfg.seed)) {
    cfg_.validate();

    std::vector<std::pair<std::string, Tensor*>> main_params;
    for (auto& [n, p] : extractor_.named_parameters()) main_params.emplace_back("E/" + n, p);
    for (auto& [n, p] : labeler_.named_parameters()) main_params.emplace_back("L/" + n, p);
    opt_main_ = std::make_unique<SgdOptimizer>(
        std::move(main_params), SgdConfig{cfg_.lr_main, cfg_.sgd_momentum, cfg_.sgd_weight_decay});

    std::vector<std::pair<std::string, Tensor*>> comp_params;
    for (auto& [n, p] : compensator_.named_parameters()) comp_params.emplace_back("C/" + n, p);
    opt_comp_ = std::make_unique<AdamOptimizer>(
        std::move(comp_params), AdamConfig{cfg_.lr_feature_adv, cfg_.adam_beta1, cfg_.adam_beta2});

    std::vector<std::pair<std::string, Tensor*>> af_params;
    for (auto& [n, p] : feature_adv_.named_parameters()) af_params.emplace_back("A_f/" + n, p);
    opt_feature_adv_ = std::make_unique<AdamOptimizer>(
        std::move(af_params), AdamConfig{cfg_.lr_feature_adv, cfg_.adam_beta1, cfg_.adam_beta2});

    std::vector<std::pair<std::string, Tensor*>> al_params;
    for (auto& [n, p] : label_adv_.named_parameters()) al_params.emplace_back("A_l/" + n, p);
    opt_label_adv_ = std::make_unique<AdamOptimizer>(
        std::move(al_params), AdamConfig{cfg_.lr_label_adv, cfg_.adam_beta1, cfg_.adam_beta2});
}

Tape::Value Trainer::target_prediction_probs(Tape& tape, Tape::Value images, bool trainable,
                                             bool update_stats) {
    const Tape::Value feat = extractor_.forward(tape, images, trainable, update_stats);
    const Tape::Value scores = labeler_.forward(tape, feat, trainable, update_stats);
    Tape::TagScope scope(tape, labeler_.name());
    return tape.softmax_channels(scores);
}

Tensor Trainer::downsampled_source_labels(const Batch& source, const Tensor& scores_like) const {
    return downsample_labels(source.labels, ScaleProfile::extractor_stride(), scores_like.dim(2),
                             scores_like.dim(3));
}

double Trainer::run_objective_step(StepKind kind, Tape& tape, Tape::Value loss) {
    const double value = tape.value_of(loss).get(0);
    if (!std::isfinite(value)) {
        throw NumericalError("non-finite " + std::string(step_name(kind)) + " loss at iteration " +
                             std::to_string(iteration_ + 1));
    }
    tape.backward(loss);
    switch (kind) {
        case StepKind::P1:
        case StepKind::EQ4:
        case StepKind::P2: opt_main_->step(); break;
        case StepKind::EQ2: opt_comp_->step(); break;
        case StepKind::EQ1: opt_feature_adv_->step(); break;
        case StepKind::EQ3: opt_label_adv_->step(); break;
    }
    return value;
}

std::vector<AuditRecord> Trainer::step(std::int64_t t, const Batch& source, const Batch& target) {
    if (!source.has_labels) throw UsageError("source batches must carry labels");
    std::vector<AuditRecord> audit;
    const bool adv_stats = !cfg_.equivalence_mode;

    // (a) parser on plain source features
    {
        opt_main_->zero_grad();
        Tape tape(DType::F32);
        const Tape::Value x = tape.leaf(source.images);
        const Tape::Value feat = extractor_.forward(tape, x, true, true);
        const Tape::Value scores = labeler_.forward(tape, feat, true, true);
        const Tensor down = downsampled_source_labels(source, tape.value_of(scores));
        const Tape::Value loss = pixelwise_cross_entropy(tape, scores, down);
        audit.push_back({t, StepKind::P1, run_objective_step(StepKind::P1, tape, loss)});
    }

    if (cfg_.feature_branch) {
        // (b) compensator against the frozen adversary
        {
            opt_comp_->zero_grad();
            Tape tape(DType::F32);
            const Tape::Value x = tape.leaf(source.images);
            const auto fwd = forward_compensated(tape, extractor_, compensator_, x,
                                                 /*extractor_trainable=*/false,
                                                 /*compensator_trainable=*/true, adv_stats);
            const Tape::Value loss = loss_compensator(tape, feature_adv_, fwd.comp_feat, adv_stats);
            audit.push_back({t, StepKind::EQ2, run_objective_step(StepKind::EQ2, tape, loss)});
        }
        // (c) feature adversary on detached features
        {
            opt_feature_adv_->zero_grad();
            Tape tape(DType::F32);
            const Tape::Value xt = tape.leaf(target.images);
            const Tape::Value target_feat = extractor_.forward(tape, xt, false, adv_stats);
            const Tape::Value xs = tape.leaf(source.images);
            const auto fwd = forward_compensated(tape, extractor_, compensator_, xs, false, false,
                                                 adv_stats);
            const Tape::Value loss =
                loss_feature_adversary(tape, feature_adv_, target_feat, fwd.comp_feat, adv_stats);
            audit.push_back({t, StepKind::EQ1, run_objective_step(StepKind::EQ1, tape, loss)});
        }
    }

    if (cfg_.label_branch && t % cfg_.k_c == 0) {
        // (d) parser refinement, then the label adversary
        {
            opt_main_->zero_grad();
            Tape tape(DType::F32);
            const Tape::Value xt = tape.leaf(target.images);
            const Tape::Value probs = target_prediction_probs(tape, xt, true, adv_stats);
            const Tape::Value loss = loss_parser_adversarial(tape, label_adv_, probs, adv_stats);
            audit.push_back({t, StepKind::EQ4, run_objective_step(StepKind::EQ4, tape, loss)});
        }
        {
            opt_label_adv_->zero_grad();
            Tape tape(DType::F32);
            const Tape::Value xt = tape.leaf(target.images);
            const Tape::Value probs = target_prediction_probs(tape, xt, false, adv_stats);
            // Ground-truth structure comes from source labels at score resolution.
            const Tensor down = downsample_labels(
                source.labels, ScaleProfile::extractor_stride(), tape.value_of(probs).dim(2),
                tape.value_of(probs).dim(3));
            const Tensor gt = onehot(down, cfg_.profile.num_classes, DType::F32);
            const Tape::Value gt_value = tape.leaf(gt);
            const Tape::Value loss =
                loss_label_adversary(tape, label_adv_, gt_value, probs, adv_stats);
            audit.push_back({t, StepKind::EQ3, run_objective_step(StepKind::EQ3, tape, loss)});
        }
    }

    if (cfg_.feature_branch) {
        // (e) parser on compensated source features
        opt_main_->zero_grad();
        Tape tape(DType::F32);
        const Tape::Value x = tape.leaf(source.images);
        const auto fwd = forward_compensated(tape, extractor_, compensator_, x,
                                             /*extractor_trainable=*/true,
                                             /*compensator_trainable=*/false, true);
        const Tape::Value scores = labeler_.forward(tape, fwd.comp_feat, true, true);
        const Tensor down = downsampled_source_labels(source, tape.value_of(scores));
        const Tape::Value loss = pixelwise_cross_entropy(tape, scores, down);
        audit.push_back({t, StepKind::P2, run_objective_step(StepKind::P2, tape, loss)});
    }

    iteration_ = t;
    return audit;
}

namespace {

void collect(NamedTensors& out, const std::string& prefix,
             std::vector<std::pair<std::string, Tensor*>> items) {
    for (auto& [name, tensor] : items) out.emplace_back(prefix + name, *tensor);
}

void restore_into(const NamedTensors& records, const std::string& prefix,
                  std::vector<std::pair<std::string, Tensor*>> items) {
    for (auto& [name, tensor] : items) {
        const Tensor& src = checkpoint_find(records, prefix + name);
        if (src.dims() != tensor->dims() || src.dtype() != tensor->dtype()) {
            throw IoError("checkpoint tensor '" + prefix + name + "' has dims " +
                          dims_to_string(src.dims()) + ", expected " + dims_to_string(tensor->dims()));
        }
        const bool rg = tensor->requires_grad();
        *tensor = src;
        tensor->set_requires_grad(rg);
    }
}

}  // namespace

NamedTensors profile_meta_records(const ScaleProfile& p) {
    std::vector<double> values = {static_cast<double>(p.input_h),
                                  static_cast<double>(p.input_w),
                                  static_cast<double>(p.num_classes),
                                  static_cast<double>(p.comp_base_channels),
                                  static_cast<double>(p.num_residual_blocks),
                                  static_cast<double>(p.label_adv_stride2_layers)};
    for (int c : p.stage_channels) values.push_back(static_cast<double>(c));
    values.push_back(static_cast<double>(p.aspp_dilations.size()));
    for (int d : p.aspp_dilations) values.push_back(static_cast<double>(d));
    Tensor t({static_cast<std::int64_t>(values.size())}, DType::F64);
    for (std::size_t i = 0; i < values.size(); ++i) t.set(static_cast<std::int64_t>(i), values[i]);
    NamedTensors out;
    out.emplace_back("meta/profile", std::move(t));
    return out;
}

ScaleProfile profile_from_meta(const NamedTensors& records) {
    const Tensor& t = checkpoint_find(records, "meta/profile");
    ScaleProfile p;
    std::int64_t i = 0;
    const auto next = [&]() { return static_cast<int>(t.get(i++)); };
    p.input_h = next();
    p.input_w = next();
    p.num_classes = next();
    p.comp_base_channels = next();
    p.num_residual_blocks = next();
    p.label_adv_stride2_layers = next();
    for (auto& c : p.stage_channels) c = next();
    const int n_aspp = next();
    p.aspp_dilations.clear();
    for (int k = 0; k < n_aspp; ++k) p.aspp_dilations.push_back(next());
    p.validate();
    return p;
}

NamedTensors Trainer::state() const {
    NamedTensors out;
    auto& self = const_cast<Trainer&>(*this);
    collect(out, "E/", self.extractor_.named_parameters());
    collect(out, "C/", self.compensator_.named_parameters());
    collect(out, "L/", self.labeler_.named_parameters());
    collect(out, "A_f/", self.feature_adv_.named_parameters());
    collect(out, "A_l/", self.label_adv_.named_parameters());
    collect(out, "C/", self.compensator_.named_state());
    collect(out, "A_l/", self.label_adv_.named_state());
    collect(out, "opt/EL/", self.opt_main_->state_tensors());
    collect(out, "opt/C/", self.opt_comp_->state_tensors());
    collect(out, "opt/A_f/", self.opt_feature_adv_->state_tensors());
    collect(out, "opt/A_l/", self.opt_label_adv_->state_tensors());
    out.emplace_back("trainer/iteration", Tensor::scalar(static_cast<double>(iteration_), DType::F64));
    for (auto& r : profile_meta_records(cfg_.profile)) out.push_back(std::move(r));
    return out;
}

void Trainer::restore(const NamedTensors& records) {
    const ScaleProfile meta = profile_from_meta(records);
    ScaleProfile mine = cfg_.profile;
    if (meta.stage_channels != mine.stage_channels || meta.num_classes != mine.num_classes ||
        meta.input_h != mine.input_h || meta.input_w != mine.input_w ||
        meta.comp_base_channels != mine.comp_base_channels ||
        meta.num_residual_blocks != mine.num_residual_blocks ||
        meta.aspp_dilations != mine.aspp_dilations ||
        meta.label_adv_stride2_layers != mine.label_adv_stride2_layers) {
        throw IoError("checkpoint profile does not match the configured profile");
    }
    restore_into(records, "E/", extractor_.named_parameters());
    restore_into(records, "C/", compensator_.named_parameters());
    restore_into(records, "L/", labeler_.named_parameters());
    restore_into(records, "A_f/", feature_adv_.named_parameters());
    restore_into(records, "A_l/", label_adv_.named_parameters());
    restore_into(records, "C/", compensator_.named_state());
    restore_into(records, "A_l/", label_adv_.named_state());
    restore_into(records, "opt/EL/", opt_main_->state_tensors());
    restore_into(records, "opt/C/", opt_comp_->state_tensors());
    restore_into(records, "opt/A_f/", opt_feature_adv_->state_tensors());
    restore_into(records, "opt/A_l/", opt_label_adv_->state_tensors());
    iteration_ = static_cast<std::int64_t>(checkpoint_find(records, "trainer/iteration").get(0));
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
    checkpoint_write(state(), path);
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
    restore(checkpoint_read(path));
}

LoadedParser load_parser(const std::filesystem::path& checkpoint_path) {
    const NamedTensors records = checkpoint_read(checkpoint_path);
    const ScaleProfile profile = profile_from_meta(records);
    LoadedParser out{profile, build_extractor(profile, DType::F32, 0),
                     build_labeler(profile, DType::F32, 0), 0};
    restore_into(records, "E/", out.extractor.named_parameters());
    restore_into(records, "L/", out.labeler.named_parameters());
    out.iteration = static_cast<std::int64_t>(checkpoint_find(records, "trainer/iteration").get(0));
    out.extractor.set_train_mode(false);
    out.labeler.set_train_mode(false);
    return out;
}

}  // namespace adaptparse
