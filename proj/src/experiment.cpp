#include "adaptparse/experiment.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

#include "adaptparse/rng.hpp"
#include "adaptparse/tensor_io.hpp"

namespace adaptparse {

namespace {

void ensure_empty_or_force(const std::filesystem::path& dir, bool force) {
    if (std::filesystem::exists(dir) && !std::filesystem::is_empty(dir)) {
        if (!force) {
            throw IoError("output directory " + dir.string() +
                          " exists and is not empty (use --force to overwrite)");
        }
        std::filesystem::remove_all(dir);
    }
    std::filesystem::create_directories(dir);
}

std::string zero_pad(std::int64_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

void generate_datasets(const ExperimentConfig& cfg, bool force) {
    cfg.validate();
    if (cfg.source_dir.empty() || cfg.target_dir.empty()) {
        throw UsageError("gen-data needs source_dir and target_dir");
    }
    ensure_empty_or_force(cfg.source_dir, force);
    ensure_empty_or_force(cfg.target_dir, force);

    // Disjoint scene streams per split.
    SceneParams source_scene = cfg.scene;
    source_scene.seed = derive_seed(cfg.seed, "split_source");
    SceneParams target_train_scene = cfg.scene;
    target_train_scene.seed = derive_seed(cfg.seed, "split_target_train");
    SceneParams target_test_scene = cfg.scene;
    target_test_scene.seed = derive_seed(cfg.seed, "split_target_test");

    std::vector<DomainSample> source;
    source.reserve(static_cast<std::size_t>(cfg.count_source));
    for (std::int64_t i = 0; i < cfg.count_source; ++i) {
        DomainSample s = generate_scene(source_scene, i);
        s.domain = Domain::Source;
        source.push_back(std::move(s));
    }
    write_dataset(source, cfg.source_dir);

    const auto shifted = [&](const SceneParams& scene, std::int64_t i, const char* split) {
        DomainSample s = generate_scene(scene, i);
        s.domain = Domain::Target;
        s.image = apply_domain_shift(
            s.image, cfg.shift, derive_seed(derive_seed(cfg.seed, split), static_cast<std::uint64_t>(i)));
        return s;
    };

    std::vector<DomainSample> target_train;
    target_train.reserve(static_cast<std::size_t>(cfg.count_target_train));
    for (std::int64_t i = 0; i < cfg.count_target_train; ++i) {
        DomainSample s = shifted(target_train_scene, i, "split_target_train");
        s.labels.reset();  // training split stays unlabeled on disk
        target_train.push_back(std::move(s));
    }
    write_dataset(target_train, cfg.target_dir / "train");

    std::vector<DomainSample> target_test;
    target_test.reserve(static_cast<std::size_t>(cfg.count_target_test));
    for (std::int64_t i = 0; i < cfg.count_target_test; ++i) {
        target_test.push_back(shifted(target_test_scene, i, "split_target_test"));
    }
    write_dataset(target_test, cfg.target_dir / "test");
}

MetricReport evaluate_parser(NetworkInstance& extractor, NetworkInstance& labeler,
                             const Dataset& test_set, int num_classes) {
    if (!test_set.fully_labeled()) {
        throw UsageError("evaluation needs a labeled dataset");
    }
    EvalModeGuard eg(extractor);
    EvalModeGuard lg(labeler);
    ConfusionCounts counts(num_classes);
    for (std::int64_t i = 0; i < test_set.size(); ++i) {
        const DomainSample& s = test_set.sample(i);
        const ParseResult parsed = forward_parse(extractor, labeler, s.image);
        const Tensor pred_small = argmax_channels(parsed.probs);
        const Tensor pred = upsample_labels(pred_small, ScaleProfile::extractor_stride(),
                                            s.image.dim(1), s.image.dim(2));
        Tensor pred_hw({s.image.dim(1), s.image.dim(2)}, DType::U8);
        std::copy(pred.bytes().begin(), pred.bytes().end(), pred_hw.bytes().begin());
        counts.add(confusion_counts(pred_hw, *s.labels, num_classes));
    }
    return compute_metrics(counts, /*bg_class=*/0);
}

RunResult run_training(const ExperimentConfig& cfg, std::ostream* log,
                       const std::filesystem::path& resume_from) {
    cfg.validate();
    if (cfg.run_dir.empty()) throw UsageError("train needs run_dir");
    const Dataset source = Dataset::load(cfg.source_dir);
    const Dataset target_train = Dataset::load(cfg.target_dir / "train");
    const Dataset target_test = Dataset::load(cfg.target_dir / "test");
    if (!source.fully_labeled()) throw UsageError("source dataset must be labeled");

    std::filesystem::create_directories(cfg.run_dir / "checkpoints");

    Trainer trainer(cfg.train);
    if (!resume_from.empty()) {
        trainer.load_checkpoint(resume_from);
        if (log) {
            *log << "resumed from " << resume_from.string() << " at iteration " << trainer.iteration()
                 << "\n";
        }
    }

    std::ofstream audit(cfg.run_dir / "audit.log", resume_from.empty() ? std::ios::trunc : std::ios::app);
    std::ofstream metrics_csv(cfg.run_dir / "metrics.csv",
                              resume_from.empty() ? std::ios::trunc : std::ios::app);
    std::ofstream manifest(cfg.run_dir / "run_manifest.txt",
                           resume_from.empty() ? std::ios::trunc : std::ios::app);
    if (!audit || !metrics_csv || !manifest) {
        throw IoError("cannot open run outputs under " + cfg.run_dir.string());
    }
    if (resume_from.empty()) {
        manifest << "version = " << kVersion << "\n" << dump_config(cfg) << "[eval_history]\n";
        metrics_csv << metrics_csv_header() << "\n";
    }

    RunResult result;
    const std::int64_t start = trainer.iteration() + 1;
    for (std::int64_t t = start; t <= cfg.train.iterations; ++t) {
        const auto src_idx =
            sample_batch_indices(cfg.seed, "source", source.size(), cfg.train.batch_size, t);
        const auto tgt_idx =
            sample_batch_indices(cfg.seed, "target", target_train.size(), cfg.train.batch_size, t);
        const auto src = source.stack(src_idx);
        const auto tgt = target_train.stack(tgt_idx);
        const Batch src_batch{src.images, src.labels, src.has_labels};
        const Batch tgt_batch{tgt.images, Tensor(), false};
        const auto records = trainer.step(t, src_batch, tgt_batch);
        for (const auto& r : records) {
            audit << format_audit(r) << "\n";
            if (r.step == StepKind::P1) ++result.p1_steps;
        }

        if (cfg.eval_interval > 0 && t % cfg.eval_interval == 0) {
            const MetricReport report = evaluate_parser(trainer.extractor(), trainer.labeler(),
                                                        target_test, cfg.train.profile.num_classes);
            result.history.push_back({t, report});
            metrics_csv << metrics_csv_row(t, report) << "\n";
            manifest << "eval " << metrics_csv_row(t, report) << "\n";
            if (log) {
                *log << "iter " << t << " avg_f1 " << report.avg_f1 << " pixel_acc "
                     << report.pixel_accuracy << "\n";
            }
        }
        if ((cfg.checkpoint_interval > 0 && t % cfg.checkpoint_interval == 0) ||
            t == cfg.train.iterations) {
            const auto path = cfg.run_dir / "checkpoints" / ("ckpt_" + zero_pad(t, 6) + ".ckpt");
            trainer.save_checkpoint(path);
            result.final_checkpoint = path;
        }
    }
    audit.flush();
    metrics_csv.flush();
    manifest.flush();
    return result;
}

}  // namespace adaptparse
