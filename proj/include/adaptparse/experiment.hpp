#pragma once

#include <iosfwd>

#include "adaptparse/config.hpp"
#include "adaptparse/dataset.hpp"
#include "adaptparse/metrics.hpp"

namespace adaptparse {

inline constexpr const char* kVersion = "0.1.0";

/// Renders the source set (labeled), the target training split (images
/// only; labels withheld) and the target test split (labeled), shifted by
/// the configured operators. Layout: <source_dir>, <target_dir>/train,
/// <target_dir>/test. Deterministic in (scene, shift, counts, seed).
void generate_datasets(const ExperimentConfig& cfg, bool force);

struct EvalPoint {
    std::int64_t iter;
    MetricReport report;
};

struct RunResult {
    std::vector<EvalPoint> history;
    std::filesystem::path final_checkpoint;
    std::int64_t p1_steps = 0;
};

/// Full training run under run_dir: audit log (audit.log), metric history
/// (metrics.csv), run manifest (run_manifest.txt), periodic checkpoints
/// (checkpoints/ckpt_<iter>.ckpt). Resumes from resume_from when given.
RunResult run_training(const ExperimentConfig& cfg, std::ostream* log,
                       const std::filesystem::path& resume_from = {});

/// Parses every sample with L(E(x)), upsamples predictions to image
/// resolution and scores them against the ground truth.
MetricReport evaluate_parser(NetworkInstance& extractor, NetworkInstance& labeler,
                             const Dataset& test_set, int num_classes);

}  // namespace adaptparse
