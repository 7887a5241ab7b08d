#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "adaptparse/scene.hpp"
#include "adaptparse/trainer.hpp"

namespace adaptparse {

enum class RunMode { Adapt, SourceOnly, FeatAdapt, LabAdapt };

const char* run_mode_name(RunMode m);
RunMode run_mode_from_name(const std::string& s);

/// Everything a run needs: schedule and optimizer settings, scene and shift
/// parameters, dataset counts and paths. Loadable from a `key = value` file
/// with [section] headers; any key can be overridden by a --key value flag
/// (flag wins), and ADAPT_PARSE_SEED overrides the seed last.
struct ExperimentConfig {
    RunMode mode = RunMode::Adapt;
    std::filesystem::path source_dir;
    std::filesystem::path target_dir;
    std::filesystem::path run_dir;
    std::int64_t checkpoint_interval = 200;
    std::int64_t eval_interval = 100;
    std::uint64_t seed = 1;

    std::int64_t count_source = 500;
    std::int64_t count_target_train = 500;
    std::int64_t count_target_test = 100;

    TrainConfig train;   // profile included; train.seed mirrors seed
    SceneParams scene;   // scene.seed mirrors seed
    ShiftParams shift = ShiftParams::default_target();

    void validate() const;

    /// Applies mode and seed mirrors; call after any mutation.
    void finalize();
};

/// Key/value layer: file keys, then flag overrides, then the env seed.
ExperimentConfig load_config(const std::map<std::string, std::string>& file_values,
                             const std::map<std::string, std::string>& flag_values);

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path);

/// Deterministic `[section] key = value` dump of the resolved config.
std::string dump_config(const ExperimentConfig& cfg);

}  // namespace adaptparse
