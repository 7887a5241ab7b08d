#include "adaptparse/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace adaptparse {

const char* run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::Adapt: return "adapt";
        case RunMode::SourceOnly: return "source_only";
        case RunMode::FeatAdapt: return "feat_adapt";
        case RunMode::LabAdapt: return "lab_adapt";
    }
    return "?";
}

RunMode run_mode_from_name(const std::string& s) {
    if (s == "adapt") return RunMode::Adapt;
    if (s == "source_only") return RunMode::SourceOnly;
    if (s == "feat_adapt") return RunMode::FeatAdapt;
    if (s == "lab_adapt") return RunMode::LabAdapt;
    throw UsageError("unknown mode '" + s + "' (adapt|source_only|feat_adapt|lab_adapt)");
}

void ExperimentConfig::validate() const {
    train.validate();
    scene.validate();
    shift.validate();
    if (checkpoint_interval < 0 || eval_interval < 0) {
        throw UsageError("intervals must be >= 0 (0 disables)");
    }
    if (count_source < 1 || count_target_train < 1 || count_target_test < 1) {
        throw UsageError("dataset counts must be >= 1");
    }
    if (scene.canvas_h != train.profile.input_h || scene.canvas_w != train.profile.input_w) {
        throw UsageError("scene canvas must match the profile input size");
    }
    if (scene.label_set != train.profile.num_classes) {
        throw UsageError("scene label_set must match profile num_classes");
    }
    if (!source_dir.empty() && (source_dir == target_dir || source_dir == run_dir ||
                                (!target_dir.empty() && target_dir == run_dir))) {
        throw UsageError("source, target and run directories must be distinct");
    }
}

void ExperimentConfig::finalize() {
    train.seed = seed;
    scene.seed = seed;
    switch (mode) {
        case RunMode::Adapt:
            train.feature_branch = true;
            train.label_branch = true;
            break;
        case RunMode::SourceOnly:
            train.feature_branch = false;
            train.label_branch = false;
            break;
        case RunMode::FeatAdapt:
            train.feature_branch = true;
            train.label_branch = false;
            break;
        case RunMode::LabAdapt:
            train.feature_branch = false;
            train.label_branch = true;
            break;
    }
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw UsageError("key '" + key + "': expected an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw UsageError("key '" + key + "': expected a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::istringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(static_cast<int>(parse_int(key, trim(item))));
    }
    if (out.empty()) throw UsageError("key '" + key + "': expected a comma-separated list");
    return out;
}

void apply_key(ExperimentConfig& c, const std::string& key, const std::string& value) {
    // [run]
    if (key == "mode") c.mode = run_mode_from_name(value);
    else if (key == "source_dir") c.source_dir = value;
    else if (key == "target_dir") c.target_dir = value;
    else if (key == "run_dir") c.run_dir = value;
    else if (key == "checkpoint_interval") c.checkpoint_interval = parse_int(key, value);
    else if (key == "eval_interval") c.eval_interval = parse_int(key, value);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(key, value));
    // [data]
    else if (key == "count_source") c.count_source = parse_int(key, value);
    else if (key == "count_target_train") c.count_target_train = parse_int(key, value);
    else if (key == "count_target_test") c.count_target_test = parse_int(key, value);
    // [train]
    else if (key == "iterations") c.train.iterations = parse_int(key, value);
    else if (key == "k_c") c.train.k_c = parse_int(key, value);
    else if (key == "batch_size") c.train.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "lr_main") c.train.lr_main = parse_double(key, value);
    else if (key == "lr_feature_adv") c.train.lr_feature_adv = parse_double(key, value);
    else if (key == "lr_label_adv") c.train.lr_label_adv = parse_double(key, value);
    else if (key == "adam_beta1") c.train.adam_beta1 = parse_double(key, value);
    else if (key == "adam_beta2") c.train.adam_beta2 = parse_double(key, value);
    else if (key == "sgd_momentum") c.train.sgd_momentum = parse_double(key, value);
    else if (key == "sgd_weight_decay") c.train.sgd_weight_decay = parse_double(key, value);
    else if (key == "equivalence_mode") c.train.equivalence_mode = parse_bool(key, value);
    // [profile]
    else if (key == "stage_channels") {
        const auto v = parse_int_list(key, value);
        if (v.size() != 5) throw UsageError("stage_channels needs exactly 5 entries");
        std::copy(v.begin(), v.end(), c.train.profile.stage_channels.begin());
    } else if (key == "comp_base_channels") c.train.profile.comp_base_channels = static_cast<int>(parse_int(key, value));
    else if (key == "num_residual_blocks") c.train.profile.num_residual_blocks = static_cast<int>(parse_int(key, value));
    else if (key == "aspp_dilations") c.train.profile.aspp_dilations = parse_int_list(key, value);
    else if (key == "label_adv_stride2_layers") c.train.profile.label_adv_stride2_layers = static_cast<int>(parse_int(key, value));
    else if (key == "num_classes") c.train.profile.num_classes = static_cast<int>(parse_int(key, value));
    else if (key == "input_h") c.train.profile.input_h = static_cast<int>(parse_int(key, value));
    else if (key == "input_w") c.train.profile.input_w = static_cast<int>(parse_int(key, value));
    // [scene]
    else if (key == "canvas_h") c.scene.canvas_h = static_cast<int>(parse_int(key, value));
    else if (key == "canvas_w") c.scene.canvas_w = static_cast<int>(parse_int(key, value));
    else if (key == "scale_min") c.scene.scale_min = parse_double(key, value);
    else if (key == "scale_max") c.scene.scale_max = parse_double(key, value);
    else if (key == "pose_jitter") c.scene.pose_jitter = parse_double(key, value);
    else if (key == "background_texture") c.scene.background_texture = parse_double(key, value);
    else if (key == "label_set") c.scene.label_set = static_cast<int>(parse_int(key, value));
    // [shift]
    else if (key == "brightness") c.shift.brightness_factor = parse_double(key, value);
    else if (key == "blur_sigma") c.shift.blur_sigma = parse_double(key, value);
    else if (key == "noise_std") c.shift.noise_std = parse_double(key, value);
    else if (key == "downscale") c.shift.downscale_factor = static_cast<int>(parse_int(key, value));
    else if (key == "motion_blur_len") c.shift.motion_blur_len = static_cast<int>(parse_int(key, value));
    else throw UsageError("unknown config key '" + key + "'");
}

}  // namespace

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file " + path.string());
    std::map<std::string, std::string> out;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[' && t.back() == ']') continue;  // sections are cosmetic
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty()) throw UsageError("config line " + std::to_string(lineno) + ": empty key");
        out[key] = value;
    }
    return out;
}

ExperimentConfig load_config(const std::map<std::string, std::string>& file_values,
                             const std::map<std::string, std::string>& flag_values) {
    ExperimentConfig cfg;
    for (const auto& [k, v] : file_values) apply_key(cfg, k, v);
    for (const auto& [k, v] : flag_values) apply_key(cfg, k, v);
    if (const char* env = std::getenv("ADAPT_PARSE_SEED")) {
        cfg.seed = static_cast<std::uint64_t>(parse_int("ADAPT_PARSE_SEED", env));
    }
    cfg.finalize();
    return cfg;
}

std::string dump_config(const ExperimentConfig& c) {
    std::ostringstream os;
    os << "[run]\n";
    os << "mode = " << run_mode_name(c.mode) << "\n";
    os << "source_dir = " << c.source_dir.string() << "\n";
    os << "target_dir = " << c.target_dir.string() << "\n";
    os << "run_dir = " << c.run_dir.string() << "\n";
    os << "checkpoint_interval = " << c.checkpoint_interval << "\n";
    os << "eval_interval = " << c.eval_interval << "\n";
    os << "seed = " << c.seed << "\n";
    os << "[data]\n";
    os << "count_source = " << c.count_source << "\n";
    os << "count_target_train = " << c.count_target_train << "\n";
    os << "count_target_test = " << c.count_target_test << "\n";
    os << "[train]\n";
    os << "iterations = " << c.train.iterations << "\n";
    os << "k_c = " << c.train.k_c << "\n";
    os << "batch_size = " << c.train.batch_size << "\n";
    os << "lr_main = " << c.train.lr_main << "\n";
    os << "lr_feature_adv = " << c.train.lr_feature_adv << "\n";
    os << "lr_label_adv = " << c.train.lr_label_adv << "\n";
    os << "adam_beta1 = " << c.train.adam_beta1 << "\n";
    os << "adam_beta2 = " << c.train.adam_beta2 << "\n";
    os << "sgd_momentum = " << c.train.sgd_momentum << "\n";
    os << "sgd_weight_decay = " << c.train.sgd_weight_decay << "\n";
    os << "equivalence_mode = " << (c.train.equivalence_mode ? "true" : "false") << "\n";
    os << "[profile]\n";
    os << "stage_channels = ";
    for (std::size_t i = 0; i < c.train.profile.stage_channels.size(); ++i) {
        os << (i ? "," : "") << c.train.profile.stage_channels[i];
    }
    os << "\n";
    os << "comp_base_channels = " << c.train.profile.comp_base_channels << "\n";
    os << "num_residual_blocks = " << c.train.profile.num_residual_blocks << "\n";
    os << "aspp_dilations = ";
    for (std::size_t i = 0; i < c.train.profile.aspp_dilations.size(); ++i) {
        os << (i ? "," : "") << c.train.profile.aspp_dilations[i];
    }
    os << "\n";
    os << "label_adv_stride2_layers = " << c.train.profile.label_adv_stride2_layers << "\n";
    os << "num_classes = " << c.train.profile.num_classes << "\n";
    os << "input_h = " << c.train.profile.input_h << "\n";
    os << "input_w = " << c.train.profile.input_w << "\n";
    os << "[scene]\n";
    os << "canvas_h = " << c.scene.canvas_h << "\n";
    os << "canvas_w = " << c.scene.canvas_w << "\n";
    os << "scale_min = " << c.scene.scale_min << "\n";
    os << "scale_max = " << c.scene.scale_max << "\n";
    os << "pose_jitter = " << c.scene.pose_jitter << "\n";
    os << "background_texture = " << c.scene.background_texture << "\n";
    os << "label_set = " << c.scene.label_set << "\n";
    os << "[shift]\n";
    os << "brightness = " << c.shift.brightness_factor << "\n";
    os << "blur_sigma = " << c.shift.blur_sigma << "\n";
    os << "noise_std = " << c.shift.noise_std << "\n";
    os << "downscale = " << c.shift.downscale_factor << "\n";
    os << "motion_blur_len = " << c.shift.motion_blur_len << "\n";
    return os.str();
}

}  // namespace adaptparse
