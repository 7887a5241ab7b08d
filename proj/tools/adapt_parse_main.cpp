// adapt_parse: dataset generation, adaptation training, evaluation,
// inference and gradient checking for the cross-domain parsing stack.

#include <cstring>
#include <iostream>
#include <map>
#include <set>
#include <string>

#include "adaptparse/experiment.hpp"
#include "adaptparse/grad_check.hpp"
#include "adaptparse/tensor_io.hpp"
#include "adaptparse/viz.hpp"

namespace ap = adaptparse;

namespace {

constexpr const char* kUsage = R"(usage: adapt_parse <command> [--key value ...]

commands:
  gen-data    render the two-domain benchmark (source, target train/test)
  train       run the alternating adaptation schedule (or a baseline mode)
  eval        score a checkpoint on a labeled dataset
  infer       parse one image with a checkpoint
  gradcheck   finite-difference check of all five networks

common flags:
  --config <file>        key = value config file ([section] headers allowed)
  --<key> <value>        override any config key (flag wins over file)

command flags:
  gen-data: --force
  train:    --resume <checkpoint>
  eval:     --checkpoint <file> --data <dir> [--out-json f] [--out-csv f]
  infer:    --checkpoint <file> --image <file.tsr> --out <file.tsr>
            [--viz <file.bmp>] [--assert-purity]
  gradcheck: [--inject-grad-fault] plus profile keys

ADAPT_PARSE_SEED overrides the configured seed.
exit codes: 0 ok, 1 usage error, 2 numerical failure, 3 I/O failure
)";

struct Args {
    std::map<std::string, std::string> values;
    std::set<std::string> flags;

    bool has(const std::string& k) const { return values.count(k) || flags.count(k); }
    std::string get(const std::string& k, const std::string& fallback = "") const {
        const auto it = values.find(k);
        return it == values.end() ? fallback : it->second;
    }
    std::string require(const std::string& k) const {
        const auto it = values.find(k);
        if (it == values.end()) throw ap::UsageError("missing required flag --" + k);
        return it->second;
    }
};

const std::set<std::string> kBooleanFlags = {"force", "assert-purity", "inject-grad-fault"};

Args parse_args(int argc, char** argv, int start) {
    Args out;
    for (int i = start; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg.rfind("--", 0) != 0 || arg.size() <= 2) {
            throw ap::UsageError("unexpected argument '" + arg + "' (expected --key value)");
        }
        const std::string key = arg.substr(2);
        if (kBooleanFlags.count(key)) {
            out.flags.insert(key);
        } else {
            if (i + 1 >= argc) throw ap::UsageError("flag --" + key + " needs a value");
            out.values[key] = argv[++i];
        }
    }
    return out;
}

// Pulls command-specific keys out, leaving only config overrides.
std::map<std::string, std::string> config_overrides(const Args& args,
                                                    const std::set<std::string>& own_keys) {
    std::map<std::string, std::string> out;
    for (const auto& [k, v] : args.values) {
        if (k == "config" || own_keys.count(k)) continue;
        out[k] = v;
    }
    return out;
}

ap::ExperimentConfig build_config(const Args& args, const std::set<std::string>& own_keys) {
    std::map<std::string, std::string> file_values;
    if (args.values.count("config")) {
        file_values = ap::parse_config_file(args.get("config"));
    }
    return ap::load_config(file_values, config_overrides(args, own_keys));
}

int cmd_gen_data(const Args& args) {
    const ap::ExperimentConfig cfg = build_config(args, {});
    ap::generate_datasets(cfg, args.has("force"));
    std::cout << "wrote " << cfg.count_source << " source / " << cfg.count_target_train
              << " target-train / " << cfg.count_target_test << " target-test samples\n";
    return 0;
}

int cmd_train(const Args& args) {
    const ap::ExperimentConfig cfg = build_config(args, {"resume"});
    const std::filesystem::path resume = args.get("resume");
    const ap::RunResult result = ap::run_training(cfg, &std::cout, resume);
    std::cout << "finished " << cfg.train.iterations << " iterations, checkpoint "
              << result.final_checkpoint.string() << "\n";
    return 0;
}

int cmd_eval(const Args& args) {
    const std::filesystem::path ckpt = args.require("checkpoint");
    const std::filesystem::path data_dir = args.require("data");
    ap::LoadedParser parser = ap::load_parser(ckpt);
    const ap::Dataset dataset = ap::Dataset::load(data_dir);
    if (!dataset.fully_labeled()) {
        throw ap::UsageError("dataset " + data_dir.string() +
                             " is unlabeled; evaluation needs ground truth label maps");
    }
    const ap::MetricReport report =
        ap::evaluate_parser(parser.extractor, parser.labeler, dataset, parser.profile.num_classes);
    const std::string json = ap::report_to_json(report);
    const std::string csv = ap::report_to_csv(report);
    if (args.values.count("out-json")) ap::write_file_atomic(args.get("out-json"), json);
    if (args.values.count("out-csv")) ap::write_file_atomic(args.get("out-csv"), csv);
    std::cout << json;
    return 0;
}

int cmd_infer(const Args& args) {
    const std::filesystem::path ckpt = args.require("checkpoint");
    const std::filesystem::path image_path = args.require("image");
    const std::filesystem::path out_path = args.require("out");
    ap::LoadedParser parser = ap::load_parser(ckpt);
    const ap::Tensor image = ap::tensor_read(image_path);
    if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != parser.profile.input_h ||
        image.dim(2) != parser.profile.input_w) {
        throw ap::ShapeError("image dims " + ap::dims_to_string(image.dims()) + " do not match the " +
                             "checkpoint profile (expected [3x" +
                             std::to_string(parser.profile.input_h) + "x" +
                             std::to_string(parser.profile.input_w) + "])");
    }
    const ap::ParseResult parsed = ap::forward_parse(parser.extractor, parser.labeler, image);
    if (args.has("assert-purity")) {
        for (const auto& rec : parsed.trace) {
            if (rec.tag == "C" || rec.tag == "A_f" || rec.tag == "A_l") {
                throw ap::NumericalError("inference purity violated: primitive '" +
                                         std::string(rec.op) + "' ran under tag " + rec.tag);
            }
        }
    }
    const ap::Tensor pred_small = ap::argmax_channels(parsed.probs);
    ap::Tensor pred_batch = ap::upsample_labels(pred_small, ap::ScaleProfile::extractor_stride(),
                                                image.dim(1), image.dim(2));
    ap::Tensor pred({image.dim(1), image.dim(2)}, ap::DType::U8);
    std::copy(pred_batch.bytes().begin(), pred_batch.bytes().end(), pred.bytes().begin());
    ap::tensor_write(pred, out_path);
    if (args.values.count("viz")) ap::write_label_bmp(pred, args.get("viz"));
    std::cout << "wrote " << out_path.string() << "\n";
    return 0;
}

int cmd_gradcheck(const Args& args) {
    ap::ExperimentConfig cfg = build_config(args, {});
    const ap::ScaleProfile& profile = cfg.train.profile;
    const bool inject_fault = args.has("inject-grad-fault");
    const std::uint64_t seed = cfg.seed;

    struct NetCase {
        const char* label;
        ap::NetworkInstance net;
        std::vector<std::int64_t> input_dims;
    };
    const std::int64_t h = profile.input_h, w = profile.input_w;
    // Feature-space spatial extent at stride 8 (ceil chain).
    const std::int64_t fh = (h + 7) / 8, fw = (w + 7) / 8;
    const std::int64_t e1h = (h + 1) / 2, e1w = (w + 1) / 2;
    std::vector<NetCase> cases;
    cases.push_back({"E", ap::build_extractor(profile, ap::DType::F64, seed), {2, 3, h, w}});
    cases.push_back(
        {"C", ap::build_compensator(profile, ap::DType::F64, seed), {2, profile.stage_channels[0], e1h, e1w}});
    cases.push_back(
        {"L", ap::build_labeler(profile, ap::DType::F64, seed), {2, profile.stage_channels[4], fh, fw}});
    cases.push_back({"A_f", ap::build_feature_adversary(profile, ap::DType::F64, seed),
                     {2, profile.stage_channels[4], fh, fw}});
    cases.push_back({"A_l", ap::build_label_adversary(profile, ap::DType::F64, seed),
                     {2, profile.num_classes, fh, fw}});

    bool all_pass = true;
    for (auto& c : cases) {
        ap::Rng rng(ap::derive_seed(seed, c.label));
        ap::Tensor input(c.input_dims, ap::DType::F64);
        for (std::int64_t i = 0; i < input.numel(); ++i) input.set(i, rng.uniform(0.05, 1.0));
        auto params = c.net.parameters();
        ap::NetworkInstance* net = &c.net;
        const bool fault = inject_fault;
        const auto build = [net, &input, fault](ap::Tape& tape) {
            ap::Tape::Value x = tape.leaf(input);
            ap::Tape::Value y = net->forward(tape, x, /*trainable=*/true, /*update_stats=*/false);
            if (fault) y = tape.grad_scale(y, 1.01);
            return tape.half_mse_to_const(y, 0.25);
        };
        ap::GradCheckOptions opts;
        opts.seed = ap::derive_seed(seed, c.label);
        const ap::GradCheckReport report = ap::grad_check(build, params, opts);
        all_pass = all_pass && report.pass;
        std::cout << "[" << (report.pass ? "PASS" : "FAIL") << "] " << c.label
                  << ": max_rel_error=" << report.max_rel_error << " checked=" << report.checked
                  << " skipped=" << report.skipped << "\n";
        for (const auto& f : report.failures) std::cout << "       " << f << "\n";
    }
    if (!all_pass) throw ap::NumericalError("gradient check failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        if (argc < 2) {
            std::cerr << kUsage;
            return 1;
        }
        const std::string command = argv[1];
        if (command == "--help" || command == "-h" || command == "help") {
            std::cout << kUsage;
            return 0;
        }
        const Args args = parse_args(argc, argv, 2);
        if (command == "gen-data") return cmd_gen_data(args);
        if (command == "train") return cmd_train(args);
        if (command == "eval") return cmd_eval(args);
        if (command == "infer") return cmd_infer(args);
        if (command == "gradcheck") return cmd_gradcheck(args);
        std::cerr << "unknown command '" << command << "'\n" << kUsage;
        return 1;
    } catch (const ap::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const ap::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 3;
    } catch (const ap::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
