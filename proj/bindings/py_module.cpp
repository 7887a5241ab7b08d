// Python surface for the cross-domain parsing stack: dataset generation,
// training, evaluation, inference, metrics and the gradient-check oracle.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "adaptparse/experiment.hpp"
#include "adaptparse/grad_check.hpp"
#include "adaptparse/tensor_io.hpp"

namespace py = pybind11;
namespace ap = adaptparse;

namespace {

ap::Tensor tensor_from_array(const py::array& arr) {
    py::array a = py::array::ensure(arr, py::array::c_style | py::array::forcecast);
    std::vector<std::int64_t> dims(a.ndim());
    for (py::ssize_t i = 0; i < a.ndim(); ++i) dims[static_cast<std::size_t>(i)] = a.shape(i);
    ap::DType dtype;
    if (py::isinstance<py::array_t<float>>(a)) dtype = ap::DType::F32;
    else if (py::isinstance<py::array_t<double>>(a)) dtype = ap::DType::F64;
    else if (py::isinstance<py::array_t<std::uint8_t>>(a)) dtype = ap::DType::U8;
    else throw ap::NumericalError("array dtype must be float32, float64 or uint8");
    ap::Tensor t(dims, dtype);
    std::memcpy(t.bytes().data(), a.data(), t.bytes().size());
    return t;
}

py::array tensor_to_array(const ap::Tensor& t) {
    std::vector<py::ssize_t> shape(t.dims().begin(), t.dims().end());
    switch (t.dtype()) {
        case ap::DType::F32: {
            py::array_t<float> a(shape);
            std::memcpy(a.mutable_data(), t.bytes().data(), t.bytes().size());
            return a;
        }
        case ap::DType::F64: {
            py::array_t<double> a(shape);
            std::memcpy(a.mutable_data(), t.bytes().data(), t.bytes().size());
            return a;
        }
        case ap::DType::U8: {
            py::array_t<std::uint8_t> a(shape);
            std::memcpy(a.mutable_data(), t.bytes().data(), t.bytes().size());
            return a;
        }
    }
    throw ap::NumericalError("unknown dtype");
}

std::map<std::string, std::string> to_kv(const py::dict& d) {
    std::map<std::string, std::string> out;
    for (const auto& item : d) {
        out[py::cast<std::string>(py::str(item.first))] = py::cast<std::string>(py::str(item.second));
    }
    return out;
}

ap::ExperimentConfig config_from_dict(const py::dict& d) {
    return ap::load_config(to_kv(d), {});
}

py::dict report_to_dict(const ap::MetricReport& r) {
    py::dict out;
    out["pixel_accuracy"] = r.pixel_accuracy;
    if (r.foreground_defined) {
        out["foreground_accuracy"] = r.foreground_accuracy;
    } else {
        out["foreground_accuracy"] = py::none();
    }
    out["avg_precision"] = r.avg_precision;
    out["avg_recall"] = r.avg_recall;
    out["avg_f1"] = r.avg_f1;
    for (std::size_t k = 0; k < r.per_class_f1.size(); ++k) {
        out[py::str("f1_class_" + std::to_string(k))] = r.per_class_f1[k];
    }
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Cross-domain human-figure parsing: adversarial feature/label adaptation at desk scale";
    m.attr("__version__") = ap::kVersion;

    m.def("read_tensor", [](const std::filesystem::path& p) { return tensor_to_array(ap::tensor_read(p)); },
          py::arg("path"));
    m.def("write_tensor",
          [](const py::array& a, const std::filesystem::path& p) { ap::tensor_write(tensor_from_array(a), p); },
          py::arg("array"), py::arg("path"));

    m.def(
        "generate_scene",
        [](const py::dict& config, std::int64_t index) {
            const ap::ExperimentConfig cfg = config_from_dict(config);
            const ap::DomainSample s = ap::generate_scene(cfg.scene, index);
            return py::make_tuple(tensor_to_array(s.image), tensor_to_array(*s.labels));
        },
        py::arg("config") = py::dict(), py::arg("index") = 0,
        "Render one scene; returns (image [3,H,W] f32, labels [H,W] u8).");

    m.def(
        "apply_domain_shift",
        [](const py::array& image, const py::dict& config, std::uint64_t seed) {
            const ap::ExperimentConfig cfg = config_from_dict(config);
            return tensor_to_array(ap::apply_domain_shift(tensor_from_array(image), cfg.shift, seed));
        },
        py::arg("image"), py::arg("config") = py::dict(), py::arg("seed") = 0);

    m.def(
        "gen_data",
        [](const py::dict& config, bool force) {
            ap::generate_datasets(config_from_dict(config), force);
        },
        py::arg("config"), py::arg("force") = false);

    m.def(
        "train",
        [](const py::dict& config, const std::filesystem::path& resume) {
            const ap::ExperimentConfig cfg = config_from_dict(config);
            const ap::RunResult r = ap::run_training(cfg, nullptr, resume);
            py::list history;
            for (const auto& point : r.history) {
                py::dict entry = report_to_dict(point.report);
                entry["iter"] = point.iter;
                history.append(entry);
            }
            py::dict out;
            out["history"] = history;
            out["final_checkpoint"] = r.final_checkpoint;
            return out;
        },
        py::arg("config"), py::arg("resume") = std::filesystem::path(),
        "Run the alternating training schedule; returns the eval history.");

    m.def(
        "evaluate",
        [](const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir) {
            ap::LoadedParser parser = ap::load_parser(checkpoint);
            const ap::Dataset ds = ap::Dataset::load(data_dir);
            return report_to_dict(
                ap::evaluate_parser(parser.extractor, parser.labeler, ds, parser.profile.num_classes));
        },
        py::arg("checkpoint"), py::arg("data_dir"));

    m.def(
        "infer",
        [](const std::filesystem::path& checkpoint, const py::array& image, bool assert_purity) {
            ap::LoadedParser parser = ap::load_parser(checkpoint);
            const ap::Tensor img = tensor_from_array(image);
            const ap::ParseResult parsed = ap::forward_parse(parser.extractor, parser.labeler, img);
            if (assert_purity) {
                for (const auto& rec : parsed.trace) {
                    if (rec.tag == "C" || rec.tag == "A_f" || rec.tag == "A_l") {
                        throw ap::NumericalError("inference purity violated: tag " + rec.tag);
                    }
                }
            }
            const ap::Tensor small = ap::argmax_channels(parsed.probs);
            return tensor_to_array(ap::upsample_labels(small, ap::ScaleProfile::extractor_stride(),
                                                       img.dim(1), img.dim(2)));
        },
        py::arg("checkpoint"), py::arg("image"), py::arg("assert_purity") = false,
        "Predict a label map for one [3,H,W] image; returns u8 [1,H,W].");

    m.def(
        "compute_metrics",
        [](const py::array& pred, const py::array& gt, int num_classes, int bg_class) {
            const ap::ConfusionCounts counts =
                ap::confusion_counts(tensor_from_array(pred), tensor_from_array(gt), num_classes);
            return report_to_dict(ap::compute_metrics(counts, bg_class));
        },
        py::arg("pred"), py::arg("gt"), py::arg("num_classes"), py::arg("bg_class") = 0);

    m.def(
        "pixelwise_cross_entropy",
        [](const py::array& scores, const py::array& labels) {
            ap::Tape tape(ap::DType::F64);
            const ap::Tensor s = tensor_from_array(scores);
            const ap::Tensor l = tensor_from_array(labels);
            const auto v = tape.cross_entropy_mean(tape.leaf(s), l, std::nullopt);
            return tape.value_of(v).get(0);
        },
        py::arg("scores"), py::arg("labels"),
        "Mean pixel-wise cross entropy of f64 scores [N,K,h,w] against u8 labels [N,h,w].");

    m.def(
        "grad_check_networks",
        [](const py::dict& config) {
            const ap::ExperimentConfig cfg = config_from_dict(config);
            const ap::ScaleProfile& p = cfg.train.profile;
            const std::int64_t h = p.input_h, w = p.input_w;
            const std::int64_t fh = (h + 7) / 8, fw = (w + 7) / 8;
            const std::int64_t e1h = (h + 1) / 2, e1w = (w + 1) / 2;
            struct Case {
                const char* label;
                ap::NetworkInstance net;
                std::vector<std::int64_t> dims;
            };
            std::vector<Case> cases;
            cases.push_back({"E", ap::build_extractor(p, ap::DType::F64, cfg.seed), {2, 3, h, w}});
            cases.push_back({"C", ap::build_compensator(p, ap::DType::F64, cfg.seed),
                             {2, p.stage_channels[0], e1h, e1w}});
            cases.push_back({"L", ap::build_labeler(p, ap::DType::F64, cfg.seed),
                             {2, p.stage_channels[4], fh, fw}});
            cases.push_back({"A_f", ap::build_feature_adversary(p, ap::DType::F64, cfg.seed),
                             {2, p.stage_channels[4], fh, fw}});
            cases.push_back({"A_l", ap::build_label_adversary(p, ap::DType::F64, cfg.seed),
                             {2, p.num_classes, fh, fw}});
            py::dict out;
            for (auto& c : cases) {
                ap::Rng rng(ap::derive_seed(cfg.seed, c.label));
                ap::Tensor input(c.dims, ap::DType::F64);
                for (std::int64_t i = 0; i < input.numel(); ++i) input.set(i, rng.uniform(0.05, 1.0));
                auto params = c.net.parameters();
                ap::NetworkInstance* net = &c.net;
                ap::GradCheckOptions opts;
                opts.seed = ap::derive_seed(cfg.seed, c.label);
                const auto report = ap::grad_check(
                    [net, &input](ap::Tape& tape) {
                        return tape.half_mse_to_const(
                            net->forward(tape, tape.leaf(input), true, false), 0.25);
                    },
                    params, opts);
                py::dict entry;
                entry["pass"] = report.pass;
                entry["max_rel_error"] = report.max_rel_error;
                entry["checked"] = report.checked;
                entry["skipped"] = report.skipped;
                out[c.label] = entry;
            }
            return out;
        },
        py::arg("config") = py::dict());

    py::register_exception<ap::UsageError>(m, "AdaptUsageError", PyExc_ValueError);
    py::register_exception<ap::IoError>(m, "AdaptIoError", PyExc_IOError);
    py::register_exception<ap::NumericalError>(m, "AdaptNumericalError", PyExc_ArithmeticError);
}
