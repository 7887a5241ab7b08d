#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adaptparse/tensor.hpp"

namespace adaptparse {

/// count(i, j) = pixels with ground-truth class i predicted as class j.
struct ConfusionCounts {
    int num_classes = 0;
    std::vector<std::int64_t> counts;  // row-major K x K

    explicit ConfusionCounts(int k) : num_classes(k), counts(static_cast<std::size_t>(k) * k, 0) {}
    std::int64_t& at(int gt, int pred) { return counts[static_cast<std::size_t>(gt) * num_classes + pred]; }
    std::int64_t at(int gt, int pred) const {
        return counts[static_cast<std::size_t>(gt) * num_classes + pred];
    }
    std::int64_t total() const;
    void add(const ConfusionCounts& other);
};

ConfusionCounts confusion_counts(const Tensor& pred, const Tensor& gt, int num_classes);

struct MetricReport {
    double pixel_accuracy = 0.0;
    /// Undefined (and flagged) when the ground truth has no foreground.
    double foreground_accuracy = 0.0;
    bool foreground_defined = true;
    double avg_precision = 0.0;
    double avg_recall = 0.0;
    double avg_f1 = 0.0;
    std::vector<double> per_class_f1;  // K entries; 0 when precision+recall is 0
};

/// Macro averages run over classes present in the ground truth; internal
/// arithmetic uses long double so ratios of small integer counts land on the
/// correctly rounded double.
MetricReport compute_metrics(const ConfusionCounts& counts, int bg_class);

/// Flat key/value report: pixel_accuracy, foreground_accuracy, avg_precision,
/// avg_recall, avg_f1, f1_class_<k>. JSON document and a one-row CSV.
std::string report_to_json(const MetricReport& report);
std::string report_to_csv(const MetricReport& report);

/// Header of the training-time metric history CSV.
std::string metrics_csv_header();
std::string metrics_csv_row(std::int64_t iter, const MetricReport& report);

}  // namespace adaptparse
