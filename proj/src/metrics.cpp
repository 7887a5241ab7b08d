#include "adaptparse/metrics.hpp"

#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace adaptparse {

std::int64_t ConfusionCounts::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

void ConfusionCounts::add(const ConfusionCounts& other) {
    if (other.num_classes != num_classes) {
        throw NumericalError("cannot accumulate confusion counts with different class counts");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

ConfusionCounts confusion_counts(const Tensor& pred, const Tensor& gt, int num_classes) {
    if (pred.dtype() != DType::U8 || gt.dtype() != DType::U8) {
        throw NumericalError("confusion_counts expects u8 label maps");
    }
    if (pred.dims() != gt.dims()) {
        throw ShapeError("confusion_counts: prediction " + dims_to_string(pred.dims()) +
                         " vs ground truth " + dims_to_string(gt.dims()));
    }
    ConfusionCounts c(num_classes);
    const auto p = pred.as<const std::uint8_t>();
    const auto g = gt.as<const std::uint8_t>();
    for (std::int64_t i = 0; i < pred.numel(); ++i) {
        const int pi = p[static_cast<std::size_t>(i)];
        const int gi = g[static_cast<std::size_t>(i)];
        if (pi >= num_classes || gi >= num_classes) {
            throw NumericalError("confusion_counts: class id " + std::to_string(std::max(pi, gi)) +
                                 " out of range (K=" + std::to_string(num_classes) + ")");
        }
        ++c.at(gi, pi);
    }
    return c;
}

MetricReport compute_metrics(const ConfusionCounts& counts, int bg_class) {
    const int K = counts.num_classes;
    const std::int64_t total = counts.total();
    if (total <= 0) throw NumericalError("compute_metrics: no pixels counted");

    std::vector<std::int64_t> gt_total(static_cast<std::size_t>(K), 0);
    std::vector<std::int64_t> pred_total(static_cast<std::size_t>(K), 0);
    std::int64_t diag = 0;
    for (int i = 0; i < K; ++i) {
        diag += counts.at(i, i);
        for (int j = 0; j < K; ++j) {
            gt_total[static_cast<std::size_t>(i)] += counts.at(i, j);
            pred_total[static_cast<std::size_t>(j)] += counts.at(i, j);
        }
    }

    MetricReport r;
    r.pixel_accuracy = static_cast<double>(static_cast<long double>(diag) / total);

    std::int64_t fg_total = 0, fg_correct = 0;
    for (int i = 0; i < K; ++i) {
        if (i == bg_class) continue;
        fg_total += gt_total[static_cast<std::size_t>(i)];
        fg_correct += counts.at(i, i);
    }
    if (fg_total > 0) {
        r.foreground_accuracy = static_cast<double>(static_cast<long double>(fg_correct) / fg_total);
    } else {
        r.foreground_defined = false;
        r.foreground_accuracy = std::numeric_limits<double>::quiet_NaN();
    }

    r.per_class_f1.assign(static_cast<std::size_t>(K), 0.0);
    long double sum_p = 0, sum_r = 0, sum_f = 0;
    int present = 0;
    for (int k = 0; k < K; ++k) {
        const std::int64_t tp = counts.at(k, k);
        const long double precision =
            pred_total[static_cast<std::size_t>(k)] > 0
                ? static_cast<long double>(tp) / pred_total[static_cast<std::size_t>(k)]
                : 0.0L;
        const long double recall =
            gt_total[static_cast<std::size_t>(k)] > 0
                ? static_cast<long double>(tp) / gt_total[static_cast<std::size_t>(k)]
                : 0.0L;
        const long double f1 =
            (precision + recall) > 0.0L ? 2.0L * precision * recall / (precision + recall) : 0.0L;
        r.per_class_f1[static_cast<std::size_t>(k)] = static_cast<double>(f1);
        if (gt_total[static_cast<std::size_t>(k)] > 0) {
            ++present;
            sum_p += precision;
            sum_r += recall;
            sum_f += f1;
        }
    }
    if (present > 0) {
        r.avg_precision = static_cast<double>(sum_p / present);
        r.avg_recall = static_cast<double>(sum_r / present);
        r.avg_f1 = static_cast<double>(sum_f / present);
    }
    return r;
}

std::string report_to_json(const MetricReport& report) {
    nlohmann::json j;
    j["pixel_accuracy"] = report.pixel_accuracy;
    if (report.foreground_defined) {
        j["foreground_accuracy"] = report.foreground_accuracy;
    } else {
        j["foreground_accuracy"] = nullptr;
    }
    j["avg_precision"] = report.avg_precision;
    j["avg_recall"] = report.avg_recall;
    j["avg_f1"] = report.avg_f1;
    for (std::size_t k = 0; k < report.per_class_f1.size(); ++k) {
        j["f1_class_" + std::to_string(k)] = report.per_class_f1[k];
    }
    return j.dump(2) + "\n";
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string report_to_csv(const MetricReport& report) {
    std::ostringstream header, row;
    header << "pixel_accuracy,foreground_accuracy,avg_precision,avg_recall,avg_f1";
    row << fmt(report.pixel_accuracy) << ','
        << (report.foreground_defined ? fmt(report.foreground_accuracy) : "undefined") << ','
        << fmt(report.avg_precision) << ',' << fmt(report.avg_recall) << ',' << fmt(report.avg_f1);
    for (std::size_t k = 0; k < report.per_class_f1.size(); ++k) {
        header << ",f1_class_" << k;
        row << ',' << fmt(report.per_class_f1[k]);
    }
    return header.str() + "\n" + row.str() + "\n";
}

std::string metrics_csv_header() {
    return "iter,pixel_accuracy,foreground_accuracy,avg_precision,avg_recall,avg_f1";
}

std::string metrics_csv_row(std::int64_t iter, const MetricReport& report) {
    std::ostringstream row;
    row << iter << ',' << fmt(report.pixel_accuracy) << ','
        << (report.foreground_defined ? fmt(report.foreground_accuracy) : "undefined") << ','
        << fmt(report.avg_precision) << ',' << fmt(report.avg_recall) << ',' << fmt(report.avg_f1);
    return row.str();
}

}  // namespace adaptparse
