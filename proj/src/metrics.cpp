#include "lorakit/metrics.hpp"

#include <cstdio>
#include <sstream>

#include "lorakit/errors.hpp"

namespace lorakit {

ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) {
        throw ContractError("confusion: " + std::to_string(predictions.size()) +
                            " predictions vs " + std::to_string(labels.size()) + " labels");
    }
    if (predictions.empty()) throw ContractError("confusion: empty input");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        int p = predictions[i], y = labels[i];
        if ((p != 0 && p != 1) || (y != 0 && y != 1)) {
            throw DataError("confusion: entries must be 0 or 1, got prediction " +
                            std::to_string(p) + " / label " + std::to_string(y) + " at index " +
                            std::to_string(i));
        }
        if (y == 1) {
            (p == 1 ? cm.tp : cm.fn) += 1;
        } else {
            (p == 1 ? cm.fp : cm.tn) += 1;
        }
    }
    return cm;
}

double f_beta(double precision, double recall, double beta) {
    if (precision < 0.0 || precision > 1.0 || recall < 0.0 || recall > 1.0) {
        throw ContractError("f_beta: precision and recall must lie in [0, 1]");
    }
    if (beta <= 0.0) throw ConfigError("f_beta: beta must be positive");
    const double b2 = beta * beta;
    const double denom = b2 * precision + recall;
    if (denom == 0.0) return 0.0;
    return (1.0 + b2) * precision * recall / denom;
}

MetricsReport report(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw ContractError("report: empty confusion matrix");
    MetricsReport r;
    auto ratio = [](std::uint64_t num, std::uint64_t den) -> std::optional<double> {
        if (den == 0) return std::nullopt;
        return static_cast<double>(num) / static_cast<double>(den);
    };
    r.accuracy = ratio(cm.tp + cm.tn, cm.total());
    r.tpr = ratio(cm.tp, cm.tp + cm.fn);
    r.fpr = ratio(cm.fp, cm.fp + cm.tn);
    r.precision = ratio(cm.tp, cm.tp + cm.fp);
    r.recall = r.tpr;
    if (r.precision && r.recall) {
        r.f1 = f_beta(*r.precision, *r.recall, 1.0);
        r.f05 = f_beta(*r.precision, *r.recall, 0.5);
    }
    return r;
}

namespace {

std::string rounded(const std::optional<double>& v) {
    if (!v) return "absent";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return buf;
}

std::string full(const std::optional<double>& v) {
    if (!v) return "absent";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", *v);
    return buf;
}

}  // namespace

std::string render_metrics_table(const ConfusionMatrix& cm, const MetricsReport& report) {
    std::ostringstream out;
    out << "confusion  TP=" << cm.tp << " TN=" << cm.tn << " FP=" << cm.fp << " FN=" << cm.fn
        << "\n";
    out << "accuracy   " << rounded(report.accuracy) << "\n";
    out << "tpr        " << rounded(report.tpr) << "\n";
    out << "fpr        " << rounded(report.fpr) << "\n";
    out << "precision  " << rounded(report.precision) << "\n";
    out << "recall     " << rounded(report.recall) << "\n";
    out << "f1         " << rounded(report.f1) << "\n";
    out << "f0.5       " << rounded(report.f05) << "\n";
    return out.str();
}

std::string render_metrics_records(const ConfusionMatrix& cm, const MetricsReport& report) {
    std::ostringstream out;
    out << "tp\t" << cm.tp << "\ntn\t" << cm.tn << "\nfp\t" << cm.fp << "\nfn\t" << cm.fn << "\n";
    out << "accuracy\t" << full(report.accuracy) << "\n";
    out << "tpr\t" << full(report.tpr) << "\n";
    out << "fpr\t" << full(report.fpr) << "\n";
    out << "precision\t" << full(report.precision) << "\n";
    out << "recall\t" << full(report.recall) << "\n";
    out << "f1\t" << full(report.f1) << "\n";
    out << "f0.5\t" << full(report.f05) << "\n";
    return out.str();
}

}  // namespace lorakit
