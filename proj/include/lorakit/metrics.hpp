#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace lorakit {

struct ConfusionMatrix {
    std::uint64_t tp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + tn + fp + fn; }
};

// Positive class is label 1. Predictions and labels must be 0/1 sequences of
// equal nonzero length.
ConfusionMatrix confusion(std::span<const int> predictions, std::span<const int> labels);

// F-beta from precision and recall; returns 0 when both are 0.
double f_beta(double precision, double recall, double beta);

// A metric whose denominator is zero is reported absent rather than as 0.
struct MetricsReport {
    std::optional<double> accuracy;
    std::optional<double> tpr;
    std::optional<double> fpr;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
    std::optional<double> f05;
};

MetricsReport report(const ConfusionMatrix& cm);

// Human-readable table (values rounded for display).
std::string render_metrics_table(const ConfusionMatrix& cm, const MetricsReport& report);
// Machine-readable line-delimited records: "name<TAB>value" at full precision,
// absent metrics rendered as the literal token "absent".
std::string render_metrics_records(const ConfusionMatrix& cm, const MetricsReport& report);

}  // namespace lorakit
