#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace retriage::metrics {

/// K x K count grid, rows = true grade, columns = predicted grade.
struct ConfusionMatrix {
    int num_grades = 0;
    std::vector<std::int64_t> cells;  // row-major, K*K
    std::int64_t total = 0;

    explicit ConfusionMatrix(int k = 0)
        : num_grades(k), cells(static_cast<std::size_t>(k) * k, 0) {}

    std::int64_t& at(int label, int pred) {
        return cells[static_cast<std::size_t>(label) * num_grades + pred];
    }
    std::int64_t at(int label, int pred) const {
        return cells[static_cast<std::size_t>(label) * num_grades + pred];
    }
};

/// Count (label, prediction) pairs. Throws ValidationError naming the
/// first out-of-range index.
ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels, int k);

/// Quadratic weighted kappa with weights (i-j)^2/(K-1)^2. Throws
/// MetricError when empty or when the chance-disagreement denominator is
/// zero (all marginal mass in one category).
double qwk(const ConfusionMatrix& cm);

/// trace / n. Throws MetricError on an empty matrix.
double accuracy(const ConfusionMatrix& cm);

/// Expected calibration error pooled over all (sample, k) cumulative
/// binary tasks, with `bins` equal-width probability bins.
double ece_cumulative(const std::vector<std::vector<float>>& probs,
                      const std::vector<std::vector<float>>& targets, int bins);

struct PredictionRecord {
    std::string id;
    int label = 0;
    int grade = 0;                // decoded prediction
    std::vector<float> probs;     // cumulative probabilities
};

/// First min(k, n) records ordered by |grade - label| descending, then by
/// mean |prob - decoded pattern| ascending (confident mistakes first),
/// then by id ascending. A deterministic total order.
std::vector<PredictionRecord> worst_k(std::vector<PredictionRecord> records, int k);

/// Share of misclassified samples landing on an immediately neighboring
/// grade. Throws MetricError when the matrix holds no errors.
double adjacency_fraction(const ConfusionMatrix& cm);

struct MetricsReport {
    double qwk = 0.0;
    double accuracy = 0.0;
    std::vector<std::optional<double>> per_class_recall;  // null for absent classes
    double ece = 0.0;
    std::optional<double> adjacency;  // null when no errors occurred
    std::vector<PredictionRecord> worst;
};

/// Assemble the full report from per-sample records. Undefined adjacency
/// is reported as not-applicable rather than raised.
MetricsReport compile_report(const std::vector<PredictionRecord>& records,
                             const std::vector<std::vector<float>>& cumulative_targets, int k,
                             int ece_bins, int worst_count);

}  // namespace retriage::metrics
