#include "retriage/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "retriage/error.hpp"

namespace retriage::metrics {

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& labels, int k) {
    if (k < 1) throw ValidationError("confusion: K must be >= 1");
    if (preds.size() != labels.size())
        throw ValidationError("confusion: " + std::to_string(preds.size()) + " predictions vs " +
                              std::to_string(labels.size()) + " labels");
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= k)
            throw ValidationError("confusion: label " + std::to_string(labels[i]) +
                                  " out of range at index " + std::to_string(i));
        if (preds[i] < 0 || preds[i] >= k)
            throw ValidationError("confusion: prediction " + std::to_string(preds[i]) +
                                  " out of range at index " + std::to_string(i));
        cm.at(labels[i], preds[i]) += 1;
        cm.total += 1;
    }
    return cm;
}

double qwk(const ConfusionMatrix& cm) {
    const int k = cm.num_grades;
    if (cm.total < 1) throw MetricError("qwk: empty confusion matrix");

    std::vector<double> row(static_cast<std::size_t>(k), 0.0), col(static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            row[static_cast<std::size_t>(i)] += static_cast<double>(cm.at(i, j));
            col[static_cast<std::size_t>(j)] += static_cast<double>(cm.at(i, j));
        }

    const double n = static_cast<double>(cm.total);
    const double norm = static_cast<double>(k - 1) * (k - 1);
    double observed = 0.0, expected = 0.0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            const double w = k > 1 ? static_cast<double>(i - j) * (i - j) / norm : 0.0;
            observed += w * static_cast<double>(cm.at(i, j)) / n;
            expected += w * row[static_cast<std::size_t>(i)] * col[static_cast<std::size_t>(j)] / (n * n);
        }
    if (expected == 0.0)
        throw MetricError("qwk: chance disagreement is zero (all mass in one category)");
    return 1.0 - observed / expected;
}

double accuracy(const ConfusionMatrix& cm) {
    if (cm.total < 1) throw MetricError("accuracy: empty confusion matrix");
    std::int64_t diag = 0;
    for (int i = 0; i < cm.num_grades; ++i) diag += cm.at(i, i);
    return static_cast<double>(diag) / static_cast<double>(cm.total);
}

double ece_cumulative(const std::vector<std::vector<float>>& probs,
                      const std::vector<std::vector<float>>& targets, int bins) {
    if (bins < 1) throw ValidationError("ece: bins must be >= 1");
    if (probs.size() != targets.size())
        throw ValidationError("ece: probs/targets size mismatch");

    std::vector<double> sum_p(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> sum_t(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::int64_t> count(static_cast<std::size_t>(bins), 0);
    std::int64_t total = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i].size() != targets[i].size())
            throw ValidationError("ece: row " + std::to_string(i) + " length mismatch");
        for (std::size_t k = 0; k < probs[i].size(); ++k) {
            const double p = probs[i][k];
            const int b = std::min(static_cast<int>(p * bins), bins - 1);
            sum_p[static_cast<std::size_t>(b)] += p;
            sum_t[static_cast<std::size_t>(b)] += targets[i][k];
            count[static_cast<std::size_t>(b)] += 1;
            ++total;
        }
    }
    if (total == 0) return 0.0;
    double ece = 0.0;
    for (int b = 0; b < bins; ++b) {
        if (!count[static_cast<std::size_t>(b)]) continue;
        const double nb = static_cast<double>(count[static_cast<std::size_t>(b)]);
        ece += (nb / static_cast<double>(total)) *
               std::abs(sum_p[static_cast<std::size_t>(b)] / nb - sum_t[static_cast<std::size_t>(b)] / nb);
    }
    return ece;
}

namespace {

// Mean absolute deviation of the probabilities from the decoded grade's
// binary pattern; small values mean a confident prediction.
double pattern_proximity(const PredictionRecord& r) {
    if (r.probs.empty()) return 0.0;
    const int kb = static_cast<int>(r.probs.size());
    double acc = 0.0;
    for (int k = 0; k < kb; ++k) {
        const double pattern = r.grade >= k + 1 ? 1.0 : 0.0;
        acc += std::abs(static_cast<double>(r.probs[static_cast<std::size_t>(k)]) - pattern);
    }
    return acc / kb;
}

}  // namespace

std::vector<PredictionRecord> worst_k(std::vector<PredictionRecord> records, int k) {
    if (k < 1) throw ValidationError("worst_k: k must be >= 1");
    std::sort(records.begin(), records.end(),
              [](const PredictionRecord& a, const PredictionRecord& b) {
                  const int ea = std::abs(a.grade - a.label);
                  const int eb = std::abs(b.grade - b.label);
                  if (ea != eb) return ea > eb;
                  const double pa = pattern_proximity(a);
                  const double pb = pattern_proximity(b);
                  if (pa != pb) return pa < pb;
                  return a.id < b.id;
              });
    if (records.size() > static_cast<std::size_t>(k)) records.resize(static_cast<std::size_t>(k));
    return records;
}

double adjacency_fraction(const ConfusionMatrix& cm) {
    std::int64_t wrong = 0, adjacent = 0;
    for (int i = 0; i < cm.num_grades; ++i)
        for (int j = 0; j < cm.num_grades; ++j) {
            if (i == j) continue;
            wrong += cm.at(i, j);
            if (std::abs(i - j) == 1) adjacent += cm.at(i, j);
        }
    if (wrong == 0) throw MetricError("adjacency_fraction: no misclassifications present");
    return static_cast<double>(adjacent) / static_cast<double>(wrong);
}

MetricsReport compile_report(const std::vector<PredictionRecord>& records,
                             const std::vector<std::vector<float>>& cumulative_targets, int k,
                             int ece_bins, int worst_count) {
    std::vector<int> preds, labels;
    std::vector<std::vector<float>> probs;
    preds.reserve(records.size());
    labels.reserve(records.size());
    probs.reserve(records.size());
    for (const auto& r : records) {
        preds.push_back(r.grade);
        labels.push_back(r.label);
        probs.push_back(r.probs);
    }

    const ConfusionMatrix cm = confusion(preds, labels, k);
    MetricsReport report;
    report.qwk = qwk(cm);
    report.accuracy = accuracy(cm);
    report.per_class_recall.assign(static_cast<std::size_t>(k), std::nullopt);
    for (int i = 0; i < k; ++i) {
        std::int64_t row = 0;
        for (int j = 0; j < k; ++j) row += cm.at(i, j);
        if (row > 0)
            report.per_class_recall[static_cast<std::size_t>(i)] =
                static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
    }
    report.ece = ece_cumulative(probs, cumulative_targets, ece_bins);
    try {
        report.adjacency = adjacency_fraction(cm);
    } catch (const MetricError&) {
        report.adjacency = std::nullopt;  // no errors: not applicable
    }
    report.worst = worst_k(records, worst_count);
    return report;
}

}  // namespace retriage::metrics
