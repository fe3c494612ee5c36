#pragma once

#include <span>
#include <vector>

#include "retriage/autodiff.hpp"
#include "retriage/rng.hpp"

namespace retriage::coral {

/// Ordinal head: one shared projection g(x) = weight . features plus K-1
/// rank biases. logit_k = g(x) + b_k.
struct CoralHead {
    autodiff::Tensor weight;  // [feature_dim, 1]
    autodiff::Tensor biases;  // [1, K-1]
    int num_grades = 5;       // K

    void validate() const;  // throws ValidationError
};

/// Head with fan-in-scaled weight init and evenly descending bias init
/// (+1.5 .. -1.5), all trainable.
CoralHead make_head(int feature_dim, int num_grades, Rng& rng);

/// True when the learned rank biases are non-increasing, which guarantees
/// rank-consistent probabilities. Reported as a post-training diagnostic.
bool biases_sorted(const CoralHead& head);

/// Binary cumulative encoding of a grade: t_k = 1 exactly when y >= k,
/// k = 1..K-1. Throws ValidationError when y is outside 0..K-1.
std::vector<float> cumulative_targets(int y, int num_grades);

/// t' = t * (1 - epsilon) + epsilon / 2.
std::vector<float> smooth(const std::vector<float>& targets, double epsilon);

/// features [N,F] -> logits [N,K-1].
autodiff::Tensor coral_logits(const autodiff::Tensor& features, const CoralHead& head);

/// Mean over the batch of the summed cumulative binary cross-entropies,
/// -sum_k [t' log sig(l_k) + (1-t') log sig(-l_k)], built from autodiff
/// primitives. The sig(-l) factorization keeps log-sigmoid finite for any
/// logit a float32 training run can produce.
autodiff::Tensor coral_loss(const autodiff::Tensor& logits,
                            const autodiff::Tensor& smoothed_targets);

struct Decoded {
    int grade = 0;
    std::vector<float> probs;  // sigma(logit_k), length K-1
};

/// probs_k = sigma(logit_k); grade counts probabilities strictly above 0.5
/// (a probability of exactly 0.5 does not count).
Decoded decode(std::span<const float> logits);

/// Positive scalar temperature dividing the cumulative logits.
struct Temperature {
    double value = 1.0;
};

/// Mean cumulative binary cross-entropy of logits/T against unsmoothed
/// binary targets; the objective fit_temperature minimizes.
double cumulative_bce(const std::vector<std::vector<float>>& logits,
                      const std::vector<std::vector<float>>& targets, double temperature);

/// Golden-section search for the T in [0.05, 20] minimizing
/// cumulative_bce, to a bracket width below 1e-4. Decoded grades are
/// unchanged for any positive T. Throws ValidationError on an empty set.
Temperature fit_temperature(const std::vector<std::vector<float>>& val_logits,
                            const std::vector<std::vector<float>>& val_targets);

std::vector<float> apply_temperature(std::span<const float> logits, double temperature);

}  // namespace retriage::coral
