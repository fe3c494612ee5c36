#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "retriage/augment.hpp"
#include "retriage/autodiff.hpp"
#include "retriage/coral.hpp"
#include "retriage/dataset.hpp"
#include "retriage/nn.hpp"
#include "retriage/preproc.hpp"

namespace retriage::train {

enum class HeadKind { Coral, Softmax };

struct TrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 32;
    int epochs = 10;
    int patience = 3;
    double smoothing_epsilon = 0.05;
    std::uint64_t seed = 0;
    HeadKind head = HeadKind::Coral;

    void validate() const;  // throws ValidationError
};

/// K-way linear layer for the no-ordinal-head comparison.
struct SoftmaxHead {
    autodiff::Tensor weight;  // [feature_dim, K]
    autodiff::Tensor bias;    // [1, K]
};

SoftmaxHead make_softmax_head(int feature_dim, int num_grades, Rng& rng);

/// Mean softmax cross-entropy over the batch, composed from autodiff
/// primitives (row maxima enter as constants, so the forward value is
/// overflow-safe and the gradient exact).
autodiff::Tensor softmax_cross_entropy(const autodiff::Tensor& logits,
                                       const std::vector<int>& labels);

/// Inverse-frequency class weights: w_c = N / (K_present * counts[c]);
/// absent classes get weight 0. Throws ValidationError when every count
/// is zero. Sampling with these weights draws classes uniformly.
std::vector<double> class_weights(const std::vector<std::int64_t>& counts);

/// n_draws indices with replacement, probability proportional to weight.
std::vector<std::size_t> weighted_sample(const std::vector<double>& weights,
                                         std::size_t n_draws, Rng& rng);

struct AdamState {
    std::map<std::string, std::pair<std::vector<float>, std::vector<float>>> moments;  // m, v
    std::int64_t step = 0;
};

/// One Adam update over every requires_grad tensor in `params`, in name
/// order. Missing gradients count as zero. Throws Error naming the first
/// parameter with a non-finite gradient.
void adam_step(std::map<std::string, autodiff::Tensor>& params, AdamState& state,
               const TrainConfig& cfg);

/// Best-model selection with patience: stop after `patience` consecutive
/// epochs without a strictly better validation QWK.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    /// Observe one epoch's validation QWK; returns true when training
    /// should stop after this epoch.
    bool observe(int epoch, double qwk) {
        if (best_epoch_ == 0 || qwk > best_qwk_) {
            best_epoch_ = epoch;
            best_qwk_ = qwk;
            stale_ = 0;
            return false;
        }
        return ++stale_ >= patience_;
    }

    bool improved_at(int epoch) const { return epoch == best_epoch_; }
    int best_epoch() const { return best_epoch_; }
    double best_qwk() const { return best_qwk_; }

private:
    int patience_;
    int best_epoch_ = 0;
    double best_qwk_ = 0.0;
    int stale_ = 0;
};

/// Population mean and standard deviation (divide by n, not n-1).
std::pair<double, double> population_mean_std(const std::vector<double>& values);

struct EpochStats {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_qwk = 0.0;
    double val_accuracy = 0.0;
};

struct FoldResult {
    int fold = 0;
    int best_epoch = 0;  // 1-based
    double best_qwk = 0.0;
    double best_accuracy = 0.0;
    std::vector<EpochStats> trace;
    nn::Params best_params;       // deep snapshot from the best epoch
    coral::CoralHead best_coral;  // populated when head == Coral
    SoftmaxHead best_softmax;     // populated when head == Softmax
    bool coral_biases_sorted = true;
    // Validation outcome at the best epoch:
    std::vector<std::string> val_ids;
    std::vector<int> val_labels;
    std::vector<int> val_preds;
    std::vector<std::vector<float>> val_logits;
};

/// Everything the training loop needs besides the optimizer settings.
struct TrainSetup {
    nn::BackboneConfig backbone;
    preproc::PreprocConfig preproc;
    augment::AugmentPolicy augment;
    int num_grades = 5;
    std::string image_dir;  // where path-only samples resolve their pixels
};

/// One weighted-sampling epoch loop with smoothed CORAL loss (or softmax
/// cross-entropy), Adam updates, per-epoch validation QWK and early
/// stopping with best-model selection.
FoldResult train_fold(const dataset::Manifest& train_set, const dataset::Manifest& val_set,
                      const TrainSetup& setup, const TrainConfig& cfg);

struct CvSummary {
    double qwk_mean = 0.0;
    double qwk_std = 0.0;  // population std over folds
    double accuracy_mean = 0.0;
    double accuracy_std = 0.0;
    double mae = 0.0;  // pooled validation mean absolute grade error
    std::vector<FoldResult> folds;
};

/// Stratified k-fold cross-validation; per-fold seeds derive from
/// cfg.seed, so two heads trained from the same config see identical
/// folds and identical backbone initializations.
CvSummary cross_validate(const dataset::Manifest& manifest, const TrainSetup& setup,
                         const TrainConfig& cfg, int k = 3);

/// Resolve a sample's pixels (in-memory or from <image_dir>/<id>.png).
RawImage load_pixels(const dataset::Sample& sample, const std::string& image_dir);

}  // namespace retriage::train
