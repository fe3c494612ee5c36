#include "retriage/coral.hpp"

#include <algorithm>
#include <cmath>

#include "retriage/error.hpp"

namespace retriage::coral {

namespace ad = autodiff;

void CoralHead::validate() const {
    if (num_grades < 2) throw ValidationError("coral: K must be >= 2");
    if (!weight.defined() || !biases.defined())
        throw ValidationError("coral: head tensors not initialized");
    if (biases.numel() != static_cast<std::size_t>(num_grades - 1))
        throw ValidationError("coral: expected " + std::to_string(num_grades - 1) +
                              " biases, got " + std::to_string(biases.numel()));
    if (weight.shape().size() != 2 || weight.shape()[1] != 1)
        throw ValidationError("coral: weight must be [feature_dim, 1]");
}

CoralHead make_head(int feature_dim, int num_grades, Rng& rng) {
    if (feature_dim < 1) throw ValidationError("coral: feature_dim must be >= 1");
    if (num_grades < 2) throw ValidationError("coral: K must be >= 2");
    CoralHead head;
    head.num_grades = num_grades;
    head.weight = ad::Tensor({feature_dim, 1});
    const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    for (auto& v : head.weight.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    head.weight.set_requires_grad(true);

    head.biases = ad::Tensor({1, num_grades - 1});
    const int kb = num_grades - 1;
    for (int k = 0; k < kb; ++k)
        head.biases.data()[k] =
            kb == 1 ? 0.0f : static_cast<float>(1.5 - 3.0 * k / static_cast<double>(kb - 1));
    head.biases.set_requires_grad(true);
    return head;
}

bool biases_sorted(const CoralHead& head) {
    auto b = head.biases.data();
    for (std::size_t k = 1; k < b.size(); ++k)
        if (b[k] > b[k - 1]) return false;
    return true;
}

std::vector<float> cumulative_targets(int y, int num_grades) {
    if (y < 0 || y >= num_grades)
        throw ValidationError("cumulative_targets: grade " + std::to_string(y) + " outside 0.." +
                              std::to_string(num_grades - 1));
    std::vector<float> t(static_cast<std::size_t>(num_grades - 1), 0.0f);
    for (int k = 1; k < num_grades; ++k)
        if (y >= k) t[static_cast<std::size_t>(k - 1)] = 1.0f;
    return t;
}

std::vector<float> smooth(const std::vector<float>& targets, double epsilon) {
    if (epsilon < 0.0 || epsilon >= 1.0)
        throw ValidationError("smooth: epsilon must be in [0, 1)");
    std::vector<float> out(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i)
        out[i] = static_cast<float>(targets[i] * (1.0 - epsilon) + epsilon / 2.0);
    return out;
}

ad::Tensor coral_logits(const ad::Tensor& features, const CoralHead& head) {
    head.validate();
    if (features.shape().size() != 2 || features.shape()[1] != head.weight.shape()[0])
        throw ShapeError("coral_logits: features " + ad::shape_str(features.shape()) +
                         " vs weight " + ad::shape_str(head.weight.shape()));
    ad::Tensor g = ad::matmul(features, head.weight);  // [N,1]
    return ad::add(g, head.biases);                    // broadcast to [N,K-1]
}

ad::Tensor coral_loss(const ad::Tensor& logits, const ad::Tensor& smoothed_targets) {
    if (logits.shape() != smoothed_targets.shape())
        throw ShapeError("coral_loss: logits " + ad::shape_str(logits.shape()) + " vs targets " +
                         ad::shape_str(smoothed_targets.shape()));
    const auto& s = logits.shape();
    if (s.size() != 2) throw ShapeError("coral_loss: expected [N,K-1] logits");
    const int n = s[0], kb = s[1];

    ad::Tensor log_sig_pos = ad::log(ad::sigmoid(logits));
    ad::Tensor log_sig_neg = ad::log(ad::sigmoid(ad::scalar_mul(logits, -1.0f)));
    ad::Tensor one_minus_t =
        ad::sub(ad::Tensor::full({n, kb}, 1.0f), smoothed_targets);
    ad::Tensor terms = ad::add(ad::mul(smoothed_targets, log_sig_pos),
                               ad::mul(one_minus_t, log_sig_neg));
    // Mean over N*(K-1) entries, rescaled to mean-over-batch of the k-sum.
    ad::Tensor mean_all = ad::global_mean(ad::reshape(terms, {1, 1, n, kb}));
    return ad::scalar_mul(ad::reshape(mean_all, {1}), -static_cast<float>(kb));
}

Decoded decode(std::span<const float> logits) {
    Decoded d;
    d.probs.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k) {
        const double l = logits[k];
        const double p = l >= 0.0 ? 1.0 / (1.0 + std::exp(-l))
                                  : std::exp(l) / (1.0 + std::exp(l));
        d.probs[k] = static_cast<float>(p);
        if (d.probs[k] > 0.5f) ++d.grade;
    }
    return d;
}

double cumulative_bce(const std::vector<std::vector<float>>& logits,
                      const std::vector<std::vector<float>>& targets, double temperature) {
    if (logits.empty()) throw ValidationError("cumulative_bce: empty set");
    if (logits.size() != targets.size())
        throw ValidationError("cumulative_bce: logits/targets size mismatch");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        if (logits[i].size() != targets[i].size())
            throw ValidationError("cumulative_bce: row " + std::to_string(i) + " length mismatch");
        for (std::size_t k = 0; k < logits[i].size(); ++k) {
            const double z = logits[i][k] / temperature;
            const double t = targets[i][k];
            // softplus(z) - t z, with softplus(z) = max(z,0) + log1p(e^-|z|)
            const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
            total += softplus - t * z;
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

Temperature fit_temperature(const std::vector<std::vector<float>>& val_logits,
                            const std::vector<std::vector<float>>& val_targets) {
    if (val_logits.empty()) throw ValidationError("fit_temperature: empty validation set");
    const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double lo = 0.05, hi = 20.0;
    double x1 = hi - inv_phi * (hi - lo);
    double x2 = lo + inv_phi * (hi - lo);
    double f1 = cumulative_bce(val_logits, val_targets, x1);
    double f2 = cumulative_bce(val_logits, val_targets, x2);
    while (hi - lo >= 1e-4) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = cumulative_bce(val_logits, val_targets, x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = cumulative_bce(val_logits, val_targets, x2);
        }
    }
    return Temperature{(lo + hi) / 2.0};
}

std::vector<float> apply_temperature(std::span<const float> logits, double temperature) {
    if (temperature <= 0.0) throw ValidationError("apply_temperature: T must be > 0");
    std::vector<float> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i)
        out[i] = static_cast<float>(logits[i] / temperature);
    return out;
}

}  // namespace retriage::coral
