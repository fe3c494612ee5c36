#include "retriage/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <tuple>

#include "retriage/error.hpp"
#include "retriage/metrics.hpp"
#include "retriage/png_io.hpp"

namespace retriage::train {

namespace ad = autodiff;

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ValidationError("train: learning_rate must be > 0");
    if (beta1 <= 0.0 || beta1 >= 1.0 || beta2 <= 0.0 || beta2 >= 1.0)
        throw ValidationError("train: betas must lie in (0, 1)");
    if (adam_eps <= 0.0) throw ValidationError("train: adam_eps must be > 0");
    if (batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
    if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
    if (patience < 1) throw ValidationError("train: patience must be >= 1");
    if (smoothing_epsilon < 0.0 || smoothing_epsilon >= 1.0)
        throw ValidationError("train: smoothing_epsilon must be in [0, 1)");
}

SoftmaxHead make_softmax_head(int feature_dim, int num_grades, Rng& rng) {
    SoftmaxHead head;
    head.weight = ad::Tensor({feature_dim, num_grades});
    const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
    for (auto& v : head.weight.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    head.weight.set_requires_grad(true);
    head.bias = ad::Tensor({1, num_grades});
    head.bias.set_requires_grad(true);
    return head;
}

autodiff::Tensor softmax_cross_entropy(const ad::Tensor& logits, const std::vector<int>& labels) {
    const auto& s = logits.shape();
    if (s.size() != 2) throw ShapeError("softmax_cross_entropy: expected [N,K] logits");
    const int n = s[0], k = s[1];
    if (labels.size() != static_cast<std::size_t>(n))
        throw ShapeError("softmax_cross_entropy: batch " + std::to_string(n) + " vs " +
                         std::to_string(labels.size()) + " labels");

    // Row maxima and the one-hot selector are constants of the graph.
    ad::Tensor row_max({n, 1});
    ad::Tensor onehot({n, k});
    for (int i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= k)
            throw ValidationError("softmax_cross_entropy: label out of range at index " +
                                  std::to_string(i));
        float m = logits.data()[static_cast<std::size_t>(i) * k];
        for (int j = 1; j < k; ++j)
            m = std::max(m, logits.data()[static_cast<std::size_t>(i) * k + j]);
        row_max.data()[static_cast<std::size_t>(i)] = m;
        onehot.data()[static_cast<std::size_t>(i) * k + labels[static_cast<std::size_t>(i)]] = 1.0f;
    }

    ad::Tensor shifted = ad::sub(logits, row_max);  // broadcast [N,K] - [N,1]
    ad::Tensor ones_col = ad::Tensor::full({k, 1}, 1.0f);
    ad::Tensor lse = ad::log(ad::matmul(ad::exp(shifted), ones_col));       // [N,1]
    ad::Tensor picked = ad::matmul(ad::mul(shifted, onehot), ones_col);     // [N,1]
    ad::Tensor ce = ad::sub(lse, picked);                                   // [N,1]
    ad::Tensor mean = ad::global_mean(ad::reshape(ce, {1, 1, n, 1}));       // [1,1]
    return ad::reshape(mean, {1});
}

std::vector<double> class_weights(const std::vector<std::int64_t>& counts) {
    std::int64_t total = 0;
    int present = 0;
    for (std::int64_t c : counts) {
        if (c < 0) throw ValidationError("class_weights: negative count");
        if (c > 0) ++present;
        total += c;
    }
    if (present == 0) throw ValidationError("class_weights: all counts are zero");
    std::vector<double> w(counts.size(), 0.0);
    for (std::size_t c = 0; c < counts.size(); ++c)
        if (counts[c] > 0)
            w[c] = static_cast<double>(total) /
                   (static_cast<double>(present) * static_cast<double>(counts[c]));
    return w;
}

std::vector<std::size_t> weighted_sample(const std::vector<double>& weights,
                                         std::size_t n_draws, Rng& rng) {
    std::vector<double> prefix(weights.size());
    double total = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] < 0.0) throw ValidationError("weighted_sample: negative weight");
        total += weights[i];
        prefix[i] = total;
    }
    if (total <= 0.0) throw ValidationError("weighted_sample: all weights are zero");

    std::vector<std::size_t> draws(n_draws);
    for (std::size_t d = 0; d < n_draws; ++d) {
        const double u = rng.next_double() * total;
        const auto it = std::upper_bound(prefix.begin(), prefix.end(), u);
        draws[d] = std::min<std::size_t>(static_cast<std::size_t>(it - prefix.begin()),
                                         weights.size() - 1);
    }
    return draws;
}

void adam_step(std::map<std::string, ad::Tensor>& params, AdamState& state,
               const TrainConfig& cfg) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (auto& [name, tensor] : params) {
        if (!tensor.requires_grad()) continue;
        auto& [m, v] = state.moments[name];
        if (m.empty()) {
            m.assign(tensor.numel(), 0.0f);
            v.assign(tensor.numel(), 0.0f);
        }
        auto data = tensor.data();
        const bool has_grad = tensor.has_grad();
        auto grad = tensor.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
            if (!std::isfinite(g))
                throw Error("adam_step: non-finite gradient in parameter '" + name + "'");
            const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            const double m_hat = mi / bc1;
            const double v_hat = vi / bc2;
            data[i] = static_cast<float>(data[i] - cfg.learning_rate * m_hat /
                                                       (std::sqrt(v_hat) + cfg.adam_eps));
        }
    }
}

RawImage load_pixels(const dataset::Sample& sample, const std::string& image_dir) {
    if (sample.pixels) return *sample.pixels;
    if (sample.path) return pngio::read_png(*sample.path);
    if (!image_dir.empty()) {
        const auto p = std::filesystem::path(image_dir) / (sample.id + ".png");
        return pngio::read_png(p.string());
    }
    throw ValidationError("sample '" + sample.id + "' carries no pixels and no path");
}

namespace {

struct HeadParams {
    coral::CoralHead coral_head;
    SoftmaxHead softmax_head;
};

// All trainable tensors plus a view over the head, keyed for Adam.
std::map<std::string, ad::Tensor> trainable_map(nn::Params& params, HeadParams& head,
                                                HeadKind kind) {
    std::map<std::string, ad::Tensor> all;
    for (auto& [name, t] : params)
        if (t.requires_grad()) all.emplace(name, t);
    if (kind == HeadKind::Coral) {
        all.emplace("coral.weight", head.coral_head.weight);
        all.emplace("coral.biases", head.coral_head.biases);
    } else {
        all.emplace("softmax.weight", head.softmax_head.weight);
        all.emplace("softmax.bias", head.softmax_head.bias);
    }
    return all;
}

ad::Tensor batch_tensor(const std::vector<ad::Tensor>& per_sample, int side) {
    const int n = static_cast<int>(per_sample.size());
    ad::Tensor batch({n, 3, side, side});
    auto out = batch.data();
    std::size_t off = 0;
    for (const auto& t : per_sample) {
        auto in = t.data();
        std::copy(in.begin(), in.end(), out.begin() + static_cast<std::ptrdiff_t>(off));
        off += in.size();
    }
    return batch;
}

nn::Params snapshot_params(const nn::Params& params) {
    nn::Params copy;
    for (const auto& [name, t] : params) {
        ad::Tensor c = t.clone();
        c.set_requires_grad(false);
        copy.emplace(name, std::move(c));
    }
    return copy;
}

struct ValOutcome {
    std::vector<int> preds;
    std::vector<std::vector<float>> logits;
    double qwk = 0.0;
    double accuracy = 0.0;
};

ValOutcome evaluate_validation(const dataset::Manifest& val_set,
                               const std::vector<ad::Tensor>& val_tensors,
                               const TrainSetup& setup, nn::Params& params, HeadParams& head,
                               HeadKind kind, int batch_size) {
    ValOutcome out;
    const int side = setup.preproc.target_side;
    std::vector<int> labels;
    for (const auto& s : val_set.samples) labels.push_back(s.grade);

    for (std::size_t begin = 0; begin < val_tensors.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(val_tensors.size(), begin + static_cast<std::size_t>(batch_size));
        std::vector<ad::Tensor> chunk(val_tensors.begin() + static_cast<std::ptrdiff_t>(begin),
                                      val_tensors.begin() + static_cast<std::ptrdiff_t>(end));
        ad::Tensor batch = batch_tensor(chunk, side);
        ad::Tensor features = nn::backbone_forward(setup.backbone, params, batch, nn::Mode::Eval);
        if (kind == HeadKind::Coral) {
            ad::Tensor logits = coral::coral_logits(features, head.coral_head);
            const int kb = head.coral_head.num_grades - 1;
            for (std::size_t i = 0; i < chunk.size(); ++i) {
                std::span<const float> row(logits.data().data() + i * static_cast<std::size_t>(kb),
                                           static_cast<std::size_t>(kb));
                out.logits.emplace_back(row.begin(), row.end());
                out.preds.push_back(coral::decode(row).grade);
            }
        } else {
            ad::Tensor logits = ad::add(ad::matmul(features, head.softmax_head.weight),
                                        head.softmax_head.bias);
            const int k = setup.num_grades;
            for (std::size_t i = 0; i < chunk.size(); ++i) {
                const float* row = logits.data().data() + i * static_cast<std::size_t>(k);
                out.logits.emplace_back(row, row + k);
                out.preds.push_back(static_cast<int>(std::max_element(row, row + k) - row));
            }
        }
    }

    const auto cm = metrics::confusion(out.preds, labels, setup.num_grades);
    out.qwk = metrics::qwk(cm);
    out.accuracy = metrics::accuracy(cm);
    return out;
}

}  // namespace

FoldResult train_fold(const dataset::Manifest& train_set, const dataset::Manifest& val_set,
                      const TrainSetup& setup, const TrainConfig& cfg) {
    cfg.validate();
    setup.preproc.validate();
    setup.augment.validate();
    if (train_set.samples.empty() || val_set.samples.empty())
        throw ValidationError("train_fold: empty train or validation set");
    {
        int present = 0;
        for (std::int64_t c : val_set.counts)
            if (c > 0) ++present;
        if (present < 2) throw ValidationError("train_fold: validation set needs >= 2 classes");
    }

    Rng base(cfg.seed);
    Rng init_rng = base.derive(0x696e6974);  // parameter init stream
    nn::Params params = nn::init_params(setup.backbone, init_rng);
    HeadParams head;
    if (cfg.head == HeadKind::Coral)
        head.coral_head = coral::make_head(setup.backbone.feature_dim, setup.num_grades, init_rng);
    else
        head.softmax_head = make_softmax_head(setup.backbone.feature_dim, setup.num_grades, init_rng);

    auto trainables = trainable_map(params, head, cfg.head);
    AdamState adam;

    // Deterministic preprocessing is cached once per sample; augmentation
    // operates on the cached 8-bit images each epoch.
    const int side = setup.preproc.target_side;
    std::vector<RawImage> train_images;
    train_images.reserve(train_set.samples.size());
    for (const auto& s : train_set.samples)
        train_images.push_back(preproc::preprocess_to_image(load_pixels(s, setup.image_dir), setup.preproc));
    std::vector<ad::Tensor> val_tensors;
    val_tensors.reserve(val_set.samples.size());
    for (const auto& s : val_set.samples) {
        const RawImage img = preproc::preprocess_to_image(load_pixels(s, setup.image_dir), setup.preproc);
        val_tensors.push_back(
            preproc::to_tensor_normalized(img, setup.preproc.channel_mean, setup.preproc.channel_std));
    }

    const auto weights_per_class =
        class_weights(std::vector<std::int64_t>(train_set.counts.begin(), train_set.counts.end()));
    std::vector<double> sample_weights;
    sample_weights.reserve(train_set.samples.size());
    for (const auto& s : train_set.samples)
        sample_weights.push_back(weights_per_class[static_cast<std::size_t>(s.grade)]);

    FoldResult result;
    EarlyStopper stopper(cfg.patience);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng sampler_rng = base.derive(Rng::mix(0x73616d70, static_cast<std::uint64_t>(epoch)));
        const auto draws = weighted_sample(sample_weights, train_set.samples.size(), sampler_rng);

        double loss_sum = 0.0;
        std::size_t batch_count = 0;
        for (std::size_t begin = 0; begin < draws.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(draws.size(), begin + static_cast<std::size_t>(cfg.batch_size));
            const std::size_t bsize = end - begin;

            std::vector<ad::Tensor> inputs;
            std::vector<int> labels;
            inputs.reserve(bsize);
            labels.reserve(bsize);
            for (std::size_t d = begin; d < end; ++d) {
                const std::size_t idx = draws[d];
                Rng aug_rng = base.derive(
                    Rng::mix(0x617567 + static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(d)));
                const RawImage aug = augment::augment(train_images[idx], setup.augment, aug_rng);
                inputs.push_back(preproc::to_tensor_normalized(aug, setup.preproc.channel_mean,
                                                               setup.preproc.channel_std));
                labels.push_back(train_set.samples[idx].grade);
            }
            ad::Tensor batch = batch_tensor(inputs, side);

            for (auto& [name, t] : trainables) t.zero_grad();
            ad::Graph graph;
            float loss_value = 0.0f;
            {
                ad::Graph::Scope scope(graph);
                ad::Tensor features = nn::backbone_forward(setup.backbone, params, batch, nn::Mode::Train);
                ad::Tensor loss;
                if (cfg.head == HeadKind::Coral) {
                    ad::Tensor logits = coral::coral_logits(features, head.coral_head);
                    const int kb = setup.num_grades - 1;
                    ad::Tensor targets({static_cast<int>(bsize), kb});
                    for (std::size_t i = 0; i < bsize; ++i) {
                        const auto t = coral::smooth(
                            coral::cumulative_targets(labels[i], setup.num_grades), cfg.smoothing_epsilon);
                        std::copy(t.begin(), t.end(),
                                  targets.data().begin() + static_cast<std::ptrdiff_t>(i * static_cast<std::size_t>(kb)));
                    }
                    loss = coral::coral_loss(logits, targets);
                } else {
                    ad::Tensor logits = ad::add(ad::matmul(features, head.softmax_head.weight),
                                                head.softmax_head.bias);
                    loss = softmax_cross_entropy(logits, labels);
                }
                loss_value = loss.item();
                if (!std::isfinite(loss_value))
                    throw Error("train_fold: non-finite loss at epoch " + std::to_string(epoch) +
                                ", batch " + std::to_string(batch_count + 1));
                graph.backward(loss);
            }
            adam_step(trainables, adam, cfg);
            loss_sum += loss_value;
            ++batch_count;
        }

        const ValOutcome val = evaluate_validation(val_set, val_tensors, setup, params, head,
                                                   cfg.head, cfg.batch_size);
        result.trace.push_back({epoch, loss_sum / static_cast<double>(batch_count), val.qwk,
                                val.accuracy});

        const bool stop = stopper.observe(epoch, val.qwk);
        if (stopper.improved_at(epoch)) {
            result.best_epoch = epoch;
            result.best_qwk = val.qwk;
            result.best_accuracy = val.accuracy;
            result.best_params = snapshot_params(params);
            if (cfg.head == HeadKind::Coral) {
                result.best_coral.weight = head.coral_head.weight.clone();
                result.best_coral.biases = head.coral_head.biases.clone();
                result.best_coral.num_grades = head.coral_head.num_grades;
                result.coral_biases_sorted = coral::biases_sorted(head.coral_head);
            } else {
                result.best_softmax.weight = head.softmax_head.weight.clone();
                result.best_softmax.bias = head.softmax_head.bias.clone();
            }
            result.val_preds = val.preds;
            result.val_logits = val.logits;
        }
        if (stop) break;
    }

    result.val_ids.reserve(val_set.samples.size());
    result.val_labels.reserve(val_set.samples.size());
    for (const auto& s : val_set.samples) {
        result.val_ids.push_back(s.id);
        result.val_labels.push_back(s.grade);
    }
    return result;
}

CvSummary cross_validate(const dataset::Manifest& manifest, const TrainSetup& setup,
                         const TrainConfig& cfg, int k) {
    std::vector<int> labels;
    labels.reserve(manifest.samples.size());
    for (const auto& s : manifest.samples) labels.push_back(s.grade);
    const auto folds = dataset::stratified_folds(labels, k, Rng::mix(cfg.seed, 0x666f6c64));

    CvSummary summary;
    double mae_sum = 0.0;
    std::size_t mae_count = 0;
    for (int f = 0; f < k; ++f) {
        dataset::Manifest train_set, val_set;
        for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
            if (folds.fold_of[i] == f)
                val_set.push(manifest.samples[i]);
            else
                train_set.push(manifest.samples[i]);
        }
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = Rng::mix(cfg.seed, static_cast<std::uint64_t>(f) + 1);
        FoldResult r = train_fold(train_set, val_set, setup, fold_cfg);
        r.fold = f;
        for (std::size_t i = 0; i < r.val_preds.size(); ++i) {
            mae_sum += std::abs(r.val_preds[i] - r.val_labels[i]);
            ++mae_count;
        }
        summary.folds.push_back(std::move(r));
    }

    std::vector<double> qwks, accs;
    for (const auto& r : summary.folds) {
        qwks.push_back(r.best_qwk);
        accs.push_back(r.best_accuracy);
    }
    std::tie(summary.qwk_mean, summary.qwk_std) = population_mean_std(qwks);
    std::tie(summary.accuracy_mean, summary.accuracy_std) = population_mean_std(accs);
    summary.mae = mae_count ? mae_sum / static_cast<double>(mae_count) : 0.0;
    return summary;
}

std::pair<double, double> population_mean_std(const std::vector<double>& values) {
    if (values.empty()) throw ValidationError("population_mean_std: empty sequence");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return {mean, std::sqrt(var)};
}

}  // namespace retriage::train
