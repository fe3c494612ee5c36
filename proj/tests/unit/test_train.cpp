#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "retriage/augment.hpp"
#include "retriage/error.hpp"
#include "retriage/train.hpp"

using namespace retriage;
namespace ad = retriage::autodiff;
using namespace retriage::train;

namespace {

TrainSetup micro_setup(int side = 16) {
    TrainSetup setup;
    setup.backbone.input_side = side;
    setup.backbone.stem_channels = 4;
    setup.backbone.blocks = {{8, 6, 3, 2, true, nn::Activation::HardSwish}};
    setup.backbone.feature_dim = 8;
    setup.preproc.target_side = side;
    setup.preproc.clahe_enabled = false;
    setup.augment = augment::AugmentPolicy::identity();
    return setup;
}

dataset::Manifest micro_manifest(int per_grade, std::uint64_t seed) {
    dataset::SynthParams params;
    params.image_side = 64;
    params.seed = seed;
    return dataset::synth_manifest(per_grade, params);
}

bool params_bitwise_equal(const nn::Params& a, const nn::Params& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [name, t] : a) {
        auto it = b.find(name);
        if (it == b.end() || it->second.numel() != t.numel()) return false;
        if (std::memcmp(t.data().data(), it->second.data().data(),
                        t.numel() * sizeof(float)) != 0)
            return false;
    }
    return true;
}

}  // namespace

TEST_CASE("class_weights: balanced counts give unit weights") {
    const auto w = class_weights({10, 10});
    CHECK(w[0] == doctest::Approx(1.0));
    CHECK(w[1] == doctest::Approx(1.0));
}

TEST_CASE("class_weights on the combined manifest counts") {
    const auto w = class_weights({1973, 395, 1167, 286, 357});
    CHECK(w[0] == doctest::Approx(0.4235).epsilon(1e-3));
    CHECK(w[3] == doctest::Approx(2.9217).epsilon(1e-3));
}

TEST_CASE("class_weights: [1,3] gives [2, 2/3] and absent classes get zero") {
    const auto w = class_weights({1, 3});
    CHECK(w[0] == doctest::Approx(2.0));
    CHECK(w[1] == doctest::Approx(2.0 / 3.0));

    const auto with_gap = class_weights({5, 0, 5});
    CHECK(with_gap[1] == 0.0);
    CHECK(with_gap[0] == doctest::Approx(1.0));

    CHECK_THROWS_AS(class_weights({0, 0}), ValidationError);
}

TEST_CASE("weighted_sample with a single nonzero weight always draws it") {
    Rng rng(1);
    const auto draws = weighted_sample({0.0, 0.0, 3.0, 0.0}, 50, rng);
    for (std::size_t d : draws) CHECK(d == 2);
}

TEST_CASE("weighted_sample is deterministic given the rng state") {
    Rng r1(9), r2(9);
    const auto a = weighted_sample({1, 2, 3, 4}, 100, r1);
    const auto b = weighted_sample({1, 2, 3, 4}, 100, r2);
    CHECK(a == b);
}

TEST_CASE("inverse-frequency sampling balances a 90/10 split") {
    // 90 samples of class 0, 10 of class 1, weights inverse to frequency.
    const auto cw = class_weights({90, 10});
    std::vector<double> weights;
    for (int i = 0; i < 90; ++i) weights.push_back(cw[0]);
    for (int i = 0; i < 10; ++i) weights.push_back(cw[1]);
    Rng rng(20250810);
    const auto draws = weighted_sample(weights, 10000, rng);
    int class1 = 0;
    for (std::size_t d : draws)
        if (d >= 90) ++class1;
    const double frac = class1 / 10000.0;
    CHECK(frac >= 0.47);
    CHECK(frac <= 0.53);
}

TEST_CASE("weighted_sample rejects degenerate weights") {
    Rng rng(2);
    CHECK_THROWS_AS(weighted_sample({0, 0, 0}, 5, rng), ValidationError);
    CHECK_THROWS_AS(weighted_sample({1, -1}, 5, rng), ValidationError);
}

TEST_CASE("adam first step with unit gradient moves by about -lr") {
    TrainConfig cfg;
    std::map<std::string, ad::Tensor> params;
    ad::Tensor p({2}, {1.0f, 1.0f}, true);
    p.zero_grad();
    {
        ad::Graph g;
        ad::Graph::Scope scope(g);
        auto y = ad::scalar_mul(ad::reshape(ad::global_mean(ad::reshape(p, {1, 1, 1, 2})), {1}),
                                2.0f);  // sum -> unit gradient per element
        g.backward(y);
    }
    params.emplace("p", p);
    AdamState state;
    adam_step(params, state, cfg);
    CHECK(p.data()[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
    CHECK(p.data()[1] == doctest::Approx(1.0 - 1e-3).epsilon(1e-6));
    CHECK(state.step == 1);
}

TEST_CASE("adam with zero gradients and fresh state is the identity") {
    TrainConfig cfg;
    std::map<std::string, ad::Tensor> params;
    ad::Tensor p({3}, {0.5f, -1.0f, 2.0f}, true);
    params.emplace("p", p);
    AdamState state;
    adam_step(params, state, cfg);
    CHECK(p.data()[0] == 0.5f);
    CHECK(p.data()[1] == -1.0f);
    CHECK(p.data()[2] == 2.0f);
}

TEST_CASE("parameters with equal gradient histories update identically") {
    TrainConfig cfg;
    std::map<std::string, ad::Tensor> params;
    ad::Tensor a = ad::Tensor::scalar(1.0f, true);
    ad::Tensor b = ad::Tensor::scalar(1.0f, true);
    params.emplace("a", a);
    params.emplace("b", b);
    AdamState state;
    for (int step = 0; step < 5; ++step) {
        a.zero_grad();
        b.zero_grad();
        ad::Graph g;
        {
            ad::Graph::Scope scope(g);
            auto y = ad::add(ad::mul(a, a), ad::mul(b, b));
            g.backward(y);
        }
        adam_step(params, state, cfg);
        CHECK(a.data()[0] == b.data()[0]);
    }
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
    TrainConfig cfg;
    std::map<std::string, ad::Tensor> params;
    ad::Tensor p = ad::Tensor::scalar(1.0f, true);
    p.zero_grad();
    {
        ad::Graph g;
        ad::Graph::Scope scope(g);
        auto y = ad::log(ad::sub(p, p));  // log(0) -> -inf value, inf gradient
        g.backward(y);
    }
    params.emplace("bad_param", p);
    AdamState state;
    CHECK_THROWS_WITH_AS(adam_step(params, state, cfg), doctest::Contains("bad_param"), Error);
}

TEST_CASE("early stopping follows the patience contract") {
    EarlyStopper stop(2);
    CHECK(!stop.observe(1, 0.50));
    CHECK(!stop.observe(2, 0.60));
    CHECK(!stop.observe(3, 0.59));
    CHECK(stop.observe(4, 0.58));  // second consecutive non-improvement
    CHECK(stop.best_epoch() == 2);
    CHECK(stop.best_qwk() == doctest::Approx(0.60));
}

TEST_CASE("population statistics match hand arithmetic") {
    const auto [mean, std] = population_mean_std({0.8, 0.9, 1.0});
    CHECK(mean == doctest::Approx(0.9));
    CHECK(std == doctest::Approx(0.0816).epsilon(1e-2));

    const auto [m1, s1] = population_mean_std({1.0, 1.0, 1.0});
    CHECK(m1 == doctest::Approx(1.0));
    CHECK(s1 == doctest::Approx(0.0));
}

TEST_CASE("softmax_cross_entropy value and gradient") {
    // Uniform logits over K classes cost ln K.
    ad::Tensor logits({2, 5});
    const auto loss = softmax_cross_entropy(logits, {1, 3});
    CHECK(loss.item() == doctest::Approx(std::log(5.0)).epsilon(1e-6));

    // Gradient equals softmax(p) - onehot, scaled by 1/N.
    Rng rng(23);
    ad::Tensor l2({2, 4});
    for (auto& v : l2.data()) v = static_cast<float>(rng.uniform(-3, 3));
    l2.set_requires_grad(true);
    const std::vector<int> labels{2, 0};
    ad::Graph g;
    {
        ad::Graph::Scope scope(g);
        auto loss2 = softmax_cross_entropy(l2, labels);
        g.backward(loss2);
    }
    for (int i = 0; i < 2; ++i) {
        double denom = 0;
        for (int j = 0; j < 4; ++j) denom += std::exp(l2.data()[static_cast<std::size_t>(i * 4 + j)]);
        for (int j = 0; j < 4; ++j) {
            const double soft = std::exp(l2.data()[static_cast<std::size_t>(i * 4 + j)]) / denom;
            const double want = (soft - (labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0)) / 2.0;
            CHECK(l2.grad()[static_cast<std::size_t>(i * 4 + j)] ==
                  doctest::Approx(want).epsilon(1e-4));
        }
    }
}

TEST_CASE("train_fold is bitwise reproducible for equal seeds and data") {
    const auto manifest = micro_manifest(6, 11);  // 30 images
    dataset::Manifest train_set, val_set;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        if (i % 5 == 0)
            val_set.push(manifest.samples[i]);
        else
            train_set.push(manifest.samples[i]);
    }
    TrainSetup setup = micro_setup();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 99;

    const FoldResult a = train_fold(train_set, val_set, setup, cfg);
    const FoldResult b = train_fold(train_set, val_set, setup, cfg);
    CHECK(a.best_epoch == b.best_epoch);
    CHECK(a.best_qwk == b.best_qwk);
    CHECK(params_bitwise_equal(a.best_params, b.best_params));
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].train_loss == b.trace[i].train_loss);
        CHECK(a.trace[i].val_qwk == b.trace[i].val_qwk);
    }
}

TEST_CASE("train_fold returns the trace maximum as best and keeps ids aligned") {
    const auto manifest = micro_manifest(5, 13);
    dataset::Manifest train_set, val_set;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        if (i % 5 == 1)
            val_set.push(manifest.samples[i]);
        else
            train_set.push(manifest.samples[i]);
    }
    TrainSetup setup = micro_setup();
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 123;
    const FoldResult r = train_fold(train_set, val_set, setup, cfg);
    double max_qwk = -2;
    for (const auto& e : r.trace) max_qwk = std::max(max_qwk, e.val_qwk);
    CHECK(r.best_qwk == doctest::Approx(max_qwk));
    CHECK(r.val_ids.size() == val_set.samples.size());
    CHECK(r.val_preds.size() == val_set.samples.size());
    CHECK(r.val_logits.size() == val_set.samples.size());
}

TEST_CASE("validation path never touches the augmentation module") {
    const auto manifest = micro_manifest(4, 17);
    dataset::Manifest train_set, val_set;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        if (i % 4 == 2)
            val_set.push(manifest.samples[i]);
        else
            train_set.push(manifest.samples[i]);
    }
    TrainSetup setup = micro_setup();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 7;

    const std::size_t before = augment::invocation_count();
    (void)train_fold(train_set, val_set, setup, cfg);
    const std::size_t calls = augment::invocation_count() - before;
    // One augmentation per drawn training sample per epoch, none for
    // validation samples.
    CHECK(calls == train_set.samples.size() * static_cast<std::size_t>(cfg.epochs));
}

TEST_CASE("train_fold validates its preconditions") {
    TrainSetup setup = micro_setup();
    TrainConfig cfg;
    dataset::Manifest empty;
    const auto manifest = micro_manifest(2, 3);
    CHECK_THROWS_AS(train_fold(empty, manifest, setup, cfg), ValidationError);

    // Single-class validation set is rejected.
    dataset::Manifest single, train_set;
    for (const auto& s : manifest.samples) {
        if (s.grade == 0 && single.size() < 2)
            single.push(s);
        else
            train_set.push(s);
    }
    CHECK_THROWS_AS(train_fold(train_set, single, setup, cfg), ValidationError);
}

TEST_CASE("training loss decreases over the first three epochs on the synthetic task") {
    dataset::SynthParams params;
    params.image_side = 64;
    params.seed = 29;
    const auto manifest = dataset::synth_manifest(12, params);  // 60 images
    dataset::Manifest train_set, val_set;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
        if (i % 6 == 3)
            val_set.push(manifest.samples[i]);
        else
            train_set.push(manifest.samples[i]);
    }
    TrainSetup setup = micro_setup(32);
    setup.backbone = nn::BackboneConfig::tiny(32);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.patience = 3;
    cfg.batch_size = 16;
    cfg.seed = 20250810;
    const FoldResult r = train_fold(train_set, val_set, setup, cfg);
    REQUIRE(r.trace.size() == 3);
    CHECK(r.trace[2].train_loss < r.trace[0].train_loss);
    CHECK(r.trace[1].train_loss < r.trace[0].train_loss);
}

TEST_CASE("cross_validate summarizes folds with population statistics") {
    const auto manifest = micro_manifest(6, 31);
    TrainSetup setup = micro_setup();
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.seed = 55;
    const CvSummary s = cross_validate(manifest, setup, cfg, 3);
    REQUIRE(s.folds.size() == 3);
    std::vector<double> qwks;
    for (const auto& f : s.folds) qwks.push_back(f.best_qwk);
    const auto [mean, std] = population_mean_std(qwks);
    CHECK(s.qwk_mean == doctest::Approx(mean));
    CHECK(s.qwk_std == doctest::Approx(std));
    CHECK(s.mae >= 0.0);
    // Every sample served as validation exactly once.
    std::size_t val_total = 0;
    for (const auto& f : s.folds) val_total += f.val_ids.size();
    CHECK(val_total == manifest.size());
}

TEST_CASE("identical configs give identical folds for both head kinds") {
    const auto manifest = micro_manifest(4, 37);
    TrainSetup setup = micro_setup();
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.seed = 77;

    TrainConfig softmax_cfg = cfg;
    softmax_cfg.head = HeadKind::Softmax;

    const CvSummary a = cross_validate(manifest, setup, cfg, 2);
    const CvSummary b = cross_validate(manifest, setup, softmax_cfg, 2);
    REQUIRE(a.folds.size() == b.folds.size());
    for (std::size_t f = 0; f < a.folds.size(); ++f) {
        REQUIRE(a.folds[f].val_ids.size() == b.folds[f].val_ids.size());
        for (std::size_t i = 0; i < a.folds[f].val_ids.size(); ++i)
            CHECK(a.folds[f].val_ids[i] == b.folds[f].val_ids[i]);
    }
}
