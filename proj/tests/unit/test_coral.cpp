#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "retriage/coral.hpp"
#include "retriage/error.hpp"
#include "retriage/rng.hpp"

using namespace retriage;
namespace ad = retriage::autodiff;
using namespace retriage::coral;

TEST_CASE("cumulative_targets encodes t_k = 1 iff y >= k") {
    CHECK(cumulative_targets(0, 5) == std::vector<float>{0, 0, 0, 0});
    CHECK(cumulative_targets(2, 5) == std::vector<float>{1, 1, 0, 0});
    CHECK(cumulative_targets(4, 5) == std::vector<float>{1, 1, 1, 1});
    CHECK_THROWS_AS(cumulative_targets(5, 5), ValidationError);
    CHECK_THROWS_AS(cumulative_targets(-1, 5), ValidationError);
}

TEST_CASE("smooth applies t(1-eps) + eps/2") {
    CHECK(smooth({1, 0}, 0.0) == std::vector<float>{1, 0});
    const auto s = smooth({1, 0}, 0.1);
    CHECK(s[0] == doctest::Approx(0.95));
    CHECK(s[1] == doctest::Approx(0.05));
}

TEST_CASE("coral_logits shares one score across thresholds") {
    CoralHead head;
    head.num_grades = 5;
    head.weight = ad::Tensor({3, 1});  // zero weight -> g = 0
    head.biases = ad::Tensor({1, 4}, {2, 1, 0, -1});
    ad::Tensor features = ad::Tensor::full({1, 3}, 1.0f);
    const auto logits = coral_logits(features, head);
    CHECK(logits.data()[0] == 2.0f);
    CHECK(logits.data()[1] == 1.0f);
    CHECK(logits.data()[2] == 0.0f);
    CHECK(logits.data()[3] == -1.0f);

    // Shifting all biases by c shifts all logits by c.
    for (auto& b : head.biases.data()) b += 0.5f;
    const auto shifted = coral_logits(features, head);
    for (int k = 0; k < 4; ++k)
        CHECK(shifted.data()[static_cast<std::size_t>(k)] ==
              doctest::Approx(logits.data()[static_cast<std::size_t>(k)] + 0.5));

    // Equal features give identical logits.
    ad::Tensor two = ad::Tensor::full({2, 3}, 1.0f);
    const auto both = coral_logits(two, head);
    for (int k = 0; k < 4; ++k)
        CHECK(both.data()[static_cast<std::size_t>(k)] == both.data()[static_cast<std::size_t>(4 + k)]);
}

TEST_CASE("coral_loss at zero logits with targets (1,1,0,0) is 4 ln 2") {
    ad::Tensor logits({1, 4});
    ad::Tensor targets({1, 4}, {1, 1, 0, 0});
    const auto loss = coral_loss(logits, targets);
    CHECK(loss.item() == doctest::Approx(2.772589).epsilon(1e-6));
}

TEST_CASE("coral_loss saturates to zero on well-separated logits") {
    ad::Tensor logits({1, 4}, {40, 40, -40, -40});
    ad::Tensor targets({1, 4}, {1, 1, 0, 0});
    CHECK(coral_loss(logits, targets).item() <= 1e-10);
}

TEST_CASE("coral_loss agrees with the direct-formula oracle on random cases") {
    Rng rng(17);
    for (int rep = 0; rep < 100; ++rep) {
        const int n = 1 + static_cast<int>(rng.next_below(4));
        std::vector<float> logit_vals, target_vals;
        double expected = 0.0;
        for (int i = 0; i < n; ++i) {
            std::vector<float> row_l, row_t;
            for (int k = 0; k < 4; ++k) {
                row_l.push_back(static_cast<float>(rng.uniform(-6, 6)));
                row_t.push_back(static_cast<float>(rng.uniform(0.02, 0.98)));
            }
            expected += oracles::direct_cumulative_bce_sum(row_l, row_t);
            logit_vals.insert(logit_vals.end(), row_l.begin(), row_l.end());
            target_vals.insert(target_vals.end(), row_t.begin(), row_t.end());
        }
        expected /= n;
        ad::Tensor logits({n, 4}, std::vector<float>(logit_vals));
        ad::Tensor targets({n, 4}, std::vector<float>(target_vals));
        CHECK(coral_loss(logits, targets).item() == doctest::Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("coral_loss gradient equals sigma(logit) - target within 1e-6") {
    Rng rng(18);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 1 + static_cast<int>(rng.next_below(3));
        ad::Tensor logits({n, 4});
        ad::Tensor targets({n, 4});
        for (auto& v : logits.data()) v = static_cast<float>(rng.uniform(-5, 5));
        for (auto& v : targets.data()) v = static_cast<float>(rng.uniform(0.02, 0.98));
        logits.set_requires_grad(true);

        ad::Graph g;
        {
            ad::Graph::Scope scope(g);
            auto loss = coral_loss(logits, targets);
            g.backward(loss);
        }
        REQUIRE(logits.has_grad());
        for (std::size_t i = 0; i < logits.numel(); ++i) {
            const double sig = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.data()[i])));
            const double want = (sig - targets.data()[i]) / n;  // mean over batch
            CHECK(std::abs(logits.grad()[i] - want) <= 1e-6);
        }
    }
}

TEST_CASE("coral_loss is non-negative with unsmoothed targets") {
    Rng rng(19);
    for (int rep = 0; rep < 50; ++rep) {
        ad::Tensor logits({1, 4});
        for (auto& v : logits.data()) v = static_cast<float>(rng.uniform(-10, 10));
        const int y = static_cast<int>(rng.next_below(5));
        ad::Tensor targets({1, 4}, cumulative_targets(y, 5));
        CHECK(coral_loss(logits, targets).item() >= 0.0f);
    }
}

TEST_CASE("ordinal penalty grows with distance from the decoded grade") {
    // Fixed non-increasing probability vector; moving the true grade away
    // from the decoded grade never decreases the unsmoothed loss.
    ad::Tensor logits({1, 4}, {2.5f, 1.0f, -1.0f, -2.5f});  // decodes to grade 2
    std::vector<double> losses;
    for (int y = 0; y < 5; ++y) {
        ad::Tensor targets({1, 4}, cumulative_targets(y, 5));
        losses.push_back(coral_loss(logits, targets).item());
    }
    const int decoded = decode(std::span<const float>(logits.data())).grade;
    REQUIRE(decoded == 2);
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b)
            if (std::abs(a - decoded) < std::abs(b - decoded) &&
                ((a - decoded) * (b - decoded) >= 0))  // same side, further
                CHECK(losses[static_cast<std::size_t>(a)] <= losses[static_cast<std::size_t>(b)]);
}

TEST_CASE("decode counts probabilities strictly above one half") {
    {
        std::vector<float> logits{2.0f, 1.2f, -0.9f, -2.0f};  // probs .88 .77 .29 .12
        const auto d = decode(logits);
        CHECK(d.grade == 2);
    }
    {
        std::vector<float> logits{-1, -2, -3, -4};
        CHECK(decode(logits).grade == 0);
    }
    {
        std::vector<float> logits{4, 3, 2, 1};
        CHECK(decode(logits).grade == 4);
    }
    {
        std::vector<float> logits{0.0f, -1.0f, -2.0f, -3.0f};  // p = 0.5 exactly: no count
        CHECK(decode(logits).grade == 0);
    }
}

TEST_CASE("rank consistency: sorted biases give non-increasing probabilities") {
    Rng rng(20);
    for (int rep = 0; rep < 10000; ++rep) {
        const int f = 1 + static_cast<int>(rng.next_below(8));
        CoralHead head;
        head.num_grades = 5;
        head.weight = ad::Tensor({f, 1});
        for (auto& v : head.weight.data()) v = static_cast<float>(rng.uniform(-2, 2));
        std::vector<float> biases;
        for (int k = 0; k < 4; ++k) biases.push_back(static_cast<float>(rng.uniform(-3, 3)));
        std::sort(biases.begin(), biases.end(), std::greater<>());
        head.biases = ad::Tensor({1, 4}, std::vector<float>(biases));

        ad::Tensor features({1, f});
        for (auto& v : features.data()) v = static_cast<float>(rng.uniform(-2, 2));
        const auto logits = coral_logits(features, head);
        const auto d = decode(std::span<const float>(logits.data()));
        for (std::size_t k = 1; k < d.probs.size(); ++k) CHECK(d.probs[k] <= d.probs[k - 1]);
    }
}

TEST_CASE("decode is invariant under positive temperature scaling") {
    Rng rng(21);
    for (int rep = 0; rep < 500; ++rep) {
        std::vector<float> logits;
        for (int k = 0; k < 4; ++k) logits.push_back(static_cast<float>(rng.uniform(-4, 4)));
        const int base = decode(logits).grade;
        for (double t : {0.1, 1.0, 3.0, 10.0})
            CHECK(decode(apply_temperature(logits, t)).grade == base);
    }
}

TEST_CASE("apply_temperature divides and T>1 moves probabilities toward a half") {
    std::vector<float> logits{2.0f, -2.0f};
    const auto halved = apply_temperature(logits, 2.0);
    CHECK(halved[0] == doctest::Approx(1.0));
    CHECK(halved[1] == doctest::Approx(-1.0));
    CHECK(apply_temperature(logits, 1.0) == logits);

    const auto before = decode(logits).probs;
    const auto after = decode(apply_temperature(logits, 3.0)).probs;
    CHECK(std::abs(after[0] - 0.5) < std::abs(before[0] - 0.5));
    CHECK(std::abs(after[1] - 0.5) < std::abs(before[1] - 0.5));
    CHECK_THROWS_AS(apply_temperature(logits, 0.0), ValidationError);
}

namespace {

// Calibrated construction: logits sit at logit(q) and the positive rate at
// each logit value equals q, so T = 1 is loss-optimal.
void calibrated_set(double q, int n, double sharpen, std::vector<std::vector<float>>& logits,
                    std::vector<std::vector<float>>& targets) {
    const double l = std::log(q / (1.0 - q)) * sharpen;
    const int pos = static_cast<int>(std::lround(q * n));
    for (int i = 0; i < n; ++i) {
        logits.push_back({static_cast<float>(l)});
        targets.push_back({i < pos ? 1.0f : 0.0f});
    }
}

}  // namespace

TEST_CASE("fit_temperature returns T near 1 on loss-optimal logits") {
    std::vector<std::vector<float>> logits;
    std::vector<std::vector<float>> targets;
    calibrated_set(0.975, 1000, 1.0, logits, targets);
    calibrated_set(0.025, 1000, 1.0, logits, targets);
    const Temperature t = fit_temperature(logits, targets);
    CHECK(t.value >= 0.99);
    CHECK(t.value <= 1.01);

    // Grid-scan oracle agrees with the golden-section result.
    double best_t = 0, best_loss = 1e300;
    for (double cand = 0.05; cand <= 20.0; cand += 0.001) {
        const double loss = cumulative_bce(logits, targets, cand);
        if (loss < best_loss) {
            best_loss = loss;
            best_t = cand;
        }
    }
    CHECK(std::abs(best_t - t.value) <= 0.01);
}

TEST_CASE("fit_temperature recovers a 3x sharpening") {
    std::vector<std::vector<float>> logits;
    std::vector<std::vector<float>> targets;
    calibrated_set(0.975, 1000, 3.0, logits, targets);
    calibrated_set(0.025, 1000, 3.0, logits, targets);
    calibrated_set(0.8, 1000, 3.0, logits, targets);
    calibrated_set(0.2, 1000, 3.0, logits, targets);
    const Temperature t = fit_temperature(logits, targets);
    CHECK(t.value >= 2.85);
    CHECK(t.value <= 3.15);
}

TEST_CASE("fit_temperature rejects an empty validation set") {
    CHECK_THROWS_AS(fit_temperature({}, {}), ValidationError);
}

TEST_CASE("make_head produces sorted initial biases and the right shapes") {
    Rng rng(22);
    const CoralHead head = make_head(16, 5, rng);
    CHECK(head.weight.shape() == std::vector<int>{16, 1});
    CHECK(head.biases.shape() == std::vector<int>{1, 4});
    CHECK(biases_sorted(head));
    CHECK(head.weight.requires_grad());
    CHECK(head.biases.requires_grad());
}
