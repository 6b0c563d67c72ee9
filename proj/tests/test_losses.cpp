// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lossest/gradcheck.hpp"
#include "lossest/losses.hpp"
#include "lossest/rng.hpp"
#include "oracles.hpp"

using namespace lossest;

TEST_CASE("weighted CE: uniform weights, zero logits, K = 4 gives log 4") {
    Tensor logits({3, 4});
    const auto [per_sample, l_pri] =
        weighted_cross_entropy(logits, {0, 2, 3}, Tensor::full({4}, 1.0));
    for (double v : per_sample.data()) CHECK(v == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(l_pri == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK(std::log(4.0) == doctest::Approx(1.3863).epsilon(1e-4));
}

TEST_CASE("weighted CE: confident correct logit") {
    Tensor logits({1, 3}, {10.0, 0.0, 0.0});
    const auto [per_sample, l_pri] = weighted_cross_entropy(logits, {0}, Tensor::full({3}, 1.0));
    // -log(e^10 / (e^10 + 2)) = log(1 + 2 e^-10) = 9.0799e-5 to 3 digits
    const double expected = std::log1p(2.0 * std::exp(-10.0));
    CHECK(per_sample[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(per_sample[0] == doctest::Approx(9.08e-5).epsilon(1e-3));
    CHECK(l_pri == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("weighted CE: doubling weights doubles per-sample, fixes mean") {
    Rng rng(3);
    Tensor logits({5, 3});
    for (auto& v : logits.data()) v = rng.normal();
    const std::vector<std::size_t> labels = {0, 1, 2, 1, 0};
    Tensor w({3}, {0.5, 1.0, 2.0});
    Tensor w2({3}, {1.0, 2.0, 4.0});
    const auto [ps1, m1] = weighted_cross_entropy(logits, labels, w);
    const auto [ps2, m2] = weighted_cross_entropy(logits, labels, w2);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(ps2[i] == doctest::Approx(2.0 * ps1[i]).epsilon(1e-12));
    }
    CHECK(m2 == doctest::Approx(m1).epsilon(1e-12));
}

TEST_CASE("weighted CE: label out of range fails") {
    Tensor logits({1, 3});
    CHECK_THROWS_AS(weighted_cross_entropy(logits, {3}, Tensor::full({3}, 1.0)),
                    std::invalid_argument);
}

TEST_CASE("weighted CE: extreme logits stay finite (log-sum-exp)") {
    Tensor logits({2, 3}, {500.0, -500.0, 0.0, -500.0, 500.0, 250.0});
    const auto [per_sample, l_pri] =
        weighted_cross_entropy(logits, {1, 0}, Tensor::full({3}, 1.0));
    CHECK(per_sample.all_finite());
    CHECK(std::isfinite(l_pri));
    CHECK(per_sample[0] == doctest::Approx(1000.0).epsilon(1e-9));
}

TEST_CASE("indicator cases from the pairwise definition") {
    CHECK(indicator(2.0, 1.0) == 1);
    CHECK(indicator(1.0, 1.0) == -1); // ties land in the otherwise branch
    CHECK(indicator(0.5, 2.0) == -1);
}

TEST_CASE("contrastive ranking loss: hand-evaluated single pair") {
    Tensor ell({2}, {2.0, 1.0});
    Tensor lhat({2}, {0.5, 0.9});
    const double v = contrastive_rank_loss(ell, lhat, 0.1, {{0, 1}});
    CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("contrastive ranking loss: agreement with margin slack gives zero") {
    Tensor ell({4}, {3.0, 1.0, 2.5, 0.2});
    Tensor lhat({4}, {1.0, 0.2, 0.7, -0.4}); // same ordering, all gaps >= 0.1
    const double v = contrastive_rank_loss(ell, lhat, 0.1, all_index_pairs(4));
    CHECK(v == 0.0);
}

TEST_CASE("contrastive ranking loss: identical estimates cost the margin") {
    Tensor ell({3}, {1.0, 2.0, 3.0});
    Tensor lhat = Tensor::full({3}, 0.4);
    const double v = contrastive_rank_loss(ell, lhat, 0.25, all_index_pairs(3));
    CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("contrastive ranking loss: empty pair set fails") {
    Tensor ell({2}, {1.0, 2.0});
    Tensor lhat({2}, {0.1, 0.2});
    CHECK_THROWS_AS(contrastive_rank_loss(ell, lhat, 0.1, {}), std::invalid_argument);
}

TEST_CASE("property: adding a constant to every estimate leaves the loss unchanged") {
    Rng rng(10);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 2 + rng.index(6);
        Tensor ell({n}), lhat({n}), shifted({n});
        const double c = 3.0 * rng.normal();
        for (std::size_t i = 0; i < n; ++i) {
            ell[i] = rng.normal();
            lhat[i] = rng.normal();
            shifted[i] = lhat[i] + c;
        }
        const auto pairs = all_index_pairs(n);
        const double a = contrastive_rank_loss(ell, lhat, 0.1, pairs);
        const double b = contrastive_rank_loss(ell, shifted, 0.1, pairs);
        CHECK(a == doctest::Approx(b).epsilon(1e-9));
    }
}

TEST_CASE("property: zero loss iff every pair agrees in sign with margin-sized gap") {
    Rng rng(12);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t n = 2 + rng.index(5);
        Tensor ell({n}), lhat({n});
        for (std::size_t i = 0; i < n; ++i) {
            ell[i] = rng.normal();
            lhat[i] = rng.normal();
        }
        const double gamma = 0.2;
        const auto pairs = all_index_pairs(n);
        const double loss = contrastive_rank_loss(ell, lhat, gamma, pairs);
        bool all_ok = true;
        for (const auto& p : pairs) {
            const double ind = indicator(ell[p.i], ell[p.j]);
            if (ind * (lhat[p.i] - lhat[p.j]) < gamma) all_ok = false;
        }
        CHECK((loss == 0.0) == all_ok);
    }
}

TEST_CASE("oracle: contrastive loss matches brute-force recomputation on random instances") {
    Rng rng(2718);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 2 + rng.index(9);
        Tensor ell({n}), lhat({n});
        for (std::size_t i = 0; i < n; ++i) {
            ell[i] = 2.0 * rng.normal();
            lhat[i] = 2.0 * rng.normal();
        }
        const double gamma = rng.uniform();
        const auto pairs = all_index_pairs(n);
        // literal transcription of the per-pair hinge
        double expect = 0.0;
        for (const auto& p : pairs) {
            const double ind = ell[p.i] > ell[p.j] ? 1.0 : -1.0;
            expect += std::max(0.0, -ind * (lhat[p.i] - lhat[p.j]) + gamma);
        }
        expect /= static_cast<double>(pairs.size());
        const double got = contrastive_rank_loss(ell, lhat, gamma, pairs);
        CHECK(got == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("oracle: weighted CE matches naive softmax on random small instances") {
    Rng rng(314);
    for (int rep = 0; rep < 1000; ++rep) {
        const std::size_t n = 1 + rng.index(6), k = 2 + rng.index(5);
        Tensor logits({n, k});
        for (auto& v : logits.data()) v = 3.0 * rng.normal();
        std::vector<std::size_t> labels(n);
        Tensor w({k});
        for (auto& v : w.data()) v = 0.25 + rng.uniform();
        for (auto& y : labels) y = rng.index(k);

        const auto [per_sample, l_pri] = weighted_cross_entropy(logits, labels, w);
        double wsum = 0.0, total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> row(k);
            for (std::size_t c = 0; c < k; ++c) row[c] = logits.at(i, c);
            const double expect = w[labels[i]] * oracles::ce_direct(row, labels[i]);
            CHECK(per_sample[i] == doctest::Approx(expect).epsilon(1e-12));
            total += expect;
            wsum += w[labels[i]];
        }
        CHECK(l_pri == doctest::Approx(total / wsum).epsilon(1e-12));
    }
}

TEST_CASE("mse auxiliary loss") {
    Tensor a({2}, {1.0, 3.0});
    Tensor b({2}, {2.0, 2.0});
    CHECK(mse_aux_loss(a, a) == 0.0);
    CHECK(mse_aux_loss(a, b) == doctest::Approx(1.0).epsilon(1e-15));

    SUBCASE("quadratic homogeneity in the residual") {
        Tensor zero({2}, {0.0, 0.0});
        Tensor r({2}, {0.7, -1.1});
        Tensor r3({2}, {2.1, -3.3});
        CHECK(mse_aux_loss(zero, r3) == doctest::Approx(9.0 * mse_aux_loss(zero, r)).epsilon(1e-12));
    }
}

TEST_CASE("total loss composition") {
    CHECK(total_loss(1.7, 0.9, 0.0) == 1.7);
    CHECK(total_loss(1.0, 0.4, 0.5) == doctest::Approx(1.2).epsilon(1e-15));
    CHECK(total_loss(2.5, 0.0, 123.0) == 2.5);
}

TEST_CASE("gradient of L_aux w.r.t. estimates matches finite differences away from kinks") {
    Rng rng(5150);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 4 + rng.index(4);
        Tensor ell({n}), lhat({n});
        for (std::size_t i = 0; i < n; ++i) {
            ell[i] = rng.normal();
            lhat[i] = rng.normal();
        }
        // Disjoint pairs: no shared index, so no exact-cancellation
        // coordinates that a finite difference cannot certify.
        std::vector<PairIdx> pairs;
        for (std::size_t i = 0; i + 1 < n; i += 2) pairs.push_back({i, i + 1});

        // contrastive through the tape
        {
            Tape t;
            NodeId est = t.input("est", {n});
            t.mark_output(t.pair_rank_hinge(est, t.constant(ell), pairs, 0.1));
            const auto res = grad_check(t, {{"est", lhat}}, 1e-6);
            if (res.kink_distance > 1e-3) CHECK(res.max_rel_error < 1e-6);
        }
        // mse through the tape
        {
            Tape t;
            NodeId est = t.input("est", {n});
            NodeId r = t.sub(est, t.constant(ell));
            t.mark_output(t.mean(t.mul(r, r)));
            const auto res = grad_check(t, {{"est", lhat}}, 1e-6);
            CHECK(res.max_rel_error < 1e-5);
        }
    }
}

TEST_CASE("pair helpers") {
    Rng rng(8);
    const auto pairs = disjoint_pairs(10, rng);
    CHECK(pairs.size() == 5);
    std::vector<bool> used(10, false);
    for (const auto& p : pairs) {
        CHECK(!used[p.i]);
        CHECK(!used[p.j]);
        used[p.i] = used[p.j] = true;
    }
    CHECK(all_index_pairs(4).size() == 6);

    SUBCASE("odd batch drops one index") {
        Rng r2(9);
        CHECK(disjoint_pairs(7, r2).size() == 3);
    }
}

TEST_CASE("auto class weights: sqrt inverse frequency, mean one over classes") {
    const std::vector<std::size_t> labels = {0, 0, 0, 1};
    const Tensor w = auto_class_weights(labels, 2);
    // w_k proportional to 1/sqrt(count_k), normalized to mean 1:
    // w_0 = 2*(1/sqrt(3)) / (1/sqrt(3) + 1) = sqrt(3) - 1
    CHECK(w[0] == doctest::Approx(std::sqrt(3.0) - 1.0).epsilon(1e-12));
    CHECK(w[1] == doctest::Approx(3.0 - std::sqrt(3.0)).epsilon(1e-12));
    CHECK((w[0] + w[1]) / 2.0 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(auto_class_weights({0, 0}, 2), std::invalid_argument);
}

TEST_CASE("loss config validation") {
    LossConfig cfg;
    cfg.class_weights = Tensor::full({3}, 1.0);
    CHECK_NOTHROW(cfg.validate(3));
    cfg.lambda = -0.1;
    CHECK_THROWS_AS(cfg.validate(3), std::invalid_argument);
    cfg.lambda = 0.5;
    cfg.class_weights = Tensor({3}, {1.0, 0.0, 1.0});
    CHECK_THROWS_AS(cfg.validate(3), std::invalid_argument);
}
