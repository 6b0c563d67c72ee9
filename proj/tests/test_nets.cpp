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

#include <algorithm>
#include <cmath>

#include "lossest/nets.hpp"
#include "lossest/rng.hpp"
#include "oracles.hpp"

using namespace lossest;

namespace {

ArchConfig small_arch() {
    ArchConfig arch;
    arch.input_dim = 6;
    arch.hidden_dims = {10, 8, 8};
    arch.num_classes = 4;
    arch.tap_layers = {0, 2};
    arch.tap_embed_dim = 5;
    arch.dropout_rate = 0.0;
    return arch;
}

Tensor random_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    Tensor x({n, d});
    for (auto& v : x.data()) v = rng.normal();
    return x;
}

} // namespace

TEST_CASE("arch validation rejects bad configs") {
    ArchConfig arch = small_arch();
    arch.num_classes = 1;
    CHECK_THROWS_AS(arch.validate(), std::invalid_argument);
    arch = small_arch();
    arch.tap_layers = {0, 0};
    CHECK_THROWS_AS(arch.validate(), std::invalid_argument);
    arch = small_arch();
    arch.tap_layers = {3};
    CHECK_THROWS_AS(arch.validate(), std::invalid_argument);
    arch = small_arch();
    arch.dropout_rate = 1.0;
    CHECK_THROWS_AS(arch.validate(), std::invalid_argument);
    CHECK_THROWS_AS(init_model(arch, 0), std::invalid_argument);
}

TEST_CASE("init: same (arch, seed) twice is bitwise identical") {
    const ArchConfig arch = small_arch();
    const JointModel a = init_model(arch, 42);
    const JointModel b = init_model(arch, 42);
    REQUIRE(a.params.size() == b.params.size());
    for (const auto& [name, t] : a.params) {
        CHECK(t.data() == b.params.at(name).data());
    }
    const JointModel c = init_model(arch, 43);
    bool any_diff = false;
    for (const auto& [name, t] : a.params) {
        if (t.data() != c.params.at(name).data()) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("init: biases exactly zero") {
    const JointModel m = init_model(small_arch(), 7);
    for (const auto& [name, t] : m.params) {
        if (is_bias_param(name)) {
            for (double v : t.data()) CHECK(v == 0.0);
        }
    }
}

TEST_CASE("init: weight variance tracks 2/fan_in for layers with >= 256 weights") {
    ArchConfig arch;
    arch.input_dim = 32;
    arch.hidden_dims = {64, 64};
    arch.num_classes = 8;
    arch.tap_layers = {0, 1};
    arch.tap_embed_dim = 16;
    arch.dropout_rate = 0.0;
    const JointModel m = init_model(arch, 2024);
    for (const auto& [name, t] : m.params) {
        if (is_bias_param(name) || t.numel() < 256) continue;
        const std::size_t fan_in = t.shape()[0];
        double mean = 0.0;
        for (double v : t.data()) mean += v;
        mean /= static_cast<double>(t.numel());
        double var = 0.0;
        for (double v : t.data()) var += (v - mean) * (v - mean);
        var /= static_cast<double>(t.numel());
        const double expected = 2.0 / static_cast<double>(fan_in);
        INFO(name, " var=", var, " expected=", expected);
        CHECK(var > 0.8 * expected);
        CHECK(var < 1.2 * expected);
    }
}

TEST_CASE("predictor: all-zero parameters give zero logits") {
    JointModel m = init_model(small_arch(), 3);
    for (auto& [name, t] : m.params) {
        (void)name;
        for (auto& v : t.data()) v = 0.0;
    }
    const Tensor x = random_batch(5, 6, 11);
    const PredictorOut out = predictor_forward(m, x);
    for (double v : out.logits.data()) CHECK(v == 0.0);
}

TEST_CASE("predictor: single row equals same row inside a batch (eval mode)") {
    const JointModel m = init_model(small_arch(), 9);
    const Tensor batch = random_batch(8, 6, 12);
    const PredictorOut full = predictor_forward(m, batch);
    for (std::size_t r : {std::size_t{0}, std::size_t{3}, std::size_t{7}}) {
        Tensor row({1, 6});
        for (std::size_t j = 0; j < 6; ++j) row.at(0, j) = batch.at(r, j);
        const PredictorOut single = predictor_forward(m, row);
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(single.logits.at(0, c) == doctest::Approx(full.logits.at(r, c)).epsilon(1e-12));
        }
    }
}

TEST_CASE("predictor and estimator match the straight-line oracle") {
    const JointModel m = init_model(small_arch(), 31);
    const Tensor x = random_batch(3, 6, 77);
    const auto oracle = oracles::straight_line_forward(m, x);

    const PredictorOut out = predictor_forward(m, x);
    REQUIRE(out.logits.shape() == oracle.logits.shape());
    for (std::size_t k = 0; k < out.logits.numel(); ++k) {
        CHECK(out.logits[k] == doctest::Approx(oracle.logits[k]).epsilon(1e-12));
    }
    REQUIRE(out.taps.size() == oracle.taps.size());
    for (std::size_t i = 0; i < out.taps.size(); ++i) {
        for (std::size_t k = 0; k < out.taps[i].numel(); ++k) {
            CHECK(out.taps[i][k] == doctest::Approx(oracle.taps[i][k]).epsilon(1e-12));
        }
    }

    const Tensor est = estimator_forward(m, out.taps);
    REQUIRE(est.numel() == 3);
    for (std::size_t k = 0; k < est.numel(); ++k) {
        CHECK(est[k] == doctest::Approx(oracle.estimates[k]).epsilon(1e-12));
    }
}

TEST_CASE("estimator: zero estimator weights leave only the output bias") {
    JointModel m = init_model(small_arch(), 4);
    for (auto& [name, t] : m.params) {
        if (is_estimator_param(name)) {
            for (auto& v : t.data()) v = 0.0;
        }
    }
    m.params["g.out.b"][0] = 0.73;
    const Tensor x = random_batch(6, 6, 5);
    const PredictorOut out = predictor_forward(m, x);
    const Tensor est = estimator_forward(m, out.taps);
    for (double v : est.data()) CHECK(v == doctest::Approx(0.73).epsilon(1e-15));
}

TEST_CASE("estimator: permuting batch rows permutes estimates identically") {
    const JointModel m = init_model(small_arch(), 8);
    const Tensor x = random_batch(5, 6, 21);
    const std::vector<std::size_t> perm = {4, 2, 0, 3, 1};
    Tensor xp({5, 6});
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 6; ++j) xp.at(i, j) = x.at(perm[i], j);

    const Tensor e = estimator_forward(m, predictor_forward(m, x).taps);
    const Tensor ep = estimator_forward(m, predictor_forward(m, xp).taps);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(ep[i] == doctest::Approx(e[perm[i]]).epsilon(1e-14));
    }
}

TEST_CASE("estimator: tap count mismatch fails") {
    const JointModel m = init_model(small_arch(), 6);
    const PredictorOut out = predictor_forward(m, random_batch(2, 6, 1));
    std::vector<Tensor> toofew(out.taps.begin(), out.taps.end() - 1);
    CHECK_THROWS_AS(estimator_forward(m, toofew), std::invalid_argument);
}

TEST_CASE("tap fidelity: taps equal trunk activations recomputed from a prefix") {
    const JointModel m = init_model(small_arch(), 13);
    const Tensor x = random_batch(4, 6, 2);
    const PredictorOut out = predictor_forward(m, x);

    // Recompute trunk prefix with plain loops.
    Tensor h = x;
    std::vector<Tensor> acts;
    for (std::size_t i = 0; i < m.arch.hidden_dims.size(); ++i) {
        h = oracles::sl_relu(oracles::sl_affine(h, m.params.at("f.layer" + std::to_string(i) + ".w"),
                                                m.params.at("f.layer" + std::to_string(i) + ".b")));
        acts.push_back(h);
    }
    for (std::size_t i = 0; i < m.arch.tap_layers.size(); ++i) {
        const Tensor& expect = acts[m.arch.tap_layers[i]];
        REQUIRE(out.taps[i].shape() == expect.shape());
        CHECK(out.taps[i].data() == expect.data()); // bitwise: no copy-transform drift
    }
}

TEST_CASE("eval-mode determinism; dropout only acts in train mode") {
    ArchConfig arch = small_arch();
    arch.dropout_rate = 0.5;
    const JointModel m = init_model(arch, 19);
    const Tensor x = random_batch(16, 6, 3);

    const PredictorOut a = predictor_forward(m, x);
    const PredictorOut b = predictor_forward(m, x);
    CHECK(a.logits.data() == b.logits.data()); // bitwise

    Rng drop1(99), drop2(99), drop3(100);
    const PredictorOut t1 = predictor_forward(m, x, true, &drop1);
    const PredictorOut t2 = predictor_forward(m, x, true, &drop2);
    const PredictorOut t3 = predictor_forward(m, x, true, &drop3);
    CHECK(t1.logits.data() == t2.logits.data());   // same mask stream
    CHECK(t1.logits.data() != t3.logits.data());   // different mask stream
    CHECK(t1.logits.data() != a.logits.data());    // dropout changed something

    SUBCASE("taps are taken before dropout") {
        // With a fresh mask stream the taps still equal the eval-mode
        // activations of the same input.
        Rng drop(7);
        const PredictorOut train_out = predictor_forward(m, x, true, &drop);
        const auto oracle = oracles::straight_line_forward(m, x);
        // First tap (layer 0) is pre-dropout, so it matches eval exactly.
        CHECK(train_out.taps[0].data() == oracle.taps[0].data());
    }
}

TEST_CASE("dropout masks are inverted-scale bernoulli") {
    ArchConfig arch = small_arch();
    arch.dropout_rate = 0.4;
    Rng rng(55);
    const auto masks = make_dropout_masks(arch, 200, rng);
    REQUIRE(masks.size() == arch.hidden_dims.size());
    const double inv_keep = 1.0 / 0.6;
    std::size_t kept = 0, total = 0;
    for (const auto& m : masks) {
        for (double v : m.data()) {
            CHECK((v == 0.0 || v == doctest::Approx(inv_keep).epsilon(1e-15)));
            kept += v != 0.0;
            ++total;
        }
    }
    const double keep_rate = static_cast<double>(kept) / static_cast<double>(total);
    CHECK(keep_rate == doctest::Approx(0.6).epsilon(0.05));
}

TEST_CASE("predictor rejects wrong input dimension") {
    const JointModel m = init_model(small_arch(), 1);
    CHECK_THROWS_AS(predictor_forward(m, random_batch(2, 5, 1)), std::invalid_argument);
}
