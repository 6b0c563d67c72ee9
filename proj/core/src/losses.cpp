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

#include "lossest/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace lossest {

void LossConfig::validate(std::size_t num_classes) const {
    if (!(lambda >= 0.0)) throw std::invalid_argument("LossConfig: lambda must be >= 0");
    if (!(margin >= 0.0)) throw std::invalid_argument("LossConfig: margin must be >= 0");
    if (class_weights.numel() != num_classes) {
        throw std::invalid_argument("LossConfig: need one class weight per class");
    }
    for (double w : class_weights.data()) {
        if (!(w > 0.0)) throw std::invalid_argument("LossConfig: class weights must be positive");
    }
}

std::pair<Tensor, double> weighted_cross_entropy(const Tensor& logits,
                                                 const std::vector<std::size_t>& labels,
                                                 const Tensor& class_weights) {
    if (logits.rank() != 2) {
        throw std::invalid_argument("weighted_cross_entropy: logits must be [n x K]");
    }
    const std::size_t n = logits.rows(), k = logits.cols();
    if (labels.size() != n) {
        throw std::invalid_argument("weighted_cross_entropy: one label per row required");
    }
    if (class_weights.numel() != k) {
        throw std::invalid_argument("weighted_cross_entropy: one weight per class required");
    }

    Tensor per_sample({n});
    double weight_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = labels[i];
        if (y >= k) {
            throw std::invalid_argument("weighted_cross_entropy: label " + std::to_string(y) +
                                        " out of range for K=" + std::to_string(k));
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, logits.at(i, c));
        double acc = 0.0;
        for (std::size_t c = 0; c < k; ++c) acc += std::exp(logits.at(i, c) - mx);
        const double log_prob = logits.at(i, y) - mx - std::log(acc);
        per_sample[i] = class_weights[y] * (-log_prob);
        weight_sum += class_weights[y];
    }
    double total = 0.0;
    for (double v : per_sample.data()) total += v;
    return {std::move(per_sample), total / weight_sum};
}

int indicator(double li, double lj) { return li > lj ? 1 : -1; }

double contrastive_rank_loss(const Tensor& targets, const Tensor& estimates, double margin,
                             const std::vector<PairIdx>& pairs) {
    if (targets.numel() != estimates.numel()) {
        throw std::invalid_argument("contrastive_rank_loss: length mismatch");
    }
    if (targets.numel() < 2) {
        throw std::invalid_argument("contrastive_rank_loss: need at least two samples");
    }
    if (pairs.empty()) throw std::invalid_argument("contrastive_rank_loss: empty pair set");
    double acc = 0.0;
    for (const auto& p : pairs) {
        if (p.i >= targets.numel() || p.j >= targets.numel()) {
            throw std::invalid_argument("contrastive_rank_loss: pair index out of range");
        }
        const double ind = indicator(targets[p.i], targets[p.j]);
        acc += std::max(0.0, -ind * (estimates[p.i] - estimates[p.j]) + margin);
    }
    return acc / static_cast<double>(pairs.size());
}

double mse_aux_loss(const Tensor& targets, const Tensor& estimates) {
    if (targets.numel() != estimates.numel()) {
        throw std::invalid_argument("mse_aux_loss: length mismatch");
    }
    if (targets.numel() == 0) throw std::invalid_argument("mse_aux_loss: empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < targets.numel(); ++i) {
        const double d = estimates[i] - targets[i];
        acc += d * d;
    }
    return acc / static_cast<double>(targets.numel());
}

double total_loss(double l_pri, double l_aux, double lambda) { return l_pri + lambda * l_aux; }

std::vector<PairIdx> disjoint_pairs(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng.index(i)]);
    }
    std::vector<PairIdx> pairs;
    pairs.reserve(n / 2);
    for (std::size_t i = 0; i + 1 < n; i += 2) pairs.push_back({order[i], order[i + 1]});
    return pairs;
}

std::vector<PairIdx> all_index_pairs(std::size_t n) {
    std::vector<PairIdx> pairs;
    pairs.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) pairs.push_back({i, j});
    return pairs;
}

Tensor auto_class_weights(const std::vector<std::size_t>& labels, std::size_t num_classes) {
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t y : labels) {
        if (y >= num_classes) throw std::invalid_argument("auto_class_weights: label out of range");
        ++counts[y];
    }
    // Square-root inverse frequency, normalized to mean 1 over classes.
    // The weighted sampler already equalizes class exposure, so full
    // inverse-frequency weights would correct the imbalance twice.
    Tensor w({num_classes});
    double sum = 0.0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (counts[k] == 0) {
            throw std::invalid_argument("auto_class_weights: class " + std::to_string(k) +
                                        " has no samples");
        }
        w[k] = 1.0 / std::sqrt(static_cast<double>(counts[k]));
        sum += w[k];
    }
    for (std::size_t k = 0; k < num_classes; ++k) {
        w[k] *= static_cast<double>(num_classes) / sum;
    }
    return w;
}

} // namespace lossest
