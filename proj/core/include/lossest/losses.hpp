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

#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "lossest/rng.hpp"
#include "lossest/tape.hpp"
#include "lossest/tensor.hpp"

namespace lossest {

enum class AuxKind { Contrastive, Mse, None };

enum class Pairing { Disjoint, AllPairs };

/// Which per-sample loss the estimator regresses/ranks against: the
/// weighted cross-entropy (the primary objective's own per-sample
/// values) or its unweighted counterpart (pure sample difficulty,
/// stripped of class-weight scale).
enum class AuxTargets { WeightedCe, UnweightedCe };

struct LossConfig {
    double lambda = 0.5;
    double margin = 0.1;
    Tensor class_weights; // [K], all positive
    AuxKind aux = AuxKind::Contrastive;
    Pairing pairing = Pairing::Disjoint;
    AuxTargets aux_targets = AuxTargets::WeightedCe;

    void validate(std::size_t num_classes) const;
};

struct BatchLoss {
    Tensor per_sample; // weighted per-sample cross-entropy, [n]
    double l_pri = 0.0;
    double l_aux = 0.0;
    double l_total = 0.0;
};

/// Per-sample weighted cross-entropy and its weighted mean:
/// per_sample[i] = w[y_i] * (-log softmax(logits_i)[y_i]),
/// l_pri = sum(per_sample) / sum(w[y_i]). Log-sum-exp keeps extreme
/// logits finite.
std::pair<Tensor, double> weighted_cross_entropy(const Tensor& logits,
                                                 const std::vector<std::size_t>& labels,
                                                 const Tensor& class_weights);

/// +1 when li > lj, -1 otherwise (ties fall in the "otherwise" branch).
int indicator(double li, double lj);

/// Mean over the given pairs of max(0, -I(l_i, l_j)*(lhat_i - lhat_j) + margin).
/// Targets are constants: callers differentiate through estimates only.
double contrastive_rank_loss(const Tensor& targets, const Tensor& estimates, double margin,
                             const std::vector<PairIdx>& pairs);

/// Mean squared error between estimates and (constant) targets.
double mse_aux_loss(const Tensor& targets, const Tensor& estimates);

double total_loss(double l_pri, double l_aux, double lambda);

/// Shuffles 0..n-1 and pairs consecutive entries: floor(n/2) disjoint pairs.
std::vector<PairIdx> disjoint_pairs(std::size_t n, Rng& rng);

/// Every i < j.
std::vector<PairIdx> all_index_pairs(std::size_t n);

/// Inverse-frequency weights normalized so the mean over classes is 1:
/// w_k = n / (K * count_k). Every class must be present.
Tensor auto_class_weights(const std::vector<std::size_t>& labels, std::size_t num_classes);

} // namespace lossest
