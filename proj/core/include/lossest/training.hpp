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

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lossest/losses.hpp"
#include "lossest/nets.hpp"
#include "lossest/rng.hpp"
#include "lossest/synthdata.hpp"
#include "lossest/tensor.hpp"

namespace lossest {

/// Raised when optimization produces non-finite values.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double base_lr = 1e-2;
    double lr_decay_factor = 0.5;
    std::size_t lr_decay_every = 10;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double weight_decay = 5e-4;
    /// Dropout on the estimator's view of the taps (train mode only, same
    /// rate as the trunk). The trunk path is unaffected.
    bool estimator_input_dropout = false;
    std::uint64_t seed = 1;
    LossConfig loss;

    void validate() const;
};

/// Infinite index stream drawing each sample with probability
/// proportional to 1 / count(class of sample).
class WeightedSampler {
public:
    WeightedSampler(const std::vector<std::size_t>& labels, std::uint64_t seed);
    std::size_t next();

private:
    std::vector<double> cumulative_;
    Rng rng_;
};

/// base_lr * decay^floor(epoch / decay_every)
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct AdamState {
    std::map<std::string, Tensor> first_moment;
    std::map<std::string, Tensor> second_moment;
    std::size_t step = 0;
};

/// Bias-corrected Adam with decoupled additive weight decay
/// (lr * wd * param subtracted alongside the update; biases exempt).
/// Only parameters present in grads are touched.
void adam_step(std::map<std::string, Tensor>& params, const GradMap& grads, AdamState& state,
               double lr, const TrainConfig& cfg);

struct EpochRecord {
    std::size_t epoch = 0;
    double lr = 0.0;
    double train_lpri = 0.0;
    double train_laux = 0.0;
    double val_balacc = 0.0;
    double val_kendall_tau = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> records;
    void write_csv(const std::filesystem::path& path) const;
};

struct TrainResult {
    JointModel model;
    TrainHistory history;
};

/// Joint optimization of predictor and estimator under
/// L_total = L_pri + lambda * L_aux. With AuxKind::None the estimator is
/// left untouched and this reduces to vanilla classifier training.
TrainResult train(JointModel model, const LabeledSet& train_set, const LabeledSet& val_set,
                  const TrainConfig& cfg);

/// Eval-mode statistics of the loss estimator against true per-sample
/// weighted cross-entropy on a held-out set.
struct EstimatorStats {
    double kendall_tau = 0.0;
    double variance_ratio = 0.0; // Var(estimates) / Var(true losses)
};
EstimatorStats estimator_stats(const JointModel& model, const LabeledSet& set,
                               const Tensor& class_weights);

/// Eval-mode predictions (argmax logits).
std::vector<std::size_t> predict(const JointModel& model, const Tensor& x);

} // namespace lossest
