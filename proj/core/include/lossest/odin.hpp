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

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "lossest/nets.hpp"
#include "lossest/tensor.hpp"

namespace lossest {

struct OdinParams {
    double temperature = 1.0; // >= 1
    double eta = 0.0;         // perturbation magnitude, >= 0
    double tau = 0.5;         // decision threshold on the confidence score

    void validate() const;
};

/// Maximum temperature-scaled softmax probability of one logit row,
/// computed via log-sum-exp.
double temperature_score(const Tensor& logits, double temperature);

/// Row-wise scores for a [n x K] logit matrix.
std::vector<double> temperature_scores(const Tensor& logits, double temperature);

/// One gradient-sign step against the input:
/// x_hat = x - eta * sign(-grad_x log S(x, T)), with sign(0) = 0 and the
/// scored class fixed to the argmax of the unperturbed logits. Optional
/// coordinate clamp range applied after the step.
Tensor perturb_input(const JointModel& model, const Tensor& x_batch, double temperature,
                     double eta, std::optional<std::pair<double, double>> clamp = std::nullopt);

/// Confidence of the perturbed input: temperature_score after one
/// perturbation step.
std::vector<double> odin_scores(const JointModel& model, const Tensor& x_batch,
                                const OdinParams& params,
                                std::optional<std::pair<double, double>> clamp = std::nullopt);
double odin_score(const JointModel& model, const Tensor& x_row, const OdinParams& params);

enum class Detection { Inlier, Outlier };

/// Inlier iff score >= tau.
Detection detect(double score, double tau);

struct OdinGrids {
    std::vector<double> temperatures = {1.0, 10.0, 100.0, 1000.0};
    std::vector<double> etas = {0.0, 0.001, 0.002, 0.005, 0.01, 0.02};
};

struct TuneResult {
    OdinParams params;
    double tuning_metric_value = 0.0; // FPR@TPR95 on the tuning pair
};

/// Exhaustive grid search minimizing FPR@TPR95 on (validation inliers,
/// OOD tuning set). Ties break toward smaller eta, then smaller
/// temperature. tau is set to the TPR-95 operating point of the winning
/// configuration's in-distribution scores.
TuneResult tune_hyperparams(const JointModel& model, const Tensor& val_in_x,
                            const Tensor& ood_tune_x, const OdinGrids& grids);

void write_params_file(const TuneResult& result, const std::filesystem::path& path);
TuneResult read_params_file(const std::filesystem::path& path);

} // namespace lossest
