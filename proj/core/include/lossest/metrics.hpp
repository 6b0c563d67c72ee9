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
#include <optional>
#include <string>
#include <vector>

namespace lossest {

/// Confidence scores for in-distribution samples (positives) and
/// out-of-distribution samples. Detection rule everywhere: inlier iff
/// score >= threshold.
struct ScoreSet {
    std::vector<double> in_scores;
    std::vector<double> out_scores;
};

/// False-positive rate on OOD samples at the largest threshold whose
/// in-distribution true-positive rate is at least 95%.
double fpr_at_tpr95(const ScoreSet& scores);

/// Minimum over all thresholds of the equal-prior decision error
/// 0.5*(1 - TPR) + 0.5*FPR. Never exceeds 0.5.
double detection_error(const ScoreSet& scores);

/// Probability that an in-distribution sample scores above an OOD
/// sample; ties count half.
double auroc(const ScoreSet& scores);

enum class PositiveClass { In, Out };

/// Area under the precision-recall curve with step-wise interpolation,
/// sum of (R_k - R_{k-1}) * P_k over distinct thresholds in descending
/// order. For PositiveClass::Out all scores are negated before the
/// sweep.
double aupr(const ScoreSet& scores, PositiveClass positive);

struct DetectionReport {
    double fpr_at_tpr95 = 0.0;
    double detection_error = 0.0;
    double auroc = 0.0;
    double aupr_in = 0.0;
    double aupr_out = 0.0;
    std::size_t n_in = 0;
    std::size_t n_out = 0;
};

DetectionReport detection_report(const ScoreSet& scores);

/// Mean per-class recall over classes present in the labels.
double balanced_accuracy(const std::vector<std::size_t>& predictions,
                         const std::vector<std::size_t>& labels, std::size_t num_classes);

/// Recall per class; classes absent from the labels get nullopt and are
/// excluded from balanced accuracy.
std::vector<std::optional<double>> per_class_sensitivity(
    const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& labels,
    std::size_t num_classes);

/// Kendall tau-b rank correlation (tie-corrected).
double kendall_tau(const std::vector<double>& a, const std::vector<double>& b);

} // namespace lossest
