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

#include "lossest/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lossest {

namespace {

void require_nonempty(const ScoreSet& s, const char* who) {
    if (s.in_scores.empty() || s.out_scores.empty()) {
        throw std::invalid_argument(std::string(who) + ": both score lists must be nonempty");
    }
}

std::size_t count_at_least(const std::vector<double>& sorted_desc, double threshold) {
    // sorted_desc is descending; count entries >= threshold.
    auto it = std::upper_bound(sorted_desc.begin(), sorted_desc.end(), threshold,
                               [](double t, double v) { return v < t; });
    return static_cast<std::size_t>(it - sorted_desc.begin());
}

std::vector<double> sorted_desc(std::vector<double> v) {
    std::sort(v.begin(), v.end(), std::greater<double>());
    return v;
}

} // namespace

double fpr_at_tpr95(const ScoreSet& scores) {
    require_nonempty(scores, "fpr_at_tpr95");
    const auto in = sorted_desc(scores.in_scores);
    const std::size_t n_in = in.size();
    // Smallest admitted count k with k/n >= 19/20, in exact integer form.
    const std::size_t k = (19 * n_in + 19) / 20;
    const double threshold = in[k - 1];
    const auto out = sorted_desc(scores.out_scores);
    return static_cast<double>(count_at_least(out, threshold)) /
           static_cast<double>(out.size());
}

double detection_error(const ScoreSet& scores) {
    require_nonempty(scores, "detection_error");
    const auto in = sorted_desc(scores.in_scores);
    const auto out = sorted_desc(scores.out_scores);
    const double n_in = static_cast<double>(in.size());
    const double n_out = static_cast<double>(out.size());

    // Threshold above every score: TPR = FPR = 0 -> error 0.5.
    double best = 0.5;
    std::vector<double> candidates;
    candidates.reserve(in.size() + out.size());
    candidates.insert(candidates.end(), in.begin(), in.end());
    candidates.insert(candidates.end(), out.begin(), out.end());
    std::sort(candidates.begin(), candidates.end(), std::greater<double>());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    for (double tau : candidates) {
        const double tpr = static_cast<double>(count_at_least(in, tau)) / n_in;
        const double fpr = static_cast<double>(count_at_least(out, tau)) / n_out;
        best = std::min(best, 0.5 * (1.0 - tpr) + 0.5 * fpr);
    }
    return best;
}

double auroc(const ScoreSet& scores) {
    require_nonempty(scores, "auroc");
    // Pair counting with half credit for ties; counts computed from the
    // sorted lists in O((n+m) log(n+m)).
    const auto in = sorted_desc(scores.in_scores);
    const auto out = sorted_desc(scores.out_scores);
    double wins = 0.0;
    for (double s : in) {
        // out entries strictly below s win; equal entries count half.
        const auto lo = std::lower_bound(out.begin(), out.end(), s, std::greater<double>());
        const auto hi = std::upper_bound(out.begin(), out.end(), s, std::greater<double>());
        const double ties = static_cast<double>(hi - lo);
        const double below = static_cast<double>(out.end() - hi);
        wins += below + 0.5 * ties;
    }
    return wins / (static_cast<double>(in.size()) * static_cast<double>(out.size()));
}

namespace {

double aupr_sweep(const std::vector<double>& pos, const std::vector<double>& neg) {
    const auto p = sorted_desc(pos);
    const auto n = sorted_desc(neg);
    std::vector<double> candidates;
    candidates.reserve(p.size() + n.size());
    candidates.insert(candidates.end(), p.begin(), p.end());
    candidates.insert(candidates.end(), n.begin(), n.end());
    std::sort(candidates.begin(), candidates.end(), std::greater<double>());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    double area = 0.0;
    double prev_recall = 0.0;
    for (double tau : candidates) {
        const double tp = static_cast<double>(count_at_least(p, tau));
        const double fp = static_cast<double>(count_at_least(n, tau));
        if (tp + fp == 0.0) continue;
        const double precision = tp / (tp + fp);
        const double recall = tp / static_cast<double>(p.size());
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

} // namespace

double aupr(const ScoreSet& scores, PositiveClass positive) {
    require_nonempty(scores, "aupr");
    if (positive == PositiveClass::In) {
        return aupr_sweep(scores.in_scores, scores.out_scores);
    }
    std::vector<double> pos(scores.out_scores), neg(scores.in_scores);
    for (auto& v : pos) v = -v;
    for (auto& v : neg) v = -v;
    return aupr_sweep(pos, neg);
}

DetectionReport detection_report(const ScoreSet& scores) {
    DetectionReport r;
    r.fpr_at_tpr95 = fpr_at_tpr95(scores);
    r.detection_error = detection_error(scores);
    r.auroc = auroc(scores);
    r.aupr_in = aupr(scores, PositiveClass::In);
    r.aupr_out = aupr(scores, PositiveClass::Out);
    r.n_in = scores.in_scores.size();
    r.n_out = scores.out_scores.size();
    return r;
}

std::vector<std::optional<double>> per_class_sensitivity(
    const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& labels,
    std::size_t num_classes) {
    if (predictions.size() != labels.size()) {
        throw std::invalid_argument("per_class_sensitivity: length mismatch");
    }
    std::vector<std::size_t> total(num_classes, 0), correct(num_classes, 0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) {
            throw std::invalid_argument("per_class_sensitivity: label out of range");
        }
        ++total[labels[i]];
        if (predictions[i] == labels[i]) ++correct[labels[i]];
    }
    std::vector<std::optional<double>> out(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (total[k] > 0) {
            out[k] = static_cast<double>(correct[k]) / static_cast<double>(total[k]);
        }
    }
    return out;
}

double balanced_accuracy(const std::vector<std::size_t>& predictions,
                         const std::vector<std::size_t>& labels, std::size_t num_classes) {
    const auto sens = per_class_sensitivity(predictions, labels, num_classes);
    double acc = 0.0;
    std::size_t present = 0;
    for (const auto& s : sens) {
        if (s) {
            acc += *s;
            ++present;
        }
    }
    if (present == 0) throw std::invalid_argument("balanced_accuracy: no labels");
    return acc / static_cast<double>(present);
}

double kendall_tau(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("kendall_tau: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw std::invalid_argument("kendall_tau: need at least two samples");

    long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            const double da = a[i] - a[j];
            const double db = b[i] - b[j];
            if (da == 0.0 && db == 0.0) {
                ++ties_a;
                ++ties_b;
            } else if (da == 0.0) {
                ++ties_a;
            } else if (db == 0.0) {
                ++ties_b;
            } else if ((da > 0.0) == (db > 0.0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    }
    const double n0 = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
    const double denom = std::sqrt((n0 - static_cast<double>(ties_a)) *
                                   (n0 - static_cast<double>(ties_b)));
    if (denom == 0.0) return 0.0;
    return static_cast<double>(concordant - discordant) / denom;
}

} // namespace lossest
