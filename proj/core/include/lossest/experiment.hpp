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
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lossest/metrics.hpp"
#include "lossest/nets.hpp"
#include "lossest/odin.hpp"
#include "lossest/synthdata.hpp"
#include "lossest/training.hpp"

namespace lossest {

/// Generator settings for the built-in benchmark.
struct DataConfig {
    std::size_t classes = 8;
    std::size_t dim = 16;
    std::size_t samples = 8000;
    double imbalance_ratio = 20.0;
    double val_fraction = 0.1;
    std::set<std::size_t> held_out = {5, 6, 7};
    InlierGeometry geometry;
};

/// Per-kind settings for the OOD roster.
struct OodConfig {
    std::vector<OodKind> eval_kinds = {OodKind::MaskPatch, OodKind::MaskPatchHeavy, OodKind::Far,
                                       OodKind::Near, OodKind::Shift};
    double mask_fraction = 0.3;
    double mask_heavy_fraction = 0.7;
    double near_inflation = 1.25;
    double shift_magnitude = 3.0;
    double far_noise_scale = 1.0;
};

/// Inlier data with its stratified train/validation split.
struct Benchmark {
    LabeledSet train;
    LabeledSet val;
};

/// Full benchmark on all classes. Sub-seeds derive from the root seed by
/// label so each stage is independently rerunnable.
Benchmark make_benchmark(const DataConfig& cfg, std::uint64_t root_seed);

/// Benchmark restricted to the non-held-out classes (labels compacted),
/// plus the held-out samples as the novel set.
struct UnseenBenchmark {
    LabeledSet train;
    LabeledSet val;
    LabeledSet novel;
};
UnseenBenchmark make_unseen_benchmark(const DataConfig& cfg, std::uint64_t root_seed);

OodSpec ood_spec_for(OodKind kind, const OodConfig& cfg, std::uint64_t root_seed,
                     const std::string& purpose);

/// Evaluation OOD sets derived from the given inlier base, one per
/// configured kind, in roster order.
std::vector<LabeledSet> make_ood_eval_sets(const LabeledSet& base, const OodConfig& cfg,
                                           std::uint64_t root_seed);

/// The designated tuning set: a far-OOD draw with its own sub-seed,
/// disjoint from the evaluation roster.
LabeledSet make_far_tuning_set(const LabeledSet& base, const OodConfig& cfg,
                               std::uint64_t root_seed);

/// One named row of a detection-report table.
struct OodReportRow {
    std::string dataset;
    DetectionReport report;
};

/// Scores validation inliers against each OOD set with the tuned
/// detector and builds the five-metric report per dataset.
std::vector<OodReportRow> ood_report(const JointModel& model, const OdinParams& params,
                                     const Tensor& val_in_x,
                                     const std::vector<LabeledSet>& ood_sets);

/// Writes rows as a Table-style CSV, metrics in percent:
/// dataset,fpr_at_tpr95,dterr,auroc,aupr_in,aupr_out
void write_ood_report_csv(const std::vector<OodReportRow>& rows,
                          const std::filesystem::path& path);

/// Score dump rows: sample_id,dataset_tag,score,label_if_known.
struct ScoreDump {
    std::string dataset_tag;
    std::vector<double> scores;
    std::vector<long long> labels; // -1 when unknown
};
void write_score_dump_csv(const std::vector<ScoreDump>& dumps, const std::filesystem::path& path);

} // namespace lossest
