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

#include "lossest/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace lossest {

Benchmark make_benchmark(const DataConfig& cfg, std::uint64_t root_seed) {
    const LabeledSet inliers =
        gen_inliers(cfg.classes, cfg.dim, cfg.samples, cfg.imbalance_ratio,
                    Rng::derive(root_seed, "data.inliers"), cfg.geometry);
    auto [train, val] =
        stratified_split(inliers, cfg.val_fraction, Rng::derive(root_seed, "data.split"));
    return {std::move(train), std::move(val)};
}

UnseenBenchmark make_unseen_benchmark(const DataConfig& cfg, std::uint64_t root_seed) {
    const LabeledSet inliers =
        gen_inliers(cfg.classes, cfg.dim, cfg.samples, cfg.imbalance_ratio,
                    Rng::derive(root_seed, "data.inliers"), cfg.geometry);
    auto [seen, novel] = split_unseen_classes(inliers, cfg.held_out);
    auto [train, val] =
        stratified_split(seen, cfg.val_fraction, Rng::derive(root_seed, "data.split.unseen"));
    UnseenBenchmark b;
    b.train = std::move(train);
    b.val = std::move(val);
    b.novel = std::move(novel);
    return b;
}

OodSpec ood_spec_for(OodKind kind, const OodConfig& cfg, std::uint64_t root_seed,
                     const std::string& purpose) {
    OodSpec spec;
    spec.kind = kind;
    spec.mask_fraction =
        kind == OodKind::MaskPatchHeavy ? cfg.mask_heavy_fraction : cfg.mask_fraction;
    spec.covariance_inflation = cfg.near_inflation;
    spec.shift_magnitude = cfg.shift_magnitude;
    spec.noise_scale = cfg.far_noise_scale;
    spec.seed = Rng::derive(root_seed, "ood." + ood_kind_name(kind) + "." + purpose);
    return spec;
}

std::vector<LabeledSet> make_ood_eval_sets(const LabeledSet& base, const OodConfig& cfg,
                                           std::uint64_t root_seed) {
    std::vector<LabeledSet> sets;
    sets.reserve(cfg.eval_kinds.size());
    for (OodKind kind : cfg.eval_kinds) {
        sets.push_back(make_ood(base, ood_spec_for(kind, cfg, root_seed, "eval")));
    }
    return sets;
}

LabeledSet make_far_tuning_set(const LabeledSet& base, const OodConfig& cfg,
                               std::uint64_t root_seed) {
    LabeledSet set = make_ood(base, ood_spec_for(OodKind::Far, cfg, root_seed, "tune"));
    set.tag = "far_tune";
    return set;
}

std::vector<OodReportRow> ood_report(const JointModel& model, const OdinParams& params,
                                     const Tensor& val_in_x,
                                     const std::vector<LabeledSet>& ood_sets) {
    const std::vector<double> in_scores = odin_scores(model, val_in_x, params);
    std::vector<OodReportRow> rows;
    rows.reserve(ood_sets.size());
    for (const LabeledSet& ood : ood_sets) {
        ScoreSet scores;
        scores.in_scores = in_scores;
        scores.out_scores = odin_scores(model, ood.x, params);
        rows.push_back({ood.tag, detection_report(scores)});
    }
    return rows;
}

void write_ood_report_csv(const std::vector<OodReportRow>& rows,
                          const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_ood_report_csv: cannot open " + path.string());
    out << "dataset,fpr_at_tpr95,dterr,auroc,aupr_in,aupr_out\n";
    char buf[160];
    for (const auto& row : rows) {
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.6f",
                      100.0 * row.report.fpr_at_tpr95, 100.0 * row.report.detection_error,
                      100.0 * row.report.auroc, 100.0 * row.report.aupr_in,
                      100.0 * row.report.aupr_out);
        out << row.dataset << ',' << buf << '\n';
    }
    if (!out) throw std::runtime_error("write_ood_report_csv: write failed for " + path.string());
}

void write_score_dump_csv(const std::vector<ScoreDump>& dumps,
                          const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_score_dump_csv: cannot open " + path.string());
    out << "sample_id,dataset_tag,score,label_if_known\n";
    char buf[48];
    for (const auto& dump : dumps) {
        for (std::size_t i = 0; i < dump.scores.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.12g", dump.scores[i]);
            const long long label = i < dump.labels.size() ? dump.labels[i] : -1;
            out << i << ',' << dump.dataset_tag << ',' << buf << ',';
            if (label >= 0) {
                out << label;
            } else {
                out << "na";
            }
            out << '\n';
        }
    }
    if (!out) throw std::runtime_error("write_score_dump_csv: write failed for " + path.string());
}

} // namespace lossest
