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

#include "lossest/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "lossest/rng.hpp"

namespace lossest {

std::string ood_kind_name(OodKind kind) {
    switch (kind) {
        case OodKind::MaskPatch: return "mask";
        case OodKind::MaskPatchHeavy: return "mask_heavy";
        case OodKind::Far: return "far";
        case OodKind::Near: return "near";
        case OodKind::Shift: return "shift";
    }
    return "?";
}

OodKind ood_kind_from_name(const std::string& name) {
    if (name == "mask") return OodKind::MaskPatch;
    if (name == "mask_heavy") return OodKind::MaskPatchHeavy;
    if (name == "far") return OodKind::Far;
    if (name == "near") return OodKind::Near;
    if (name == "shift") return OodKind::Shift;
    throw std::invalid_argument("unknown OOD kind '" + name + "'");
}

namespace {

std::vector<std::size_t> class_sizes(std::size_t num_classes, std::size_t count,
                                     double imbalance_ratio) {
    std::vector<double> profile(num_classes);
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double t = num_classes == 1
                             ? 0.0
                             : static_cast<double>(k) / static_cast<double>(num_classes - 1);
        profile[k] = std::pow(imbalance_ratio, -t);
    }
    const double total = std::accumulate(profile.begin(), profile.end(), 0.0);
    std::vector<std::size_t> sizes(num_classes);
    long long assigned = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        sizes[k] = static_cast<std::size_t>(
            std::llround(static_cast<double>(count) * profile[k] / total));
        if (sizes[k] == 0) sizes[k] = 1;
        assigned += static_cast<long long>(sizes[k]);
    }
    // Settle rounding residue on a middle class so the extreme classes
    // keep the exact ratio.
    long long residue = static_cast<long long>(count) - assigned;
    const std::size_t adjust = num_classes >= 3 ? 1 : 0;
    const long long adjusted = static_cast<long long>(sizes[adjust]) + residue;
    if (adjusted < 1) throw std::invalid_argument("gen_inliers: count too small for class profile");
    sizes[adjust] = static_cast<std::size_t>(adjusted);
    return sizes;
}

} // namespace

LabeledSet gen_inliers(std::size_t num_classes, std::size_t dim, std::size_t count,
                       double imbalance_ratio, std::uint64_t seed,
                       const InlierGeometry& geometry) {
    if (num_classes < 2) throw std::invalid_argument("gen_inliers: need at least 2 classes");
    if (dim < 2) throw std::invalid_argument("gen_inliers: need at least 2 dimensions");
    if (count < num_classes) throw std::invalid_argument("gen_inliers: fewer samples than classes");
    if (!(imbalance_ratio >= 1.0)) {
        throw std::invalid_argument("gen_inliers: imbalance ratio must be >= 1");
    }

    Rng rng(seed);
    const auto sizes = class_sizes(num_classes, count, imbalance_ratio);

    // Means on scaled axes; when K > d the axes repeat with a growing
    // radius so the means stay distinct.
    std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim, 0.0));
    for (std::size_t k = 0; k < num_classes; ++k) {
        const std::size_t axis = k % dim;
        const double radius =
            geometry.mean_scale * (1.0 + static_cast<double>(k / dim) * 0.5);
        means[k][axis] = radius;
    }

    // Spreads descend with the class index: frequent classes are wide,
    // rare (and default held-out) classes are tight clusters.
    std::vector<double> sigma(num_classes);
    std::vector<std::vector<double>> aniso(num_classes, std::vector<double>(dim, 1.0));
    for (std::size_t k = 0; k < num_classes; ++k) {
        const double t = num_classes == 1
                             ? 0.0
                             : static_cast<double>(k) / static_cast<double>(num_classes - 1);
        sigma[k] = geometry.sigma_max * std::pow(geometry.sigma_min / geometry.sigma_max, t);
        for (std::size_t j = 0; j < dim; ++j) {
            aniso[k][j] = geometry.aniso_min + (geometry.aniso_max - geometry.aniso_min) * rng.uniform();
        }
    }

    // Shell pairs: (1,2), (3,4), ... The outer class anchors on the
    // inner class's mean, shifted along a secondary axis, with a wider
    // isotropic spread.
    std::vector<bool> shell_axis(dim, false);
    for (std::size_t p = 0; p < geometry.shell_pairs; ++p) {
        const std::size_t inner = 2 * p + 1, outer = 2 * p + 2;
        if (outer >= num_classes) break;
        const std::size_t offset_axis = (inner % dim + dim / 2) % dim;
        means[outer] = means[inner];
        means[outer][offset_axis] += geometry.shell_offset;
        shell_axis[offset_axis] = true;
        sigma[inner] = geometry.shell_sigma_base + static_cast<double>(p) * geometry.shell_sigma_step;
        sigma[outer] = sigma[inner] * geometry.shell_boost;
        aniso[inner].assign(dim, 1.0);
        aniso[outer].assign(dim, 1.0);
    }

    // Wide class-independent noise on the unused upper-half axes. The
    // per-class spread applies through a multiplier so shells keep their
    // isotropic core on the signal axes.
    std::vector<double> nuisance(dim, 0.0);
    if (num_classes <= dim) {
        for (std::size_t j = std::max(num_classes, dim / 2); j < dim; ++j) {
            if (!shell_axis[j]) nuisance[j] = geometry.nuisance_sigma;
        }
    }

    LabeledSet set;
    set.x = Tensor({count, dim});
    set.labels.reserve(count);
    set.tag = "inliers";
    for (std::size_t k = 0; k < num_classes; ++k) {
        set.class_names.push_back("c" + std::to_string(k));
    }

    std::size_t row = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        for (std::size_t i = 0; i < sizes[k]; ++i, ++row) {
            for (std::size_t j = 0; j < dim; ++j) {
                const double spread =
                    nuisance[j] > 0.0 ? nuisance[j] : sigma[k] * aniso[k][j];
                set.x.at(row, j) = means[k][j] + spread * rng.normal();
            }
            set.labels.push_back(k);
        }
    }
    return set;
}

LabeledSet make_ood(const LabeledSet& base, const OodSpec& spec) {
    if (base.size() == 0) throw std::invalid_argument("make_ood: empty base set");
    const std::size_t n = base.size(), d = base.dim();
    Rng rng(spec.seed);

    LabeledSet out;
    out.tag = ood_kind_name(spec.kind);
    out.x = Tensor({n, d});

    switch (spec.kind) {
        case OodKind::MaskPatch:
        case OodKind::MaskPatchHeavy: {
            const double frac = spec.mask_fraction;
            if (!(frac > 0.0 && frac <= 1.0)) {
                throw std::invalid_argument("make_ood: mask fraction must be in (0, 1]");
            }
            const std::size_t width = std::clamp<std::size_t>(
                static_cast<std::size_t>(std::llround(frac * static_cast<double>(d))), 1, d);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t start = rng.index(d - width + 1);
                for (std::size_t j = 0; j < d; ++j) {
                    const bool masked = j >= start && j < start + width;
                    out.x.at(i, j) = masked ? 0.0 : base.x.at(i, j);
                }
            }
            break;
        }
        case OodKind::Far: {
            // Center the far cluster well outside the inlier hull:
            // centroid + (3 * max radius + 20 * sigma * sqrt(d)) along the
            // subspace with the least between-class signal. Displacing
            // along low-signal coordinates keeps the set geometrically
            // far without sliding up any class's logit cone.
            if (base.labels.size() != n) {
                throw std::invalid_argument("make_ood: far kind needs a labeled base set");
            }
            std::vector<double> centroid(d, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j) centroid[j] += base.x.at(i, j);
            for (auto& c : centroid) c /= static_cast<double>(n);
            double max_radius = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double r2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double dv = base.x.at(i, j) - centroid[j];
                    r2 += dv * dv;
                }
                max_radius = std::max(max_radius, std::sqrt(r2));
            }
            // Exact inlier diameter, so the displacement can stay at the
            // smallest value that keeps every cross-set distance above it.
            double diameter = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = i + 1; j < n; ++j) {
                    double r2 = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        const double dv = base.x.at(i, c) - base.x.at(j, c);
                        r2 += dv * dv;
                    }
                    diameter = std::max(diameter, r2);
                }
            }
            diameter = std::sqrt(diameter);

            // Between-class variance of per-dimension class means.
            const std::size_t num_classes =
                1 + *std::max_element(base.labels.begin(), base.labels.end());
            std::vector<std::vector<double>> mean(num_classes, std::vector<double>(d, 0.0));
            std::vector<std::size_t> counts(num_classes, 0);
            for (std::size_t i = 0; i < n; ++i) {
                ++counts[base.labels[i]];
                for (std::size_t j = 0; j < d; ++j) mean[base.labels[i]][j] += base.x.at(i, j);
            }
            for (std::size_t k = 0; k < num_classes; ++k) {
                if (counts[k] == 0) continue;
                for (auto& m : mean[k]) m /= static_cast<double>(counts[k]);
            }
            std::vector<double> between(d, 0.0);
            for (std::size_t j = 0; j < d; ++j) {
                double mu = 0.0;
                for (std::size_t k = 0; k < num_classes; ++k) mu += mean[k][j];
                mu /= static_cast<double>(num_classes);
                for (std::size_t k = 0; k < num_classes; ++k) {
                    const double dv = mean[k][j] - mu;
                    between[j] += dv * dv;
                }
                between[j] /= static_cast<double>(num_classes);
            }
            double mean_between = 0.0;
            for (double b : between) mean_between += b;
            mean_between /= static_cast<double>(d);
            std::vector<std::size_t> quiet;
            for (std::size_t j = 0; j < d; ++j) {
                if (between[j] <= 0.1 * mean_between) quiet.push_back(j);
            }
            if (quiet.empty()) {
                for (std::size_t j = 0; j < d; ++j) quiet.push_back(j);
            }

            const double sigma = spec.noise_scale;
            // Worst-case far-sample deviation from its center, with slack.
            const double far_tail = sigma * (std::sqrt(static_cast<double>(d)) + 5.0);
            const double dist = diameter + max_radius + far_tail + 1.0;
            const double unit = 1.0 / std::sqrt(static_cast<double>(quiet.size()));
            std::vector<double> center = centroid;
            for (std::size_t j : quiet) center[j] += dist * unit;
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    out.x.at(i, j) = center[j] + sigma * rng.normal();
                }
            }
            break;
        }
        case OodKind::Near: {
            if (base.labels.size() != n) {
                throw std::invalid_argument("make_ood: near kind needs a labeled base set");
            }
            const std::size_t num_classes =
                1 + *std::max_element(base.labels.begin(), base.labels.end());
            // Per-class mean and per-dimension std of the base samples.
            std::vector<std::vector<double>> mean(num_classes, std::vector<double>(d, 0.0));
            std::vector<std::vector<double>> var(num_classes, std::vector<double>(d, 0.0));
            std::vector<std::size_t> counts(num_classes, 0);
            for (std::size_t i = 0; i < n; ++i) {
                ++counts[base.labels[i]];
                for (std::size_t j = 0; j < d; ++j) mean[base.labels[i]][j] += base.x.at(i, j);
            }
            for (std::size_t k = 0; k < num_classes; ++k) {
                if (counts[k] == 0) continue;
                for (auto& m : mean[k]) m /= static_cast<double>(counts[k]);
            }
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = base.labels[i];
                for (std::size_t j = 0; j < d; ++j) {
                    const double dv = base.x.at(i, j) - mean[k][j];
                    var[k][j] += dv * dv;
                }
            }
            for (std::size_t k = 0; k < num_classes; ++k) {
                if (counts[k] == 0) continue;
                for (auto& v : var[k]) v /= static_cast<double>(counts[k]);
            }
            // Resample with inflated covariance, class draw proportional
            // to the base composition; labels are discarded.
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t k = base.labels[rng.index(n)];
                for (std::size_t j = 0; j < d; ++j) {
                    out.x.at(i, j) =
                        mean[k][j] + spec.covariance_inflation * std::sqrt(var[k][j]) * rng.normal();
                }
            }
            break;
        }
        case OodKind::Shift: {
            if (spec.shift_magnitude == 0.0) {
                out.x = base.x;
                break;
            }
            std::vector<double> dir(d);
            double norm2 = 0.0;
            for (auto& v : dir) {
                v = rng.normal();
                norm2 += v * v;
            }
            const double inv_norm = 1.0 / std::sqrt(norm2);
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    out.x.at(i, j) = base.x.at(i, j) + spec.shift_magnitude * dir[j] * inv_norm;
                }
            }
            break;
        }
    }
    return out;
}

std::pair<LabeledSet, LabeledSet> split_unseen_classes(const LabeledSet& data,
                                                       const std::set<std::size_t>& held_out) {
    if (data.labels.size() != data.size()) {
        throw std::invalid_argument("split_unseen_classes: unlabeled data");
    }
    if (held_out.empty()) throw std::invalid_argument("split_unseen_classes: empty held-out set");
    const std::size_t num_classes = data.class_names.size();
    for (std::size_t k : held_out) {
        if (k >= num_classes) {
            throw std::invalid_argument("split_unseen_classes: held-out class out of range");
        }
    }
    if (held_out.size() >= num_classes) {
        throw std::invalid_argument("split_unseen_classes: held-out set covers all classes");
    }

    std::vector<std::size_t> remap(num_classes, static_cast<std::size_t>(-1));
    std::size_t next = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (!held_out.count(k)) remap[k] = next++;
    }

    std::vector<std::size_t> train_rows, novel_rows;
    for (std::size_t i = 0; i < data.size(); ++i) {
        (held_out.count(data.labels[i]) ? novel_rows : train_rows).push_back(i);
    }

    const std::size_t d = data.dim();
    auto take = [&](const std::vector<std::size_t>& rows, bool relabel) {
        LabeledSet s;
        s.x = Tensor({rows.size(), d});
        s.labels.reserve(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t j = 0; j < d; ++j) s.x.at(r, j) = data.x.at(rows[r], j);
            const std::size_t y = data.labels[rows[r]];
            s.labels.push_back(relabel ? remap[y] : y);
        }
        return s;
    };

    LabeledSet train = take(train_rows, true);
    train.tag = "train_seen";
    for (std::size_t k = 0; k < num_classes; ++k) {
        if (!held_out.count(k)) train.class_names.push_back(data.class_names[k]);
    }
    LabeledSet novel = take(novel_rows, false);
    novel.tag = "novel";
    novel.class_names = data.class_names;
    return {std::move(train), std::move(novel)};
}

std::pair<LabeledSet, LabeledSet> stratified_split(const LabeledSet& data, double val_fraction,
                                                   std::uint64_t seed) {
    if (data.labels.size() != data.size()) {
        throw std::invalid_argument("stratified_split: unlabeled data");
    }
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
        throw std::invalid_argument("stratified_split: fraction must be in (0, 1)");
    }
    const std::size_t num_classes = data.class_names.size();
    std::vector<std::vector<std::size_t>> by_class(num_classes);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);

    Rng rng(seed);
    std::vector<std::size_t> val_rows, train_rows;
    for (std::size_t k = 0; k < num_classes; ++k) {
        auto& rows = by_class[k];
        if (rows.empty()) continue;
        if (rows.size() < 2) {
            throw std::invalid_argument("stratified_split: class " + std::to_string(k) +
                                        " has a single sample");
        }
        for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[rng.index(i)]);
        std::size_t n_val = static_cast<std::size_t>(
            std::floor(val_fraction * static_cast<double>(rows.size()) + 0.5));
        n_val = std::clamp<std::size_t>(n_val, 1, rows.size() - 1);
        val_rows.insert(val_rows.end(), rows.begin(), rows.begin() + static_cast<long>(n_val));
        train_rows.insert(train_rows.end(), rows.begin() + static_cast<long>(n_val), rows.end());
    }
    std::sort(val_rows.begin(), val_rows.end());
    std::sort(train_rows.begin(), train_rows.end());

    const std::size_t d = data.dim();
    auto take = [&](const std::vector<std::size_t>& rows, const char* tag) {
        LabeledSet s;
        s.x = Tensor({rows.size(), d});
        s.labels.reserve(rows.size());
        s.class_names = data.class_names;
        s.tag = tag;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t j = 0; j < d; ++j) s.x.at(r, j) = data.x.at(rows[r], j);
            s.labels.push_back(data.labels[rows[r]]);
        }
        return s;
    };
    return {take(train_rows, "train"), take(val_rows, "val")};
}

Tensor augment(const Tensor& x_batch, double noise_scale, double flip_prob, std::uint64_t seed) {
    if (x_batch.rank() != 2) throw std::invalid_argument("augment: expected [n x d]");
    if (!(noise_scale >= 0.0)) throw std::invalid_argument("augment: noise scale must be >= 0");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) {
        throw std::invalid_argument("augment: flip probability must be in [0, 1]");
    }
    if (noise_scale == 0.0 && flip_prob == 0.0) return x_batch;

    Rng rng(seed);
    Tensor out = x_batch;
    for (auto& v : out.data()) {
        if (flip_prob > 0.0 && rng.bernoulli(flip_prob)) v = -v;
        if (noise_scale > 0.0) v += noise_scale * rng.normal();
    }
    return out;
}

void write_csv(const LabeledSet& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
    const std::size_t d = data.dim();
    const bool labeled = data.labels.size() == data.size();
    for (std::size_t j = 0; j < d; ++j) {
        if (j) out << ',';
        out << 'f' << j;
    }
    if (labeled) out << ",label";
    out << '\n';
    char buf[40];
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            if (j) out << ',';
            std::snprintf(buf, sizeof(buf), "%.17g", data.x.at(i, j));
            out << buf;
        }
        if (labeled) out << ',' << data.labels[i];
        out << '\n';
    }
    if (!out) throw std::runtime_error("write_csv: write failed for " + path.string());
}

LabeledSet read_csv(const std::filesystem::path& path, bool has_labels) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_csv: cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("read_csv: empty file " + path.string());

    std::size_t columns = 1;
    for (char c : line) {
        if (c == ',') ++columns;
    }
    const std::size_t d = has_labels ? columns - 1 : columns;
    if (d == 0) throw std::runtime_error("read_csv: no feature columns in " + path.string());

    std::vector<double> values;
    std::vector<std::size_t> labels;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            if (col < d) {
                values.push_back(std::stod(cell));
            } else {
                labels.push_back(static_cast<std::size_t>(std::stoul(cell)));
            }
            ++col;
        }
        if (col != columns) {
            throw std::runtime_error("read_csv: ragged row " + std::to_string(rows + 2) + " in " +
                                     path.string());
        }
        ++rows;
    }

    LabeledSet set;
    set.x = Tensor({rows, d}, std::move(values));
    set.labels = std::move(labels);
    set.tag = path.stem().string();
    if (has_labels && !set.labels.empty()) {
        const std::size_t num_classes = 1 + *std::max_element(set.labels.begin(), set.labels.end());
        for (std::size_t k = 0; k < num_classes; ++k) set.class_names.push_back("c" + std::to_string(k));
    }
    return set;
}

} // namespace lossest
