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

#include "lossest/tensor.hpp"

namespace lossest {

struct LabeledSet {
    Tensor x; // [n x d]
    std::vector<std::size_t> labels; // empty for unlabeled (OOD) sets
    std::vector<std::string> class_names;
    std::string tag;

    std::size_t size() const { return x.rank() == 2 ? x.rows() : 0; }
    std::size_t dim() const { return x.rank() == 2 ? x.cols() : 0; }
};

enum class OodKind { MaskPatch, MaskPatchHeavy, Far, Near, Shift };

std::string ood_kind_name(OodKind kind);
OodKind ood_kind_from_name(const std::string& name);

struct OodSpec {
    OodKind kind = OodKind::Far;
    double mask_fraction = 0.3;       // MaskPatch / MaskPatchHeavy
    double covariance_inflation = 1.5; // Near
    double shift_magnitude = 3.0;      // Shift
    double noise_scale = 1.0;          // Far sample spread
    std::uint64_t seed = 0;

    bool operator==(const OodSpec&) const = default;
};

/// Cluster geometry of the inlier generator. Class means sit on scaled
/// axes; per-class spreads span sigma_min..sigma_max with per-dimension
/// anisotropy. A configurable number of trailing-by-one class pairs are
/// variance-discriminated "shells": the outer class shares the inner
/// class's anchor (displaced by shell_offset along a secondary axis)
/// with its spread multiplied by shell_boost, so separating the pair
/// requires spread-sensitive features, not just means.
struct InlierGeometry {
    double mean_scale = 4.5;
    double sigma_min = 0.6;
    double sigma_max = 1.8;
    double aniso_min = 0.6;
    double aniso_max = 1.4;
    std::size_t shell_pairs = 2; // pairs (1,2), (3,4), ... while they fit
    double shell_offset = 1.3;
    double shell_sigma_base = 0.55; // inner spread of the first pair
    double shell_sigma_step = 0.10; // inner spread growth per pair
    double shell_boost = 2.2;
    /// Upper-half dimensions that carry no class signal get this
    /// class-independent spread: wide nuisance coordinates the classifier
    /// learns to ignore.
    double nuisance_sigma = 3.0;
};

/// K anisotropic Gaussian clusters with geometric class-size profile
/// (largest/smallest = imbalance_ratio). Deterministic per seed.
LabeledSet gen_inliers(std::size_t num_classes, std::size_t dim, std::size_t count,
                       double imbalance_ratio, std::uint64_t seed,
                       const InlierGeometry& geometry = {});

/// Derives an OOD set from an inlier set:
///  - MaskPatch/MaskPatchHeavy zero a contiguous block of coordinates
///    covering the given fraction of dimensions (random block position
///    per sample);
///  - Far draws from a Gaussian placed outside the inlier hull;
///  - Near resamples per-class Gaussian fits with inflated covariance;
///  - Shift translates every sample by a fixed random direction of the
///    given magnitude.
/// The result is unlabeled and has as many samples as the base set.
LabeledSet make_ood(const LabeledSet& base, const OodSpec& spec);

/// Partition into (train with compacted labels, novel) where novel holds
/// exactly the held-out classes' samples.
std::pair<LabeledSet, LabeledSet> split_unseen_classes(const LabeledSet& data,
                                                       const std::set<std::size_t>& held_out);

/// Per-class proportional split, rounding half-up with at least one
/// validation sample per class. Every class needs >= 2 samples.
std::pair<LabeledSet, LabeledSet> stratified_split(const LabeledSet& data, double val_fraction,
                                                   std::uint64_t seed);

/// Feature-space augmentation: per-coordinate sign flips with the given
/// probability plus additive Gaussian jitter. Exact identity at
/// (noise_scale=0, flip_prob=0).
Tensor augment(const Tensor& x_batch, double noise_scale, double flip_prob, std::uint64_t seed);

void write_csv(const LabeledSet& data, const std::filesystem::path& path);
LabeledSet read_csv(const std::filesystem::path& path, bool has_labels);

} // namespace lossest
