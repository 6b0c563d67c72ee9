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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lossest/rng.hpp"
#include "lossest/tape.hpp"
#include "lossest/tensor.hpp"

namespace lossest {

/// Topology of the predictor trunk and the loss-estimator head.
///
/// The predictor is a fully connected ReLU trunk followed by a linear
/// classification head. The estimator reads the trunk's post-activation
/// outputs at `tap_layers`, transforms each through its own linear+ReLU
/// block of `tap_embed_dim` units, concatenates, and maps the result to
/// one scalar estimate per sample with a final linear layer.
struct ArchConfig {
    std::size_t input_dim = 16;
    std::vector<std::size_t> hidden_dims = {64, 64, 64, 64};
    std::size_t num_classes = 8;
    std::vector<std::size_t> tap_layers = {0, 1, 2, 3};
    std::size_t tap_embed_dim = 32;
    double dropout_rate = 0.4;

    void validate() const;
    std::size_t concat_dim() const { return tap_layers.size() * tap_embed_dim; }
    bool operator==(const ArchConfig&) const = default;
};

/// Predictor parameters (f.*) plus estimator parameters (g.*). Every
/// tensor shape is determined by the architecture; the init seed is kept
/// so checkpoints are self-describing.
struct JointModel {
    ArchConfig arch;
    std::uint64_t seed = 0;
    std::map<std::string, Tensor> params;
};

bool is_bias_param(const std::string& name);
bool is_estimator_param(const std::string& name);

/// Deterministic initialization: weights drawn from N(0, 2/fan_in),
/// biases exactly zero.
JointModel init_model(const ArchConfig& arch, std::uint64_t seed);

struct PredictorOut {
    Tensor logits;              // [n x K]
    std::vector<Tensor> taps;   // post-activation trunk outputs, tap order
};

/// Forward pass of the predictor. With train_mode, inverted dropout is
/// applied after each hidden layer using masks drawn from dropout_rng;
/// taps are taken before dropout. Eval mode ignores the rng.
PredictorOut predictor_forward(const JointModel& model, const Tensor& x_batch,
                               bool train_mode = false, Rng* dropout_rng = nullptr);

/// Loss estimates, one scalar per sample, from trunk taps. Unclamped;
/// negative estimates are legal (only differences matter downstream).
Tensor estimator_forward(const JointModel& model, const std::vector<Tensor>& taps);

enum class ParamMode { Leaves, Constants };

/// Handles into a recorded joint forward graph.
struct JointGraph {
    Tape tape;
    NodeId x;
    NodeId logits;
    std::vector<NodeId> taps;
    NodeId estimates; // invalid when built without the estimator
};

/// Records the predictor (and optionally estimator) computation for a
/// batch of the given size. Parameters enter as named leaves (so
/// backward yields their gradients) or as baked-in constants (for
/// input-only gradients, e.g. the detector's perturbation). Dropout
/// masks, when given, multiply each hidden layer after its tap is taken;
/// mask entries are 0 or 1/(1-rate). estimator_masks, when given, are
/// applied to the estimator's view of each tap (one mask per hidden
/// layer, unused entries ignored) without touching the trunk path.
JointGraph build_joint_graph(const JointModel& model, std::size_t batch_size, ParamMode mode,
                             const std::vector<Tensor>* dropout_masks, bool with_estimator,
                             const std::vector<Tensor>* estimator_masks = nullptr);

/// One inverted-dropout mask [batch x width] per hidden layer.
std::vector<Tensor> make_dropout_masks(const ArchConfig& arch, std::size_t batch_size, Rng& rng);

} // namespace lossest
