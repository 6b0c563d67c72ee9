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

#include "lossest/nets.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace lossest {

void ArchConfig::validate() const {
    if (input_dim == 0) throw std::invalid_argument("ArchConfig: input_dim must be positive");
    if (hidden_dims.empty()) throw std::invalid_argument("ArchConfig: trunk needs hidden layers");
    for (std::size_t h : hidden_dims) {
        if (h == 0) throw std::invalid_argument("ArchConfig: zero-width hidden layer");
    }
    if (num_classes < 2) throw std::invalid_argument("ArchConfig: need at least 2 classes");
    if (tap_layers.empty()) throw std::invalid_argument("ArchConfig: estimator needs taps");
    std::set<std::size_t> seen;
    for (std::size_t t : tap_layers) {
        if (t >= hidden_dims.size()) {
            throw std::invalid_argument("ArchConfig: tap layer " + std::to_string(t) +
                                        " out of range for trunk of depth " +
                                        std::to_string(hidden_dims.size()));
        }
        if (!seen.insert(t).second) {
            throw std::invalid_argument("ArchConfig: duplicate tap layer " + std::to_string(t));
        }
    }
    if (tap_embed_dim == 0) throw std::invalid_argument("ArchConfig: tap_embed_dim must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw std::invalid_argument("ArchConfig: dropout_rate must be in [0, 1)");
    }
}

bool is_bias_param(const std::string& name) {
    return name.size() >= 2 && name.compare(name.size() - 2, 2, ".b") == 0;
}

bool is_estimator_param(const std::string& name) { return name.rfind("g.", 0) == 0; }

namespace {

Tensor init_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    Tensor w({fan_in, fan_out});
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : w.data()) v = scale * rng.normal();
    return w;
}

std::string trunk_w(std::size_t i) { return "f.layer" + std::to_string(i) + ".w"; }
std::string trunk_b(std::size_t i) { return "f.layer" + std::to_string(i) + ".b"; }
std::string tap_w(std::size_t layer) { return "g.tap" + std::to_string(layer) + ".w"; }
std::string tap_b(std::size_t layer) { return "g.tap" + std::to_string(layer) + ".b"; }

} // namespace

JointModel init_model(const ArchConfig& arch, std::uint64_t seed) {
    arch.validate();
    JointModel model;
    model.arch = arch;
    model.seed = seed;
    Rng rng(seed);

    std::size_t in = arch.input_dim;
    for (std::size_t i = 0; i < arch.hidden_dims.size(); ++i) {
        const std::size_t out = arch.hidden_dims[i];
        model.params[trunk_w(i)] = init_weight(in, out, rng);
        model.params[trunk_b(i)] = Tensor({out});
        in = out;
    }
    model.params["f.head.w"] = init_weight(in, arch.num_classes, rng);
    model.params["f.head.b"] = Tensor({arch.num_classes});

    for (std::size_t layer : arch.tap_layers) {
        const std::size_t width = arch.hidden_dims[layer];
        model.params[tap_w(layer)] = init_weight(width, arch.tap_embed_dim, rng);
        model.params[tap_b(layer)] = Tensor({arch.tap_embed_dim});
    }
    model.params["g.out.w"] = init_weight(arch.concat_dim(), 1, rng);
    model.params["g.out.b"] = Tensor({1});
    return model;
}

std::vector<Tensor> make_dropout_masks(const ArchConfig& arch, std::size_t batch_size, Rng& rng) {
    std::vector<Tensor> masks;
    if (arch.dropout_rate <= 0.0) return masks;
    const double keep = 1.0 - arch.dropout_rate;
    const double inv_keep = 1.0 / keep;
    masks.reserve(arch.hidden_dims.size());
    for (std::size_t width : arch.hidden_dims) {
        Tensor m({batch_size, width});
        for (auto& v : m.data()) v = rng.bernoulli(keep) ? inv_keep : 0.0;
        masks.push_back(std::move(m));
    }
    return masks;
}

JointGraph build_joint_graph(const JointModel& model, std::size_t batch_size, ParamMode mode,
                             const std::vector<Tensor>* dropout_masks, bool with_estimator,
                             const std::vector<Tensor>* estimator_masks) {
    const ArchConfig& arch = model.arch;
    arch.validate();
    if (batch_size == 0) throw std::invalid_argument("build_joint_graph: empty batch");
    if (dropout_masks && !dropout_masks->empty() &&
        dropout_masks->size() != arch.hidden_dims.size()) {
        throw std::invalid_argument("build_joint_graph: need one dropout mask per hidden layer");
    }
    if (estimator_masks && !estimator_masks->empty() &&
        estimator_masks->size() != arch.hidden_dims.size()) {
        throw std::invalid_argument("build_joint_graph: need one estimator mask per hidden layer");
    }

    JointGraph g;
    Tape& t = g.tape;
    g.x = t.input("x", {batch_size, arch.input_dim});

    auto param_node = [&](const std::string& name) -> NodeId {
        const auto it = model.params.find(name);
        if (it == model.params.end()) {
            throw std::invalid_argument("build_joint_graph: model lacks parameter '" + name + "'");
        }
        if (mode == ParamMode::Leaves) return t.param(name, it->second.shape());
        return t.constant(it->second);
    };

    std::vector<NodeId> tap_nodes(arch.hidden_dims.size());
    NodeId h = g.x;
    for (std::size_t i = 0; i < arch.hidden_dims.size(); ++i) {
        NodeId act = t.relu(t.affine(h, param_node(trunk_w(i)), param_node(trunk_b(i))));
        tap_nodes[i] = act; // tap is the raw post-activation output
        if (dropout_masks && !dropout_masks->empty()) {
            h = t.mul(act, t.constant((*dropout_masks)[i]));
        } else {
            h = act;
        }
    }
    g.logits = t.affine(h, param_node("f.head.w"), param_node("f.head.b"));

    for (std::size_t layer : arch.tap_layers) g.taps.push_back(tap_nodes[layer]);

    if (with_estimator) {
        std::vector<NodeId> embeds;
        embeds.reserve(arch.tap_layers.size());
        for (std::size_t layer : arch.tap_layers) {
            NodeId tap_in = tap_nodes[layer];
            if (estimator_masks && !estimator_masks->empty()) {
                tap_in = t.mul(tap_in, t.constant((*estimator_masks)[layer]));
            }
            embeds.push_back(
                t.relu(t.affine(tap_in, param_node(tap_w(layer)), param_node(tap_b(layer)))));
        }
        NodeId cat = embeds.size() == 1 ? embeds[0] : t.concat_cols(embeds);
        NodeId col = t.affine(cat, param_node("g.out.w"), param_node("g.out.b"));
        g.estimates = t.reshape(col, {batch_size});
    }
    return g;
}

PredictorOut predictor_forward(const JointModel& model, const Tensor& x_batch, bool train_mode,
                               Rng* dropout_rng) {
    if (x_batch.rank() != 2 || x_batch.cols() != model.arch.input_dim) {
        throw std::invalid_argument("predictor_forward: x must be [n x " +
                                    std::to_string(model.arch.input_dim) + "], got " +
                                    x_batch.shape_string());
    }
    std::vector<Tensor> masks;
    if (train_mode && model.arch.dropout_rate > 0.0) {
        if (!dropout_rng) {
            throw std::invalid_argument("predictor_forward: train mode needs a dropout rng");
        }
        masks = make_dropout_masks(model.arch, x_batch.rows(), *dropout_rng);
    }
    JointGraph g = build_joint_graph(model, x_batch.rows(), ParamMode::Constants,
                                     masks.empty() ? nullptr : &masks, /*with_estimator=*/false);
    g.tape.mark_output(g.logits);
    // Output of this tape is non-scalar; forward alone is fine.
    g.tape.forward({{"x", x_batch}});
    PredictorOut out;
    out.logits = g.tape.value_of(g.logits);
    out.taps.reserve(g.taps.size());
    for (NodeId id : g.taps) out.taps.push_back(g.tape.value_of(id));
    return out;
}

Tensor estimator_forward(const JointModel& model, const std::vector<Tensor>& taps) {
    const ArchConfig& arch = model.arch;
    if (taps.size() != arch.tap_layers.size()) {
        throw std::invalid_argument("estimator_forward: expected " +
                                    std::to_string(arch.tap_layers.size()) + " taps, got " +
                                    std::to_string(taps.size()));
    }
    for (std::size_t i = 0; i < taps.size(); ++i) {
        const std::size_t want = arch.hidden_dims[arch.tap_layers[i]];
        if (taps[i].rank() != 2 || taps[i].cols() != want || taps[i].rows() != taps[0].rows()) {
            throw std::invalid_argument("estimator_forward: tap " + std::to_string(i) +
                                        " has shape " + taps[i].shape_string() + ", expected [n x " +
                                        std::to_string(want) + "]");
        }
    }
    const std::size_t n = taps[0].rows();

    Tape t;
    Bindings bindings;
    std::vector<NodeId> embeds;
    for (std::size_t i = 0; i < taps.size(); ++i) {
        const std::size_t layer = arch.tap_layers[i];
        NodeId tap_in = t.input("tap" + std::to_string(i), taps[i].shape());
        bindings["tap" + std::to_string(i)] = taps[i];
        embeds.push_back(t.relu(t.affine(tap_in, t.constant(model.params.at(tap_w(layer))),
                                         t.constant(model.params.at(tap_b(layer))))));
    }
    NodeId cat = embeds.size() == 1 ? embeds[0] : t.concat_cols(embeds);
    NodeId col = t.affine(cat, t.constant(model.params.at("g.out.w")),
                          t.constant(model.params.at("g.out.b")));
    NodeId out = t.reshape(col, {n});
    t.mark_output(out);
    return t.forward(bindings);
}

} // namespace lossest
