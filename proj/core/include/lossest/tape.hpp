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
#include <map>
#include <string>
#include <vector>

#include "lossest/tensor.hpp"

namespace lossest {

struct NodeId {
    std::size_t idx = static_cast<std::size_t>(-1);
    bool valid() const { return idx != static_cast<std::size_t>(-1); }
};

/// Index pair (i, j) into a batch; used by the pairwise ranking loss.
struct PairIdx {
    std::size_t i = 0;
    std::size_t j = 0;
};

enum class LeafKind { Parameter, Input };

struct LeafInfo {
    std::string name;
    LeafKind kind;
    std::vector<std::size_t> shape;
};

using Bindings = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

/// Recorded operation graph for one forward/backward pass. Nodes are
/// appended in topological order; shapes are checked at record time so a
/// mismatch fails before any arithmetic runs. A tape is rebuilt (or
/// rebound) per batch and is confined to one thread at a time.
class Tape {
public:
    // --- graph construction -------------------------------------------
    NodeId input(std::string name, std::vector<std::size_t> shape);
    NodeId param(std::string name, std::vector<std::size_t> shape);
    NodeId constant(Tensor value);

    /// x [n x d] * w [d x m] + b [m] -> [n x m]
    NodeId affine(NodeId x, NodeId w, NodeId b);
    NodeId relu(NodeId x);
    /// Row-wise log-softmax on [n x k], computed via log-sum-exp.
    NodeId log_softmax(NodeId x);
    /// Concatenate [n x c_i] blocks along columns.
    NodeId concat_cols(const std::vector<NodeId>& parts);
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId add_scalar(NodeId x, double c);
    NodeId mul_scalar(NodeId x, double c);
    NodeId sum(NodeId x);
    NodeId mean(NodeId x);
    NodeId reshape(NodeId x, std::vector<std::size_t> shape);
    /// Pick x[i, cols[i]] for each row -> [n].
    NodeId select_columns(NodeId x, std::vector<std::size_t> cols);
    /// Forward identity; backward propagates nothing.
    NodeId stop_gradient(NodeId x);
    /// Mean over pairs of max(0, -I(t_i, t_j) * (e_i - e_j) + margin)
    /// where I is +1 when t_i > t_j and -1 otherwise. Targets act as
    /// constants: no gradient flows into them.
    NodeId pair_rank_hinge(NodeId estimates, NodeId targets,
                           std::vector<PairIdx> pairs, double margin);

    void mark_output(NodeId id);
    NodeId output() const { return output_; }

    // --- execution -----------------------------------------------------
    /// Evaluates every node with the given leaf bindings and returns the
    /// output value. Intermediates are cached for backward.
    const Tensor& forward(const Bindings& bindings);

    /// Gradient of the (scalar) output w.r.t. every leaf, parameters and
    /// inputs alike. Requires a prior forward on this tape.
    GradMap backward(double seed = 1.0);

    /// Value of any node after forward.
    const Tensor& value_of(NodeId id) const;

    const std::vector<std::size_t>& shape_of(NodeId id) const;

    /// Distance of the current evaluation point from the nearest
    /// non-differentiable kink (ReLU input of 0, hinge argument of 0).
    /// Infinity when the tape has none. Valid after forward.
    double kink_distance() const;

    const std::vector<LeafInfo>& leaves() const { return leaves_; }
    std::size_t size() const { return nodes_.size(); }

private:
    enum class Op {
        Input,
        Param,
        Constant,
        Affine,
        Relu,
        LogSoftmax,
        Concat,
        Add,
        Sub,
        Mul,
        AddScalar,
        MulScalar,
        Sum,
        Mean,
        Reshape,
        SelectColumns,
        StopGradient,
        PairRankHinge,
    };

    struct Node {
        Op op;
        std::vector<std::size_t> shape;
        std::vector<std::size_t> args;       // operand node indices
        std::string name;                    // leaves only
        Tensor literal;                      // constants only
        double scalar = 0.0;                 // add/mul scalar, hinge margin
        std::vector<std::size_t> columns;    // select_columns
        std::vector<PairIdx> pairs;          // pair_rank_hinge
    };

    NodeId push(Node node);
    const Node& node(NodeId id) const;
    void require_valid(NodeId id, const char* where) const;
    [[noreturn]] void fail(const Node& n, const std::string& msg) const;
    std::string describe(const Node& n) const;

    std::vector<Node> nodes_;
    std::vector<LeafInfo> leaves_;
    NodeId output_;

    std::vector<Tensor> values_;
    bool forward_done_ = false;
};

} // namespace lossest
