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

#include "lossest/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lossest {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
    std::size_t n = shape.empty() ? 0 : 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

} // namespace

NodeId Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    forward_done_ = false;
    return NodeId{nodes_.size() - 1};
}

const Tape::Node& Tape::node(NodeId id) const {
    require_valid(id, "node access");
    return nodes_[id.idx];
}

void Tape::require_valid(NodeId id, const char* where) const {
    if (!id.valid() || id.idx >= nodes_.size()) {
        throw std::invalid_argument(std::string("Tape: invalid node id in ") + where);
    }
}

std::string Tape::describe(const Node& n) const {
    switch (n.op) {
        case Op::Input: return "input '" + n.name + "'";
        case Op::Param: return "param '" + n.name + "'";
        case Op::Constant: return "constant";
        case Op::Affine: return "affine";
        case Op::Relu: return "relu";
        case Op::LogSoftmax: return "log_softmax";
        case Op::Concat: return "concat_cols";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::AddScalar: return "add_scalar";
        case Op::MulScalar: return "mul_scalar";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Reshape: return "reshape";
        case Op::SelectColumns: return "select_columns";
        case Op::StopGradient: return "stop_gradient";
        case Op::PairRankHinge: return "pair_rank_hinge";
    }
    return "?";
}

void Tape::fail(const Node& n, const std::string& msg) const {
    throw std::invalid_argument("Tape: " + describe(n) + ": " + msg);
}

NodeId Tape::input(std::string name, std::vector<std::size_t> shape) {
    for (const auto& l : leaves_) {
        if (l.name == name) throw std::invalid_argument("Tape: duplicate leaf '" + name + "'");
    }
    leaves_.push_back({name, LeafKind::Input, shape});
    Node n;
    n.op = Op::Input;
    n.shape = std::move(shape);
    n.name = std::move(name);
    return push(std::move(n));
}

NodeId Tape::param(std::string name, std::vector<std::size_t> shape) {
    for (const auto& l : leaves_) {
        if (l.name == name) throw std::invalid_argument("Tape: duplicate leaf '" + name + "'");
    }
    leaves_.push_back({name, LeafKind::Parameter, shape});
    Node n;
    n.op = Op::Param;
    n.shape = std::move(shape);
    n.name = std::move(name);
    return push(std::move(n));
}

NodeId Tape::constant(Tensor value) {
    Node n;
    n.op = Op::Constant;
    n.shape = value.shape();
    n.literal = std::move(value);
    return push(std::move(n));
}

NodeId Tape::affine(NodeId x, NodeId w, NodeId b) {
    const auto& xs = node(x).shape;
    const auto& ws = node(w).shape;
    const auto& bs = node(b).shape;
    Node n;
    n.op = Op::Affine;
    if (xs.size() != 2 || ws.size() != 2 || bs.size() != 1) {
        fail(n, "expects x [n x d], w [d x m], b [m], got " + Tensor(xs).shape_string() + ", " +
                    Tensor(ws).shape_string() + ", " + Tensor(bs).shape_string());
    }
    if (xs[1] != ws[0] || ws[1] != bs[0]) {
        fail(n, "inner dimensions disagree: x " + Tensor(xs).shape_string() + " w " +
                    Tensor(ws).shape_string() + " b " + Tensor(bs).shape_string());
    }
    n.shape = {xs[0], ws[1]};
    n.args = {x.idx, w.idx, b.idx};
    return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
    Node n;
    n.op = Op::Relu;
    n.shape = node(x).shape;
    n.args = {x.idx};
    return push(std::move(n));
}

NodeId Tape::log_softmax(NodeId x) {
    const auto& xs = node(x).shape;
    Node n;
    n.op = Op::LogSoftmax;
    if (xs.size() != 2) fail(n, "expects [n x k], got " + Tensor(xs).shape_string());
    n.shape = xs;
    n.args = {x.idx};
    return push(std::move(n));
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
    Node n;
    n.op = Op::Concat;
    if (parts.empty()) fail(n, "needs at least one block");
    std::size_t rows = 0, cols = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& s = node(parts[i]).shape;
        if (s.size() != 2) fail(n, "blocks must be rank 2");
        if (i == 0) rows = s[0];
        if (s[0] != rows) fail(n, "row counts disagree");
        cols += s[1];
        n.args.push_back(parts[i].idx);
    }
    n.shape = {rows, cols};
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Add;
    if (node(a).shape != node(b).shape) fail(n, "operand shapes disagree");
    n.shape = node(a).shape;
    n.args = {a.idx, b.idx};
    return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Sub;
    if (node(a).shape != node(b).shape) fail(n, "operand shapes disagree");
    n.shape = node(a).shape;
    n.args = {a.idx, b.idx};
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Mul;
    if (node(a).shape != node(b).shape) fail(n, "operand shapes disagree");
    n.shape = node(a).shape;
    n.args = {a.idx, b.idx};
    return push(std::move(n));
}

NodeId Tape::add_scalar(NodeId x, double c) {
    Node n;
    n.op = Op::AddScalar;
    n.shape = node(x).shape;
    n.args = {x.idx};
    n.scalar = c;
    return push(std::move(n));
}

NodeId Tape::mul_scalar(NodeId x, double c) {
    Node n;
    n.op = Op::MulScalar;
    n.shape = node(x).shape;
    n.args = {x.idx};
    n.scalar = c;
    return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
    Node n;
    n.op = Op::Sum;
    n.shape = {1};
    n.args = {x.idx};
    return push(std::move(n));
}

NodeId Tape::mean(NodeId x) {
    Node n;
    n.op = Op::Mean;
    n.shape = {1};
    n.args = {x.idx};
    return push(std::move(n));
}

NodeId Tape::reshape(NodeId x, std::vector<std::size_t> shape) {
    Node n;
    n.op = Op::Reshape;
    if (product(shape) != product(node(x).shape)) {
        fail(n, "element count changes from " + Tensor(node(x).shape).shape_string() + " to " +
                    Tensor(shape).shape_string());
    }
    n.shape = std::move(shape);
    n.args = {x.idx};
    return push(std::move(n));
}

NodeId Tape::select_columns(NodeId x, std::vector<std::size_t> cols) {
    const auto& xs = node(x).shape;
    Node n;
    n.op = Op::SelectColumns;
    if (xs.size() != 2) fail(n, "expects [n x k]");
    if (cols.size() != xs[0]) fail(n, "needs one column index per row");
    for (std::size_t c : cols) {
        if (c >= xs[1]) fail(n, "column index " + std::to_string(c) + " out of range");
    }
    n.shape = {xs[0]};
    n.args = {x.idx};
    n.columns = std::move(cols);
    return push(std::move(n));
}

NodeId Tape::stop_gradient(NodeId x) {
    Node n;
    n.op = Op::StopGradient;
    n.shape = node(x).shape;
    n.args = {x.idx};
    return push(std::move(n));
}

NodeId Tape::pair_rank_hinge(NodeId estimates, NodeId targets, std::vector<PairIdx> pairs,
                             double margin) {
    const auto& es = node(estimates).shape;
    const auto& ts = node(targets).shape;
    Node n;
    n.op = Op::PairRankHinge;
    if (es.size() != 1 || ts.size() != 1 || es[0] != ts[0]) {
        fail(n, "estimates and targets must be equal-length vectors");
    }
    if (pairs.empty()) fail(n, "empty pair set");
    for (const auto& p : pairs) {
        if (p.i >= es[0] || p.j >= es[0]) fail(n, "pair index out of range");
    }
    n.shape = {1};
    n.args = {estimates.idx, targets.idx};
    n.pairs = std::move(pairs);
    n.scalar = margin;
    return push(std::move(n));
}

void Tape::mark_output(NodeId id) {
    require_valid(id, "mark_output");
    output_ = id;
}

const Tensor& Tape::value_of(NodeId id) const {
    require_valid(id, "value_of");
    if (!forward_done_) throw std::runtime_error("Tape: value_of before forward");
    return values_[id.idx];
}

const std::vector<std::size_t>& Tape::shape_of(NodeId id) const { return node(id).shape; }

const Tensor& Tape::forward(const Bindings& bindings) {
    if (!output_.valid()) throw std::runtime_error("Tape: forward without an output node");
    values_.assign(nodes_.size(), Tensor{});

    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        Tensor& out = values_[i];
        switch (n.op) {
            case Op::Input:
            case Op::Param: {
                auto it = bindings.find(n.name);
                if (it == bindings.end()) {
                    throw std::invalid_argument("Tape: unbound leaf '" + n.name + "'");
                }
                if (it->second.shape() != n.shape) {
                    throw std::invalid_argument(
                        "Tape: leaf '" + n.name + "' bound with shape " +
                        it->second.shape_string() + ", declared " + Tensor(n.shape).shape_string());
                }
                out = it->second;
                break;
            }
            case Op::Constant:
                out = n.literal;
                break;
            case Op::Affine: {
                const Tensor& x = values_[n.args[0]];
                const Tensor& w = values_[n.args[1]];
                const Tensor& b = values_[n.args[2]];
                const std::size_t rows = x.rows(), inner = x.cols(), cols = w.cols();
                out = Tensor({rows, cols});
                const double* xp = x.data().data();
                const double* wp = w.data().data();
                double* op = out.data().data();
                for (std::size_t r = 0; r < rows; ++r) {
                    double* orow = op + r * cols;
                    for (std::size_t c = 0; c < cols; ++c) orow[c] = b[c];
                    for (std::size_t k = 0; k < inner; ++k) {
                        const double xv = xp[r * inner + k];
                        const double* wrow = wp + k * cols;
                        for (std::size_t c = 0; c < cols; ++c) orow[c] += xv * wrow[c];
                    }
                }
                break;
            }
            case Op::Relu: {
                const Tensor& x = values_[n.args[0]];
                out = x;
                for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
                break;
            }
            case Op::LogSoftmax: {
                const Tensor& x = values_[n.args[0]];
                const std::size_t rows = x.rows(), cols = x.cols();
                out = Tensor({rows, cols});
                for (std::size_t r = 0; r < rows; ++r) {
                    double mx = -std::numeric_limits<double>::infinity();
                    for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, x.at(r, c));
                    double acc = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) acc += std::exp(x.at(r, c) - mx);
                    const double lse = mx + std::log(acc);
                    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = x.at(r, c) - lse;
                }
                break;
            }
            case Op::Concat: {
                const std::size_t rows = n.shape[0], cols = n.shape[1];
                out = Tensor({rows, cols});
                std::size_t off = 0;
                for (std::size_t a : n.args) {
                    const Tensor& part = values_[a];
                    const std::size_t pc = part.cols();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < pc; ++c) out.at(r, off + c) = part.at(r, c);
                    off += pc;
                }
                break;
            }
            case Op::Add: {
                out = values_[n.args[0]];
                const Tensor& b = values_[n.args[1]];
                for (std::size_t k = 0; k < out.numel(); ++k) out[k] += b[k];
                break;
            }
            case Op::Sub: {
                out = values_[n.args[0]];
                const Tensor& b = values_[n.args[1]];
                for (std::size_t k = 0; k < out.numel(); ++k) out[k] -= b[k];
                break;
            }
            case Op::Mul: {
                out = values_[n.args[0]];
                const Tensor& b = values_[n.args[1]];
                for (std::size_t k = 0; k < out.numel(); ++k) out[k] *= b[k];
                break;
            }
            case Op::AddScalar: {
                out = values_[n.args[0]];
                for (auto& v : out.data()) v += n.scalar;
                break;
            }
            case Op::MulScalar: {
                out = values_[n.args[0]];
                for (auto& v : out.data()) v *= n.scalar;
                break;
            }
            case Op::Sum: {
                const Tensor& x = values_[n.args[0]];
                double acc = 0.0;
                for (double v : x.data()) acc += v;
                out = Tensor::scalar(acc);
                break;
            }
            case Op::Mean: {
                const Tensor& x = values_[n.args[0]];
                double acc = 0.0;
                for (double v : x.data()) acc += v;
                out = Tensor::scalar(acc / static_cast<double>(x.numel()));
                break;
            }
            case Op::Reshape: {
                out = Tensor(n.shape, values_[n.args[0]].data());
                break;
            }
            case Op::SelectColumns: {
                const Tensor& x = values_[n.args[0]];
                out = Tensor({x.rows()});
                for (std::size_t r = 0; r < x.rows(); ++r) out[r] = x.at(r, n.columns[r]);
                break;
            }
            case Op::StopGradient: {
                out = values_[n.args[0]];
                break;
            }
            case Op::PairRankHinge: {
                const Tensor& est = values_[n.args[0]];
                const Tensor& tgt = values_[n.args[1]];
                double acc = 0.0;
                for (const auto& p : n.pairs) {
                    const double ind = tgt[p.i] > tgt[p.j] ? 1.0 : -1.0;
                    const double arg = -ind * (est[p.i] - est[p.j]) + n.scalar;
                    acc += arg > 0.0 ? arg : 0.0;
                }
                out = Tensor::scalar(acc / static_cast<double>(n.pairs.size()));
                break;
            }
        }
    }
    forward_done_ = true;
    return values_[output_.idx];
}

GradMap Tape::backward(double seed) {
    if (!forward_done_) throw std::runtime_error("Tape: backward before forward");
    const Node& out_node = nodes_[output_.idx];
    if (product(out_node.shape) != 1) {
        throw std::runtime_error("Tape: backward needs a scalar output, got " +
                                 Tensor(out_node.shape).shape_string());
    }

    std::vector<Tensor> adj(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) adj[i] = Tensor(nodes_[i].shape);
    adj[output_.idx][0] = seed;

    for (std::size_t pos = nodes_.size(); pos-- > 0;) {
        const Node& n = nodes_[pos];
        const Tensor& dy = adj[pos];
        switch (n.op) {
            case Op::Input:
            case Op::Param:
            case Op::Constant:
                break;
            case Op::Affine: {
                const Tensor& x = values_[n.args[0]];
                const Tensor& w = values_[n.args[1]];
                Tensor& dx = adj[n.args[0]];
                Tensor& dw = adj[n.args[1]];
                Tensor& db = adj[n.args[2]];
                const std::size_t rows = x.rows(), inner = x.cols(), cols = w.cols();
                const double* dyp = dy.data().data();
                const double* xp = x.data().data();
                const double* wp = w.data().data();
                double* dxp = dx.data().data();
                double* dwp = dw.data().data();
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* dyrow = dyp + r * cols;
                    // db
                    for (std::size_t c = 0; c < cols; ++c) db[c] += dyrow[c];
                    // dx[r, k] += sum_c dy[r, c] * w[k, c]; dw[k, c] += x[r, k] * dy[r, c]
                    for (std::size_t k = 0; k < inner; ++k) {
                        const double* wrow = wp + k * cols;
                        double* dwrow = dwp + k * cols;
                        const double xv = xp[r * inner + k];
                        double acc = 0.0;
                        for (std::size_t c = 0; c < cols; ++c) {
                            acc += dyrow[c] * wrow[c];
                            dwrow[c] += xv * dyrow[c];
                        }
                        dxp[r * inner + k] += acc;
                    }
                }
                break;
            }
            case Op::Relu: {
                const Tensor& x = values_[n.args[0]];
                Tensor& dx = adj[n.args[0]];
                for (std::size_t k = 0; k < x.numel(); ++k)
                    if (x[k] > 0.0) dx[k] += dy[k];
                break;
            }
            case Op::LogSoftmax: {
                const Tensor& y = values_[pos];
                Tensor& dx = adj[n.args[0]];
                const std::size_t rows = y.rows(), cols = y.cols();
                for (std::size_t r = 0; r < rows; ++r) {
                    double dsum = 0.0;
                    for (std::size_t c = 0; c < cols; ++c) dsum += dy.at(r, c);
                    for (std::size_t c = 0; c < cols; ++c)
                        dx.at(r, c) += dy.at(r, c) - std::exp(y.at(r, c)) * dsum;
                }
                break;
            }
            case Op::Concat: {
                std::size_t off = 0;
                const std::size_t rows = n.shape[0];
                for (std::size_t a : n.args) {
                    Tensor& da = adj[a];
                    const std::size_t pc = nodes_[a].shape[1];
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < pc; ++c) da.at(r, c) += dy.at(r, off + c);
                    off += pc;
                }
                break;
            }
            case Op::Add: {
                Tensor& da = adj[n.args[0]];
                Tensor& db = adj[n.args[1]];
                for (std::size_t k = 0; k < dy.numel(); ++k) {
                    da[k] += dy[k];
                    db[k] += dy[k];
                }
                break;
            }
            case Op::Sub: {
                Tensor& da = adj[n.args[0]];
                Tensor& db = adj[n.args[1]];
                for (std::size_t k = 0; k < dy.numel(); ++k) {
                    da[k] += dy[k];
                    db[k] -= dy[k];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& a = values_[n.args[0]];
                const Tensor& b = values_[n.args[1]];
                Tensor& da = adj[n.args[0]];
                Tensor& db = adj[n.args[1]];
                for (std::size_t k = 0; k < dy.numel(); ++k) {
                    da[k] += dy[k] * b[k];
                    db[k] += dy[k] * a[k];
                }
                break;
            }
            case Op::AddScalar: {
                Tensor& dx = adj[n.args[0]];
                for (std::size_t k = 0; k < dy.numel(); ++k) dx[k] += dy[k];
                break;
            }
            case Op::MulScalar: {
                Tensor& dx = adj[n.args[0]];
                for (std::size_t k = 0; k < dy.numel(); ++k) dx[k] += n.scalar * dy[k];
                break;
            }
            case Op::Sum: {
                Tensor& dx = adj[n.args[0]];
                const double g = dy[0];
                for (auto& v : dx.data()) v += g;
                break;
            }
            case Op::Mean: {
                Tensor& dx = adj[n.args[0]];
                const double g = dy[0] / static_cast<double>(dx.numel());
                for (auto& v : dx.data()) v += g;
                break;
            }
            case Op::Reshape: {
                Tensor& dx = adj[n.args[0]];
                for (std::size_t k = 0; k < dy.numel(); ++k) dx[k] += dy[k];
                break;
            }
            case Op::SelectColumns: {
                Tensor& dx = adj[n.args[0]];
                for (std::size_t r = 0; r < n.columns.size(); ++r)
                    dx.at(r, n.columns[r]) += dy[r];
                break;
            }
            case Op::StopGradient:
                break;
            case Op::PairRankHinge: {
                const Tensor& est = values_[n.args[0]];
                const Tensor& tgt = values_[n.args[1]];
                Tensor& de = adj[n.args[0]];
                const double g = dy[0] / static_cast<double>(n.pairs.size());
                for (const auto& p : n.pairs) {
                    const double ind = tgt[p.i] > tgt[p.j] ? 1.0 : -1.0;
                    const double arg = -ind * (est[p.i] - est[p.j]) + n.scalar;
                    if (arg > 0.0) {
                        de[p.i] += -ind * g;
                        de[p.j] += ind * g;
                    }
                }
                break;
            }
        }
    }

    GradMap grads;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.op == Op::Input || n.op == Op::Param) grads[n.name] = std::move(adj[i]);
    }
    return grads;
}

double Tape::kink_distance() const {
    if (!forward_done_) throw std::runtime_error("Tape: kink_distance before forward");
    double dist = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const Node& n = nodes_[i];
        if (n.op == Op::Relu) {
            for (double v : values_[n.args[0]].data()) dist = std::min(dist, std::abs(v));
        } else if (n.op == Op::PairRankHinge) {
            const Tensor& est = values_[n.args[0]];
            const Tensor& tgt = values_[n.args[1]];
            for (const auto& p : n.pairs) {
                const double ind = tgt[p.i] > tgt[p.j] ? 1.0 : -1.0;
                const double arg = -ind * (est[p.i] - est[p.j]) + n.scalar;
                dist = std::min(dist, std::abs(arg));
            }
        }
    }
    return dist;
}

} // namespace lossest
