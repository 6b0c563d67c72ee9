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

#include "lossest/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "lossest/metrics.hpp"

namespace lossest {

void TrainConfig::validate() const {
    if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be positive");
    if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch size must be positive");
    if (!(base_lr > 0.0)) throw std::invalid_argument("TrainConfig: base lr must be positive");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0)) {
        throw std::invalid_argument("TrainConfig: lr decay factor must be in (0, 1)");
    }
    if (lr_decay_every == 0) throw std::invalid_argument("TrainConfig: lr decay period must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw std::invalid_argument("TrainConfig: betas must be in [0, 1)");
    }
    if (!(adam_epsilon > 0.0)) throw std::invalid_argument("TrainConfig: epsilon must be positive");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("TrainConfig: weight decay must be >= 0");
}

WeightedSampler::WeightedSampler(const std::vector<std::size_t>& labels, std::uint64_t seed)
    : rng_(seed) {
    if (labels.empty()) throw std::invalid_argument("WeightedSampler: empty dataset");
    const std::size_t num_classes = 1 + *std::max_element(labels.begin(), labels.end());
    std::vector<std::size_t> counts(num_classes, 0);
    for (std::size_t y : labels) ++counts[y];

    cumulative_.resize(labels.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        acc += 1.0 / static_cast<double>(counts[labels[i]]);
        cumulative_[i] = acc;
    }
    for (auto& c : cumulative_) c /= acc;
}

std::size_t WeightedSampler::next() {
    const double u = rng_.uniform();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()),
                                 cumulative_.size() - 1);
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    return cfg.base_lr * std::pow(cfg.lr_decay_factor,
                                  static_cast<double>(epoch / cfg.lr_decay_every));
}

void adam_step(std::map<std::string, Tensor>& params, const GradMap& grads, AdamState& state,
               double lr, const TrainConfig& cfg) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.step));

    for (const auto& [name, grad] : grads) {
        auto pit = params.find(name);
        if (pit == params.end()) {
            throw std::invalid_argument("adam_step: gradient for unknown parameter '" + name + "'");
        }
        Tensor& p = pit->second;
        if (!p.same_shape(grad)) {
            throw std::invalid_argument("adam_step: shape mismatch for '" + name + "'");
        }
        Tensor& m = state.first_moment.try_emplace(name, Tensor(p.shape())).first->second;
        Tensor& v = state.second_moment.try_emplace(name, Tensor(p.shape())).first->second;
        const bool decay = cfg.weight_decay > 0.0 && !is_bias_param(name);
        for (std::size_t k = 0; k < p.numel(); ++k) {
            const double g = grad[k];
            m[k] = cfg.adam_beta1 * m[k] + (1.0 - cfg.adam_beta1) * g;
            v[k] = cfg.adam_beta2 * v[k] + (1.0 - cfg.adam_beta2) * g * g;
            const double m_hat = m[k] / bc1;
            const double v_hat = v[k] / bc2;
            double step = lr * m_hat / (std::sqrt(v_hat) + cfg.adam_epsilon);
            if (decay) step += lr * cfg.weight_decay * p[k];
            p[k] -= step;
        }
    }
}

namespace {

constexpr std::size_t kEvalChunk = 512;

/// Eval-mode logits and estimates over a whole set, in fixed chunks.
struct EvalPass {
    Tensor logits;    // [n x K]
    Tensor estimates; // [n]
};

EvalPass eval_forward(const JointModel& model, const Tensor& x, bool with_estimator) {
    const std::size_t n = x.rows(), d = x.cols(), k = model.arch.num_classes;
    EvalPass out;
    out.logits = Tensor({n, k});
    if (with_estimator) out.estimates = Tensor({n});
    for (std::size_t start = 0; start < n; start += kEvalChunk) {
        const std::size_t len = std::min(kEvalChunk, n - start);
        Tensor chunk({len, d});
        std::copy(x.data().begin() + static_cast<long>(start * d),
                  x.data().begin() + static_cast<long>((start + len) * d), chunk.data().begin());
        JointGraph g = build_joint_graph(model, len, ParamMode::Constants, nullptr, with_estimator);
        g.tape.mark_output(with_estimator ? g.estimates : g.logits);
        g.tape.forward({{"x", chunk}});
        const Tensor& logits = g.tape.value_of(g.logits);
        std::copy(logits.data().begin(), logits.data().end(),
                  out.logits.data().begin() + static_cast<long>(start * k));
        if (with_estimator) {
            const Tensor& est = g.tape.value_of(g.estimates);
            std::copy(est.data().begin(), est.data().end(),
                      out.estimates.data().begin() + static_cast<long>(start));
        }
    }
    return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& logits) {
    std::vector<std::size_t> preds(logits.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c) {
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        }
        preds[i] = best;
    }
    return preds;
}

double variance(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    return acc / static_cast<double>(v.size());
}

} // namespace

std::vector<std::size_t> predict(const JointModel& model, const Tensor& x) {
    return argmax_rows(eval_forward(model, x, false).logits);
}

EstimatorStats estimator_stats(const JointModel& model, const LabeledSet& set,
                               const Tensor& class_weights) {
    const EvalPass pass = eval_forward(model, set.x, true);
    const auto [per_sample, l_pri] = weighted_cross_entropy(pass.logits, set.labels, class_weights);
    (void)l_pri;
    EstimatorStats stats;
    stats.kendall_tau = kendall_tau(pass.estimates.data(), per_sample.data());
    const double var_true = variance(per_sample.data());
    stats.variance_ratio = var_true > 0.0 ? variance(pass.estimates.data()) / var_true : 0.0;
    return stats;
}

TrainResult train(JointModel model, const LabeledSet& train_set, const LabeledSet& val_set,
                  const TrainConfig& cfg) {
    cfg.validate();
    model.arch.validate();
    cfg.loss.validate(model.arch.num_classes);
    if (train_set.labels.size() != train_set.size() || val_set.labels.size() != val_set.size()) {
        throw std::invalid_argument("train: labeled train and validation sets required");
    }
    if (train_set.dim() != model.arch.input_dim) {
        throw std::invalid_argument("train: data dimension " + std::to_string(train_set.dim()) +
                                    " does not match model input dim " +
                                    std::to_string(model.arch.input_dim));
    }

    const std::size_t n = train_set.size();
    const std::size_t d = model.arch.input_dim;
    const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const bool with_estimator = cfg.loss.aux != AuxKind::None;
    const Tensor& weights = cfg.loss.class_weights;

    WeightedSampler sampler(train_set.labels, Rng::derive(cfg.seed, "sampler"));
    Rng dropout_rng(Rng::derive(cfg.seed, "dropout"));
    Rng est_dropout_rng(Rng::derive(cfg.seed, "dropout.estimator"));
    Rng pair_rng(Rng::derive(cfg.seed, "pairs"));
    AdamState adam;
    TrainHistory history;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        double epoch_lpri = 0.0, epoch_laux = 0.0;

        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            // Assemble the batch.
            Tensor xb({cfg.batch_size, d});
            std::vector<std::size_t> yb(cfg.batch_size);
            Tensor neg_w({cfg.batch_size});
            double weight_sum = 0.0;
            for (std::size_t i = 0; i < cfg.batch_size; ++i) {
                const std::size_t idx = sampler.next();
                for (std::size_t j = 0; j < d; ++j) xb.at(i, j) = train_set.x.at(idx, j);
                yb[i] = train_set.labels[idx];
                neg_w[i] = -weights[yb[i]];
                weight_sum += weights[yb[i]];
            }

            std::vector<Tensor> masks;
            if (model.arch.dropout_rate > 0.0) {
                masks = make_dropout_masks(model.arch, cfg.batch_size, dropout_rng);
            }
            std::vector<Tensor> est_masks;
            if (with_estimator && cfg.estimator_input_dropout && model.arch.dropout_rate > 0.0) {
                est_masks = make_dropout_masks(model.arch, cfg.batch_size, est_dropout_rng);
            }

            JointGraph g = build_joint_graph(model, cfg.batch_size, ParamMode::Leaves,
                                             masks.empty() ? nullptr : &masks, with_estimator,
                                             est_masks.empty() ? nullptr : &est_masks);
            Tape& t = g.tape;

            // Weighted per-sample cross-entropy and its weighted mean.
            NodeId log_probs = t.log_softmax(g.logits);
            NodeId picked = t.select_columns(log_probs, yb);
            NodeId ell = t.mul(t.constant(neg_w), picked);
            NodeId l_pri = t.mul_scalar(t.sum(ell), 1.0 / weight_sum);

            NodeId l_total = l_pri;
            NodeId l_aux;
            if (cfg.loss.aux != AuxKind::None) {
                NodeId targets;
                if (cfg.loss.aux_targets == AuxTargets::WeightedCe) {
                    targets = t.stop_gradient(ell);
                } else {
                    targets = t.stop_gradient(t.mul_scalar(picked, -1.0));
                }
                if (cfg.loss.aux == AuxKind::Contrastive) {
                    const std::vector<PairIdx> pairs =
                        cfg.loss.pairing == Pairing::AllPairs
                            ? all_index_pairs(cfg.batch_size)
                            : disjoint_pairs(cfg.batch_size, pair_rng);
                    l_aux = t.pair_rank_hinge(g.estimates, targets, pairs, cfg.loss.margin);
                } else {
                    NodeId residual = t.sub(g.estimates, targets);
                    l_aux = t.mean(t.mul(residual, residual));
                }
            }
            if (l_aux.valid()) l_total = t.add(l_pri, t.mul_scalar(l_aux, cfg.loss.lambda));
            t.mark_output(l_total);

            Bindings bindings = model.params;
            bindings["x"] = xb;
            const double loss_value = t.forward(bindings).item();
            if (!std::isfinite(loss_value)) {
                throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                                   ", step " + std::to_string(step));
            }
            epoch_lpri += t.value_of(l_pri).item();
            epoch_laux += l_aux.valid() ? t.value_of(l_aux).item() : 0.0;

            GradMap grads = t.backward();
            grads.erase("x");
            adam_step(model.params, grads, adam, lr, cfg);
        }

        // Epoch bookkeeping, eval mode.
        for (const auto& [name, p] : model.params) {
            if (!p.all_finite()) {
                throw NumericError("train: non-finite parameter '" + name + "' after epoch " +
                                   std::to_string(epoch));
            }
        }
        const EvalPass val_pass = eval_forward(model, val_set.x, true);
        const double balacc = balanced_accuracy(argmax_rows(val_pass.logits), val_set.labels,
                                                model.arch.num_classes);
        const auto [val_ell, val_lpri] =
            weighted_cross_entropy(val_pass.logits, val_set.labels, weights);
        (void)val_lpri;
        const double tau = kendall_tau(val_pass.estimates.data(), val_ell.data());

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_lpri = epoch_lpri / static_cast<double>(steps_per_epoch);
        rec.train_laux = epoch_laux / static_cast<double>(steps_per_epoch);
        rec.val_balacc = balacc;
        rec.val_kendall_tau = tau;
        history.records.push_back(rec);
    }

    return {std::move(model), std::move(history)};
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("TrainHistory: cannot open " + path.string());
    out << "epoch,lr,train_lpri,train_laux,val_balacc,val_kendall_tau\n";
    char buf[160];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g,%.12g,%.12g,%.12g\n", r.epoch, r.lr,
                      r.train_lpri, r.train_laux, r.val_balacc, r.val_kendall_tau);
        out << buf;
    }
    if (!out) throw std::runtime_error("TrainHistory: write failed for " + path.string());
}

} // namespace lossest
