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

#include "lossest/odin.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "lossest/metrics.hpp"

namespace lossest {

void OdinParams::validate() const {
    if (!(temperature >= 1.0)) throw std::invalid_argument("OdinParams: temperature must be >= 1");
    if (!(eta >= 0.0)) throw std::invalid_argument("OdinParams: eta must be >= 0");
    if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("OdinParams: tau must be in (0, 1)");
}

double temperature_score(const Tensor& logits, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature_score: T must be positive");
    const std::size_t k = logits.numel();
    if (k == 0) throw std::invalid_argument("temperature_score: empty logits");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) mx = std::max(mx, logits[c] / temperature);
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) acc += std::exp(logits[c] / temperature - mx);
    return std::exp(-std::log(acc)); // max entry contributes exp(0) = 1
}

std::vector<double> temperature_scores(const Tensor& logits, double temperature) {
    if (logits.rank() != 2) throw std::invalid_argument("temperature_scores: expected [n x K]");
    std::vector<double> scores(logits.rows());
    const std::size_t k = logits.cols();
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        Tensor row({k});
        for (std::size_t c = 0; c < k; ++c) row[c] = logits.at(i, c);
        scores[i] = temperature_score(row, temperature);
    }
    return scores;
}

namespace {

Tensor eval_logits(const JointModel& model, const Tensor& x) {
    JointGraph g = build_joint_graph(model, x.rows(), ParamMode::Constants, nullptr, false);
    g.tape.mark_output(g.logits);
    g.tape.forward({{"x", x}});
    return g.tape.value_of(g.logits);
}

} // namespace

Tensor perturb_input(const JointModel& model, const Tensor& x_batch, double temperature,
                     double eta, std::optional<std::pair<double, double>> clamp) {
    if (x_batch.rank() != 2 || x_batch.cols() != model.arch.input_dim) {
        throw std::invalid_argument("perturb_input: x must be [n x input_dim]");
    }
    if (!(eta >= 0.0)) throw std::invalid_argument("perturb_input: eta must be >= 0");
    if (eta == 0.0) return x_batch;

    // Class identity is fixed from the unperturbed logits.
    const Tensor logits = eval_logits(model, x_batch);
    std::vector<std::size_t> top_class(x_batch.rows());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c) {
            if (logits.at(i, c) > logits.at(i, best)) best = c;
        }
        top_class[i] = best;
    }

    // Gradient of sum_i log S_i w.r.t. the batch; rows are independent,
    // so each row of the gradient is its sample's own grad_x log S.
    JointGraph g = build_joint_graph(model, x_batch.rows(), ParamMode::Constants, nullptr, false);
    Tape& t = g.tape;
    NodeId scaled = t.mul_scalar(g.logits, 1.0 / temperature);
    NodeId log_probs = t.log_softmax(scaled);
    NodeId log_s = t.select_columns(log_probs, top_class);
    t.mark_output(t.sum(log_s));
    t.forward({{"x", x_batch}});
    const Tensor grad = t.backward().at("x");

    Tensor out = x_batch;
    for (std::size_t k = 0; k < out.numel(); ++k) {
        const double neg = -grad[k];
        const double sgn = neg > 0.0 ? 1.0 : (neg < 0.0 ? -1.0 : 0.0);
        out[k] -= eta * sgn;
        if (clamp) out[k] = std::clamp(out[k], clamp->first, clamp->second);
    }
    return out;
}

std::vector<double> odin_scores(const JointModel& model, const Tensor& x_batch,
                                const OdinParams& params,
                                std::optional<std::pair<double, double>> clamp) {
    const Tensor perturbed =
        perturb_input(model, x_batch, params.temperature, params.eta, clamp);
    return temperature_scores(eval_logits(model, perturbed), params.temperature);
}

double odin_score(const JointModel& model, const Tensor& x_row, const OdinParams& params) {
    Tensor x = x_row;
    if (x.rank() == 1) x = Tensor({1, x.numel()}, x.data());
    if (x.rank() != 2 || x.rows() != 1) {
        throw std::invalid_argument("odin_score: expected a single sample");
    }
    return odin_scores(model, x, params)[0];
}

Detection detect(double score, double tau) {
    return score >= tau ? Detection::Inlier : Detection::Outlier;
}

TuneResult tune_hyperparams(const JointModel& model, const Tensor& val_in_x,
                            const Tensor& ood_tune_x, const OdinGrids& grids) {
    if (grids.temperatures.empty() || grids.etas.empty()) {
        throw std::invalid_argument("tune_hyperparams: empty grid");
    }
    std::set<double> temps(grids.temperatures.begin(), grids.temperatures.end());
    std::set<double> etas(grids.etas.begin(), grids.etas.end());

    bool have_best = false;
    double best_metric = 0.0;
    OdinParams best;
    std::vector<double> best_in_scores;

    // Ordered iteration (ascending eta, then T) plus strict improvement
    // makes the tie-break "smaller eta, then smaller T" automatic.
    for (double eta : etas) {
        for (double temperature : temps) {
            OdinParams candidate;
            candidate.temperature = temperature;
            candidate.eta = eta;
            ScoreSet scores;
            scores.in_scores = odin_scores(model, val_in_x, candidate);
            scores.out_scores = odin_scores(model, ood_tune_x, candidate);
            const double metric = fpr_at_tpr95(scores);
            if (!have_best || metric < best_metric) {
                have_best = true;
                best_metric = metric;
                best = candidate;
                best_in_scores = std::move(scores.in_scores);
            }
        }
    }

    // tau at the TPR-95 operating point: the 5th-percentile in-score.
    std::sort(best_in_scores.begin(), best_in_scores.end(), std::greater<double>());
    const std::size_t n = best_in_scores.size();
    const std::size_t k = (19 * n + 19) / 20;
    best.tau = best_in_scores[k - 1];

    TuneResult result;
    result.params = best;
    result.tuning_metric_value = best_metric;
    return result;
}

void write_params_file(const TuneResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_params_file: cannot open " + path.string());
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", result.params.temperature);
    out << "T=" << buf << '\n';
    std::snprintf(buf, sizeof(buf), "%.12g", result.params.eta);
    out << "eta=" << buf << '\n';
    std::snprintf(buf, sizeof(buf), "%.12g", result.params.tau);
    out << "tau=" << buf << '\n';
    out << "tuning_metric=fpr_at_tpr95\n";
    std::snprintf(buf, sizeof(buf), "%.12g", result.tuning_metric_value);
    out << "tuning_metric_value=" << buf << '\n';
    if (!out) throw std::runtime_error("write_params_file: write failed for " + path.string());
}

TuneResult read_params_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_params_file: cannot open " + path.string());
    TuneResult result;
    std::string line;
    bool have_t = false, have_eta = false, have_tau = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("read_params_file: malformed line '" + line + "'");
        }
        const std::string key = line.substr(0, eq);
        const std::string value = line.substr(eq + 1);
        if (key == "T") {
            result.params.temperature = std::stod(value);
            have_t = true;
        } else if (key == "eta") {
            result.params.eta = std::stod(value);
            have_eta = true;
        } else if (key == "tau") {
            result.params.tau = std::stod(value);
            have_tau = true;
        } else if (key == "tuning_metric_value") {
            result.tuning_metric_value = std::stod(value);
        } else if (key == "tuning_metric") {
            // informational
        } else {
            throw std::runtime_error("read_params_file: unknown key '" + key + "'");
        }
    }
    if (!have_t || !have_eta || !have_tau) {
        throw std::runtime_error("read_params_file: missing T/eta/tau in " + path.string());
    }
    return result;
}

} // namespace lossest
