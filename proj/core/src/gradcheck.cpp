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

#include "lossest/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lossest {

GradCheckResult grad_check(Tape& tape, const Bindings& bindings, double epsilon) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be positive");

    Bindings work = bindings;
    tape.forward(work);
    GradCheckResult result;
    result.kink_distance = tape.kink_distance();
    const GradMap analytic = tape.backward();

    for (const auto& leaf : tape.leaves()) {
        const auto grad_it = analytic.find(leaf.name);
        if (grad_it == analytic.end()) continue;
        const Tensor& a = grad_it->second;
        Tensor& bound = work.at(leaf.name);
        double leaf_max = 0.0;
        for (std::size_t k = 0; k < bound.numel(); ++k) {
            const double saved = bound[k];
            bound[k] = saved + epsilon;
            const double fp = tape.forward(work).item();
            bound[k] = saved - epsilon;
            const double fm = tape.forward(work).item();
            bound[k] = saved;
            const double numeric = (fp - fm) / (2.0 * epsilon);
            const double denom = std::max({std::abs(a[k]), std::abs(numeric), 1e-8});
            leaf_max = std::max(leaf_max, std::abs(a[k] - numeric) / denom);
        }
        result.per_leaf[leaf.name] = leaf_max;
        result.max_rel_error = std::max(result.max_rel_error, leaf_max);
    }

    // Leave the tape evaluated at the unperturbed point.
    tape.forward(work);
    return result;
}

} // namespace lossest
