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

#include <map>
#include <string>

#include "lossest/tape.hpp"

namespace lossest {

struct GradCheckResult {
    /// Worst relative error over every coordinate of every leaf, with
    /// denominator max(|analytic|, |numeric|, 1e-8).
    double max_rel_error = 0.0;
    /// Worst error per leaf, for reporting.
    std::map<std::string, double> per_leaf;
    /// Smallest distance of the evaluation point from a ReLU or hinge
    /// kink; finite-difference checks are only meaningful away from it.
    double kink_distance = 0.0;
};

/// Compares backward() gradients against central finite differences over
/// every leaf coordinate. Pure measurement; never throws on mismatch.
GradCheckResult grad_check(Tape& tape, const Bindings& bindings, double epsilon);

} // namespace lossest
