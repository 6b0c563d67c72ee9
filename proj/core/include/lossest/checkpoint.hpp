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

#include <filesystem>

#include "lossest/nets.hpp"

namespace lossest {

/// Self-describing checkpoint: a version header, the serialized
/// architecture and seed, then named parameter records with shapes and
/// row-major little-endian doubles. Round-trips are bitwise lossless.
void save_checkpoint(const JointModel& model, const std::filesystem::path& path);
JointModel load_checkpoint(const std::filesystem::path& path);

} // namespace lossest
