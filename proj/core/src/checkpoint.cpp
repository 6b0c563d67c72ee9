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

#include "lossest/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lossest {

namespace {

constexpr const char* kMagic = "lossest-checkpoint v1";

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(v[i]);
    }
    return s;
}

std::vector<std::size_t> parse_size_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(std::stoul(item));
    return out;
}

void write_le_doubles(std::ostream& out, const std::vector<double>& values) {
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        unsigned char bytes[8];
        for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
        out.write(reinterpret_cast<const char*>(bytes), 8);
    }
}

void read_le_doubles(std::istream& in, std::vector<double>& values, const std::string& record) {
    for (double& v : values) {
        unsigned char bytes[8];
        if (!in.read(reinterpret_cast<char*>(bytes), 8)) {
            throw std::runtime_error("load_checkpoint: truncated values in record '" + record + "'");
        }
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
        std::memcpy(&v, &bits, sizeof v);
    }
}

std::map<std::string, std::string> parse_kv_line(const std::string& line) {
    std::map<std::string, std::string> kv;
    std::stringstream ss(line);
    std::string token;
    while (ss >> token) {
        const auto eq = token.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("load_checkpoint: malformed field '" + token + "'");
        }
        kv[token.substr(0, eq)] = token.substr(eq + 1);
    }
    return kv;
}

} // namespace

void save_checkpoint(const JointModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());

    out << kMagic << '\n';
    out << "arch input_dim=" << model.arch.input_dim << " hidden=" << join(model.arch.hidden_dims)
        << " classes=" << model.arch.num_classes << " taps=" << join(model.arch.tap_layers)
        << " tap_embed=" << model.arch.tap_embed_dim << " dropout=" << model.arch.dropout_rate
        << " seed=" << model.seed << '\n';
    out << "params " << model.params.size() << '\n';
    for (const auto& [name, tensor] : model.params) {
        out << "tensor " << name << ' ' << tensor.rank();
        for (std::size_t dmn : tensor.shape()) out << ' ' << dmn;
        out << '\n';
        write_le_doubles(out, tensor.data());
    }
    out << "end\n";
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

JointModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line) || line != kMagic) {
        throw std::runtime_error("load_checkpoint: version mismatch or bad header in " +
                                 path.string());
    }

    if (!std::getline(in, line) || line.rfind("arch ", 0) != 0) {
        throw std::runtime_error("load_checkpoint: missing arch record");
    }
    const auto kv = parse_kv_line(line.substr(5));
    JointModel model;
    try {
        model.arch.input_dim = std::stoul(kv.at("input_dim"));
        model.arch.hidden_dims = parse_size_list(kv.at("hidden"));
        model.arch.num_classes = std::stoul(kv.at("classes"));
        model.arch.tap_layers = parse_size_list(kv.at("taps"));
        model.arch.tap_embed_dim = std::stoul(kv.at("tap_embed"));
        model.arch.dropout_rate = std::stod(kv.at("dropout"));
        model.seed = std::stoull(kv.at("seed"));
    } catch (const std::out_of_range&) {
        throw std::runtime_error("load_checkpoint: incomplete arch record");
    }
    model.arch.validate();

    if (!std::getline(in, line) || line.rfind("params ", 0) != 0) {
        throw std::runtime_error("load_checkpoint: missing params record");
    }
    const std::size_t count = std::stoul(line.substr(7));

    for (std::size_t p = 0; p < count; ++p) {
        if (!std::getline(in, line) || line.rfind("tensor ", 0) != 0) {
            throw std::runtime_error("load_checkpoint: missing tensor record " +
                                     std::to_string(p));
        }
        std::stringstream ss(line.substr(7));
        std::string name;
        std::size_t rank = 0;
        if (!(ss >> name >> rank)) {
            throw std::runtime_error("load_checkpoint: malformed tensor record " +
                                     std::to_string(p));
        }
        std::vector<std::size_t> shape(rank);
        std::size_t numel = 1;
        for (auto& dmn : shape) {
            if (!(ss >> dmn) || dmn == 0) {
                throw std::runtime_error("load_checkpoint: bad shape in record '" + name + "'");
            }
            numel *= dmn;
        }
        std::vector<double> values(numel);
        read_le_doubles(in, values, name);
        model.params[name] = Tensor(std::move(shape), std::move(values));
    }

    if (!std::getline(in, line) || line != "end") {
        throw std::runtime_error("load_checkpoint: missing end marker (truncated file?)");
    }

    // Shape cross-check against the architecture.
    const JointModel reference = init_model(model.arch, model.seed);
    if (reference.params.size() != model.params.size()) {
        throw std::runtime_error("load_checkpoint: parameter set does not match architecture");
    }
    for (const auto& [name, tensor] : reference.params) {
        const auto it = model.params.find(name);
        if (it == model.params.end() || it->second.shape() != tensor.shape()) {
            throw std::runtime_error("load_checkpoint: record '" + name +
                                     "' missing or shaped inconsistently with the architecture");
        }
    }
    return model;
}

} // namespace lossest
