#include "tlab/netlab/network.hpp"

#include <algorithm>

#include "tlab/error.hpp"

namespace tlab::netlab {

std::string to_string(Family f) {
    return f == Family::mini_cnn ? "mini_cnn" : "mini_vit";
}

std::string to_string(Capacity c) {
    switch (c) {
        case Capacity::tiny: return "tiny";
        case Capacity::small: return "small";
        default: return "base";
    }
}

Family family_from_string(const std::string& s) {
    if (s == "mini_cnn") return Family::mini_cnn;
    if (s == "mini_vit") return Family::mini_vit;
    throw ConfigError("unknown model family: " + s);
}

Capacity capacity_from_string(const std::string& s) {
    if (s == "tiny") return Capacity::tiny;
    if (s == "small") return Capacity::small;
    if (s == "base") return Capacity::base;
    throw ConfigError("unknown capacity: " + s);
}

std::string ArchSpec::arch_id() const {
    std::string id = to_string(family) + "_" + to_string(capacity);
    if (trunc_blocks > 0) id += "_t" + std::to_string(trunc_blocks);
    return id;
}

int fan_in_of(ParamKind kind, const std::vector<int>& shape) {
    switch (kind) {
        case ParamKind::conv_weight: {
            int f = 1;
            for (std::size_t i = 1; i < shape.size(); ++i) f *= shape[i];
            return f;
        }
        case ParamKind::linear_weight:
            return shape.size() >= 2 ? shape[1] : 1;
        case ParamKind::embed:
            return shape.empty() ? 1 : shape.back();
        default:
            return 1;
    }
}

const PartitionGroup* ModulePartition::find(const std::string& group_id) const {
    if (group_id == head_group.group_id) return &head_group;
    for (const auto& g : groups)
        if (g.group_id == group_id) return &g;
    return nullptr;
}

int ModulePartition::index_of(const std::string& group_id) const {
    for (std::size_t i = 0; i < groups.size(); ++i)
        if (groups[i].group_id == group_id) return static_cast<int>(i);
    return -1;
}

bool ProbeableNetwork::has_tap(const std::string& id) const {
    return std::find(taps_.begin(), taps_.end(), id) != taps_.end();
}

std::vector<std::pair<std::string, const Tensor*>> ProbeableNetwork::param_values() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.emplace_back(p.name, &p.param->value);
    return out;
}

const std::string& ProbeableNetwork::module_of(const std::string& param_name) const {
    for (const auto& [name, mod] : param_module_)
        if (name == param_name) return mod;
    throw LookupError("unknown parameter: " + param_name);
}

ParamKind ProbeableNetwork::param_kind(const std::string& param_name) const {
    for (const auto& [name, kind] : param_kinds_)
        if (name == param_name) return kind;
    throw LookupError("unknown parameter: " + param_name);
}

void ProbeableNetwork::zero_grads() {
    for (auto& p : params_) p.param->zero_grad();
}

void ProbeableNetwork::register_param(const std::string& module_id, const std::string& name,
                                      Param* p, ParamKind kind) {
    p->grad = Tensor(p->value.shape);
    params_.push_back({name, p});
    param_module_.emplace_back(name, module_id);
    param_kinds_.emplace_back(name, kind);
}

void ProbeableNetwork::register_buffer(const std::string& module_id, const std::string& name,
                                       Tensor* t) {
    buffers_.push_back({name, t});
    param_module_.emplace_back(name, module_id);
}

} // namespace tlab::netlab
