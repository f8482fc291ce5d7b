#include "tlab/initkit/init.hpp"

#include <cmath>

#include "tlab/error.hpp"
#include "tlab/rng.hpp"

namespace tlab::initkit {

using netlab::ModulePartition;
using netlab::ParamKind;
using netlab::PartitionGroup;

const TensorStats* LayerStats::find(const std::string& name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

std::string to_string(InitKind k) {
    switch (k) {
        case InitKind::RI: return "RI";
        case InitKind::ST: return "ST";
        case InitKind::WT: return "WT";
        default: return "WT_ST";
    }
}

InitKind init_kind_from_string(const std::string& s) {
    if (s == "RI") return InitKind::RI;
    if (s == "ST") return InitKind::ST;
    if (s == "WT") return InitKind::WT;
    if (s == "WT_ST") return InitKind::WT_ST;
    throw ConfigError("unknown init kind: " + s);
}

InitScheme InitScheme::canonical(int groups_count) const {
    InitScheme out = *this;
    if (kind == InitKind::WT_ST) {
        if (transfer_depth_n < 0 || transfer_depth_n > groups_count)
            throw ConfigError("WT_ST depth " + std::to_string(transfer_depth_n) +
                              " out of range [0," + std::to_string(groups_count) + "]");
        if (transfer_depth_n == 0) {
            out.kind = InitKind::ST;
            out.transfer_depth_n = 0;
        } else if (transfer_depth_n == groups_count) {
            out.kind = InitKind::WT;
            out.transfer_depth_n = 0;
        }
    } else {
        out.transfer_depth_n = 0;
    }
    return out;
}

std::string InitScheme::label() const {
    if (kind == InitKind::WT_ST) return "WT-ST-" + std::to_string(transfer_depth_n);
    return to_string(kind);
}

LayerStats weight_stats(const WeightSnapshot& snapshot) {
    if (snapshot.params.empty()) throw DataError("weight_stats: empty snapshot");
    LayerStats stats;
    stats.arch_id = snapshot.arch_id;
    for (const auto& nt : snapshot.params) {
        TensorStats ts;
        ts.name = nt.name;
        ts.count = static_cast<long>(nt.tensor.numel());
        double mean = 0.0;
        for (float v : nt.tensor.data) mean += v;
        mean /= static_cast<double>(ts.count);
        double var = 0.0;
        for (float v : nt.tensor.data) {
            const double d = v - mean;
            var += d * d;
        }
        var /= static_cast<double>(ts.count);  // population convention
        ts.mu = mean;
        ts.sigma = std::sqrt(var);
        stats.entries.push_back(ts);
    }
    return stats;
}

namespace {

void fill_kaiming(Tensor& t, ParamKind kind, std::uint64_t seed, const std::string& name) {
    switch (kind) {
        case ParamKind::bias:
        case ParamKind::norm_shift:
            t.zero();
            return;
        case ParamKind::norm_scale:
            t.fill(1.0f);
            return;
        default: {
            const int fan = netlab::fan_in_of(kind, t.shape);
            const double sd = std::sqrt(2.0 / static_cast<double>(fan));
            Rng rng = Rng::keyed(seed, name);
            for (auto& v : t.data) v = static_cast<float>(rng.normal(0.0, sd));
        }
    }
}

void fill_stats(Tensor& t, const TensorStats& ts, std::uint64_t seed, const std::string& name) {
    if (ts.sigma == 0.0) {
        t.fill(static_cast<float>(ts.mu));
        return;
    }
    Rng rng = Rng::keyed(seed, name);
    for (auto& v : t.data) v = static_cast<float>(rng.normal(ts.mu, ts.sigma));
}

void reset_norm_buffers(ProbeableNetwork& net) {
    for (auto& b : net.buffers()) {
        if (b.name.ends_with("running_var"))
            b.tensor->fill(1.0f);
        else
            b.tensor->zero();
    }
}

bool is_head(ProbeableNetwork& net, const std::string& param_name) {
    return net.module_of(param_name) == "head";
}

void check_source_compat(ProbeableNetwork& net, const WeightSnapshot& snapshot) {
    const auto& spec = net.spec();
    const auto& src = snapshot.spec;
    if (spec.family != src.family || spec.capacity != src.capacity ||
        spec.input_h != src.input_h || spec.input_w != src.input_w ||
        spec.input_ch != src.input_ch)
        throw CompatError("source snapshot " + snapshot.arch_id + " incompatible with network " +
                          net.arch_id());
    for (auto& p : net.params()) {
        if (is_head(net, p.name)) continue;
        const Tensor* t = snapshot.find_param(p.name);
        if (!t) throw CompatError("source snapshot lacks tensor " + p.name);
        if (t->shape != p.param->value.shape)
            throw CompatError("source snapshot shape mismatch for " + p.name);
    }
}

} // namespace

void init_random(ProbeableNetwork& net, std::uint64_t seed) {
    for (auto& p : net.params())
        fill_kaiming(p.param->value, net.param_kind(p.name), seed, p.name);
    reset_norm_buffers(net);
}

void init_stats_transfer(ProbeableNetwork& net, const LayerStats& stats, std::uint64_t seed) {
    for (auto& p : net.params()) {
        if (is_head(net, p.name)) {
            fill_kaiming(p.param->value, net.param_kind(p.name), seed, p.name);
            continue;
        }
        const TensorStats* ts = stats.find(p.name);
        if (!ts) throw CompatError("stats lack entry for tensor " + p.name);
        fill_stats(p.param->value, *ts, seed, p.name);
    }
    reset_norm_buffers(net);
}

void init_weight_transfer(ProbeableNetwork& net, const WeightSnapshot& snapshot,
                          std::uint64_t seed) {
    check_source_compat(net, snapshot);
    for (auto& p : net.params()) {
        if (is_head(net, p.name)) {
            fill_kaiming(p.param->value, net.param_kind(p.name), seed, p.name);
            continue;
        }
        p.param->value = *snapshot.find_param(p.name);
    }
    for (auto& b : net.buffers()) {
        const Tensor* t = snapshot.find_buffer(b.name);
        if (t)
            *b.tensor = *t;
        else if (b.name.ends_with("running_var"))
            b.tensor->fill(1.0f);
        else
            b.tensor->zero();
    }
}

void build_wt_st(ProbeableNetwork& net, const WeightSnapshot& snapshot, int n,
                 std::uint64_t seed) {
    const ModulePartition& part = netlab::partition_of(net);
    const int groups = static_cast<int>(part.groups.size());
    if (n < 0 || n > groups)
        throw ConfigError("WT_ST depth " + std::to_string(n) + " out of range [0," +
                          std::to_string(groups) + "]");
    check_source_compat(net, snapshot);
    const LayerStats stats = weight_stats(snapshot);

    auto group_index = [&](const std::string& param_name) -> int {
        const std::string& mod = net.module_of(param_name);
        for (int g = 0; g < groups; ++g)
            for (const auto& m : part.groups[g].module_ids)
                if (m == mod) return g;
        return -1;  // head
    };

    for (auto& p : net.params()) {
        if (is_head(net, p.name)) {
            fill_kaiming(p.param->value, net.param_kind(p.name), seed, p.name);
            continue;
        }
        const int g = group_index(p.name);
        if (g >= 0 && g < n) {
            p.param->value = *snapshot.find_param(p.name);
        } else {
            const TensorStats* ts = stats.find(p.name);
            if (!ts) throw CompatError("stats lack entry for tensor " + p.name);
            fill_stats(p.param->value, *ts, seed, p.name);
        }
    }
    for (auto& b : net.buffers()) {
        const int g = group_index(b.name);
        const Tensor* t = (g >= 0 && g < n) ? snapshot.find_buffer(b.name) : nullptr;
        if (t)
            *b.tensor = *t;
        else if (b.name.ends_with("running_var"))
            b.tensor->fill(1.0f);
        else
            b.tensor->zero();
    }
}

void apply_scheme(ProbeableNetwork& net, const InitScheme& scheme, const WeightSnapshot* source) {
    const ModulePartition& part = netlab::partition_of(net);
    const InitScheme canon = scheme.canonical(static_cast<int>(part.groups.size()));
    if (canon.kind != InitKind::RI && !source)
        throw ConfigError("init scheme " + canon.label() + " requires a source checkpoint");
    switch (canon.kind) {
        case InitKind::RI:
            init_random(net, canon.seed);
            break;
        case InitKind::ST:
            init_stats_transfer(net, weight_stats(*source), canon.seed);
            break;
        case InitKind::WT:
            init_weight_transfer(net, *source, canon.seed);
            break;
        case InitKind::WT_ST:
            build_wt_st(net, *source, canon.transfer_depth_n, canon.seed);
            break;
    }
}

} // namespace tlab::initkit
