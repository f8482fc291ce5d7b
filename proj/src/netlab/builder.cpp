#include <map>
#include <mutex>

#include "tlab/error.hpp"
#include "tlab/initkit/init.hpp"
#include "tlab/netlab/models.hpp"

namespace tlab::netlab {

namespace {

std::mutex g_registry_mutex;
std::map<std::string, ModulePartition>& registry() {
    static std::map<std::string, ModulePartition> reg;
    return reg;
}

ModulePartition derive_partition(const ProbeableNetwork& net) {
    ModulePartition part;
    part.arch_id = net.arch_id();
    for (const auto& m : net.modules()) {
        if (m.kind == ModuleKind::head) {
            part.head_group = {"head", {m.id}, std::nullopt};
            continue;
        }
        PartitionGroup g;
        g.group_id = m.id;
        g.module_ids = {m.id};
        if (net.has_tap(m.id)) g.tap_id = m.id;
        part.groups.push_back(std::move(g));
    }
    part.wt_st_levels = static_cast<int>(part.groups.size()) + 1;
    return part;
}

void register_partition(const ProbeableNetwork& net) {
    std::lock_guard<std::mutex> lock(g_registry_mutex);
    auto& reg = registry();
    if (!reg.count(net.arch_id())) reg.emplace(net.arch_id(), derive_partition(net));
}

} // namespace

std::unique_ptr<ProbeableNetwork> build_model(const ArchSpec& spec) {
    if (spec.num_classes < 2) throw ConfigError("build_model: num_classes must be >= 2");
    if (spec.input_h <= 0 || spec.input_w <= 0 || spec.input_ch <= 0)
        throw ShapeError("build_model: bad input shape");
    std::unique_ptr<ProbeableNetwork> net;
    if (spec.family == Family::mini_cnn) {
        if (spec.trunc_blocks > 0) throw UnsupportedError("truncation applies to ViTs only");
        net = std::make_unique<MiniCnn>(spec);
    } else {
        net = std::make_unique<MiniVit>(spec);
    }
    initkit::init_random(*net, spec.seed);
    register_partition(*net);
    return net;
}

const ModulePartition& partition_for(const std::string& arch_id) {
    std::lock_guard<std::mutex> lock(g_registry_mutex);
    auto& reg = registry();
    auto it = reg.find(arch_id);
    if (it == reg.end()) throw LookupError("unregistered architecture: " + arch_id);
    return it->second;
}

const ModulePartition& partition_of(const ProbeableNetwork& net) {
    {
        std::lock_guard<std::mutex> lock(g_registry_mutex);
        auto& reg = registry();
        auto it = reg.find(net.arch_id());
        if (it != reg.end()) return it->second;
    }
    register_partition(net);
    return partition_for(net.arch_id());
}

std::vector<ActivationBatch> capture_activations(ProbeableNetwork& net, const Tensor& images,
                                                 const std::vector<std::int64_t>& sample_ids,
                                                 const std::vector<std::string>& tap_ids) {
    if (images.rank() != 4 || (std::size_t)images.dim(0) != sample_ids.size())
        throw ShapeError("capture_activations: batch size and sample ids disagree");
    ForwardOptions opt;
    opt.taps = &tap_ids;
    opt.sample_ids = &sample_ids;
    CaptureResult cap;
    (void)net.forward(images, opt, &cap);
    return std::move(cap.taps);
}

std::unique_ptr<ProbeableNetwork> truncate(const ProbeableNetwork& net, int n_blocks) {
    if (net.spec().family != Family::mini_vit)
        throw UnsupportedError("truncate: only ViT networks can be truncated");
    const auto& src = dynamic_cast<const MiniVit&>(net);
    if (n_blocks < 1 || n_blocks > src.depth())
        throw ConfigError("truncate: n_blocks out of range [1," + std::to_string(src.depth()) +
                          "]");
    ArchSpec spec = net.spec();
    spec.trunc_blocks = n_blocks;
    auto out = build_model(spec);  // fresh final norm + head via RI

    auto values = net.param_values();
    auto find_src = [&](const std::string& name) -> const Tensor* {
        for (const auto& [n, t] : values)
            if (n == name) return t;
        return nullptr;
    };
    for (auto& p : out->params()) {
        const std::string& mod = out->module_of(p.name);
        if (mod == "final_norm" || mod == "head") continue;
        const Tensor* t = find_src(p.name);
        if (!t) throw CompatError("truncate: source lacks tensor " + p.name);
        p.param->value = *t;
    }
    return out;
}

} // namespace tlab::netlab
