#include "tlab/netlab/snapshot.hpp"

#include <chrono>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "tlab/error.hpp"
#include "tlab/rng.hpp"

namespace tlab::netlab {

using nlohmann::json;

std::string to_string(SnapshotTag t) {
    switch (t) {
        case SnapshotTag::initial: return "initial";
        case SnapshotTag::best: return "best";
        default: return "pretrained";
    }
}

SnapshotTag tag_from_string(const std::string& s) {
    if (s == "initial") return SnapshotTag::initial;
    if (s == "best") return SnapshotTag::best;
    if (s == "pretrained") return SnapshotTag::pretrained;
    throw ConfigError("unknown snapshot tag: " + s);
}

const Tensor* WeightSnapshot::find_param(const std::string& name) const {
    for (const auto& nt : params)
        if (nt.name == name) return &nt.tensor;
    return nullptr;
}

const Tensor* WeightSnapshot::find_buffer(const std::string& name) const {
    for (const auto& nt : buffers)
        if (nt.name == name) return &nt.tensor;
    return nullptr;
}

WeightSnapshot snapshot_weights(ProbeableNetwork& net, SnapshotTag tag) {
    WeightSnapshot snap;
    snap.arch_id = net.arch_id();
    snap.spec = net.spec();
    snap.tag = tag;
    snap.created_at = std::chrono::duration_cast<std::chrono::seconds>(
                          std::chrono::system_clock::now().time_since_epoch())
                          .count();
    for (auto& p : net.params()) snap.params.push_back({p.name, p.param->value});
    for (auto& b : net.buffers()) snap.buffers.push_back({b.name, *b.tensor});
    return snap;
}

void restore_all(ProbeableNetwork& net, const WeightSnapshot& snap) {
    if (snap.arch_id != net.arch_id())
        throw CompatError("snapshot arch " + snap.arch_id + " != network arch " + net.arch_id());
    for (auto& p : net.params()) {
        const Tensor* t = snap.find_param(p.name);
        if (!t) throw CompatError("snapshot missing parameter " + p.name);
        if (t->shape != p.param->value.shape)
            throw CompatError("snapshot shape mismatch for " + p.name);
        p.param->value = *t;
    }
    for (auto& b : net.buffers()) {
        const Tensor* t = snap.find_buffer(b.name);
        if (!t) throw CompatError("snapshot missing buffer " + b.name);
        *b.tensor = *t;
    }
}

void restore_module(ProbeableNetwork& net, const WeightSnapshot& snap,
                    const std::string& group_id) {
    if (snap.arch_id != net.arch_id())
        throw CompatError("snapshot arch " + snap.arch_id + " != network arch " + net.arch_id());
    const ModulePartition& part = partition_of(net);
    const PartitionGroup* group = part.find(group_id);
    if (!group) throw LookupError("unknown partition group: " + group_id);

    auto in_group = [&](const std::string& param_name) {
        const std::string& mod = net.module_of(param_name);
        for (const auto& m : group->module_ids)
            if (m == mod) return true;
        return false;
    };
    for (auto& p : net.params()) {
        if (!in_group(p.name)) continue;
        const Tensor* t = snap.find_param(p.name);
        if (!t) throw CompatError("snapshot missing parameter " + p.name);
        p.param->value = *t;
    }
    for (auto& b : net.buffers()) {
        if (!in_group(b.name)) continue;
        const Tensor* t = snap.find_buffer(b.name);
        if (!t) throw CompatError("snapshot missing buffer " + b.name);
        *b.tensor = *t;
    }
}

bool network_equals_snapshot(ProbeableNetwork& net, const WeightSnapshot& snap) {
    for (auto& p : net.params()) {
        const Tensor* t = snap.find_param(p.name);
        if (!t || !t->bitwise_equal(p.param->value)) return false;
    }
    for (auto& b : net.buffers()) {
        const Tensor* t = snap.find_buffer(b.name);
        if (!t || !t->bitwise_equal(*b.tensor)) return false;
    }
    return true;
}

namespace {

std::string checksum_hex(const Tensor& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.ptr());
    const std::size_t n = t.numel() * sizeof(float);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

json tensor_entry(const NamedTensor& nt, std::uint64_t offset, const char* kind) {
    return json{{"name", nt.name},
                {"shape", nt.tensor.shape},
                {"dtype", "f32"},
                {"offset", offset},
                {"checksum", checksum_hex(nt.tensor)},
                {"kind", kind}};
}

} // namespace

void save_checkpoint(const WeightSnapshot& snap, const std::string& base_path) {
    json manifest;
    manifest["format_version"] = 1;
    manifest["arch_id"] = snap.arch_id;
    manifest["family"] = to_string(snap.spec.family);
    manifest["capacity"] = to_string(snap.spec.capacity);
    manifest["tag"] = to_string(snap.tag);
    manifest["input"] = {snap.spec.input_h, snap.spec.input_w, snap.spec.input_ch};
    manifest["num_classes"] = snap.spec.num_classes;
    manifest["seed"] = snap.spec.seed;
    manifest["trunc_blocks"] = snap.spec.trunc_blocks;
    if (snap.spec.family == Family::mini_vit) {
        manifest["patch_size"] = 4;
        manifest["notes"] = {{"pos_embed_group", "patchifier"}};
    }

    json tensors = json::array();
    std::uint64_t offset = 0;
    for (const auto& nt : snap.params) {
        tensors.push_back(tensor_entry(nt, offset, "param"));
        offset += nt.tensor.numel() * sizeof(float);
    }
    for (const auto& nt : snap.buffers) {
        tensors.push_back(tensor_entry(nt, offset, "buffer"));
        offset += nt.tensor.numel() * sizeof(float);
    }
    manifest["tensors"] = tensors;

    {
        std::ofstream mf(base_path + ".json");
        if (!mf) throw DataError("cannot write " + base_path + ".json");
        mf << manifest.dump(2) << "\n";
    }
    std::ofstream bf(base_path + ".bin", std::ios::binary);
    if (!bf) throw DataError("cannot write " + base_path + ".bin");
    auto write_tensor = [&](const Tensor& t) {
        bf.write(reinterpret_cast<const char*>(t.ptr()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float)));
    };
    for (const auto& nt : snap.params) write_tensor(nt.tensor);
    for (const auto& nt : snap.buffers) write_tensor(nt.tensor);
    if (!bf) throw DataError("short write to " + base_path + ".bin");
}

WeightSnapshot load_checkpoint(const std::string& base_path) {
    std::ifstream mf(base_path + ".json");
    if (!mf) throw DataError("cannot read " + base_path + ".json");
    json manifest = json::parse(mf);

    WeightSnapshot snap;
    snap.spec.family = family_from_string(manifest.at("family").get<std::string>());
    snap.spec.capacity = capacity_from_string(manifest.at("capacity").get<std::string>());
    const auto input = manifest.at("input");
    snap.spec.input_h = input.at(0).get<int>();
    snap.spec.input_w = input.at(1).get<int>();
    snap.spec.input_ch = input.at(2).get<int>();
    snap.spec.num_classes = manifest.at("num_classes").get<int>();
    snap.spec.seed = manifest.at("seed").get<std::uint64_t>();
    snap.spec.trunc_blocks = manifest.value("trunc_blocks", 0);
    snap.arch_id = manifest.at("arch_id").get<std::string>();
    snap.tag = tag_from_string(manifest.at("tag").get<std::string>());
    if (snap.arch_id != snap.spec.arch_id())
        throw DataError("checkpoint manifest arch_id does not match its spec");

    std::ifstream bf(base_path + ".bin", std::ios::binary);
    if (!bf) throw DataError("cannot read " + base_path + ".bin");
    for (const auto& e : manifest.at("tensors")) {
        NamedTensor nt;
        nt.name = e.at("name").get<std::string>();
        nt.tensor = Tensor(e.at("shape").get<std::vector<int>>());
        if (e.at("dtype").get<std::string>() != "f32")
            throw DataError("unsupported dtype in checkpoint: " + nt.name);
        bf.seekg(static_cast<std::streamoff>(e.at("offset").get<std::uint64_t>()));
        bf.read(reinterpret_cast<char*>(nt.tensor.ptr()),
                static_cast<std::streamsize>(nt.tensor.numel() * sizeof(float)));
        if (!bf) throw DataError("truncated checkpoint blob at tensor " + nt.name);
        if (checksum_hex(nt.tensor) != e.at("checksum").get<std::string>())
            throw DataError("checksum mismatch for tensor " + nt.name);
        if (e.at("kind").get<std::string>() == "param")
            snap.params.push_back(std::move(nt));
        else
            snap.buffers.push_back(std::move(nt));
    }
    return snap;
}

std::unique_ptr<ProbeableNetwork> network_from_snapshot(const WeightSnapshot& snap) {
    auto net = build_model(snap.spec);
    restore_all(*net, snap);
    return net;
}

} // namespace tlab::netlab
