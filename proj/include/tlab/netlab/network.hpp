#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tlab/tensor.hpp"

namespace tlab::netlab {

enum class Family { mini_cnn, mini_vit };
enum class Capacity { tiny, small, base };

std::string to_string(Family f);
std::string to_string(Capacity c);
Family family_from_string(const std::string& s);
Capacity capacity_from_string(const std::string& s);

struct ArchSpec {
    Family family = Family::mini_cnn;
    Capacity capacity = Capacity::small;
    int input_h = 32, input_w = 32, input_ch = 3;
    int num_classes = 10;
    std::uint64_t seed = 0;
    // set for ViTs produced by truncate(); 0 = full depth
    int trunc_blocks = 0;

    std::string arch_id() const;
};

enum class ModuleKind {
    stem,
    conv_stage,
    residual_block,
    patchifier,
    transformer_block,
    attention,
    mlp,
    norm,
    head
};

struct ModuleInfo {
    std::string id;
    ModuleKind kind;
};

enum class ParamKind {
    conv_weight,   // (out, in, k, k); fan-in = in*k*k
    linear_weight, // (out, in); fan-in = in
    bias,
    norm_scale,
    norm_shift,
    embed          // cls token / positional table; fan-in = trailing dim
};

int fan_in_of(ParamKind kind, const std::vector<int>& shape);

struct PartitionGroup {
    std::string group_id;
    std::vector<std::string> module_ids;
    std::optional<std::string> tap_id;
};

/// Ordered transfer/probe groups. `groups` are the WT-ST units in forward
/// order; the task head lives in `head_group` and is never part of a transfer
/// depth (wt_st_levels counts only `groups`).
struct ModulePartition {
    std::string arch_id;
    std::vector<PartitionGroup> groups;
    PartitionGroup head_group;
    int wt_st_levels = 0;  // == groups.size() + 1 (depth 0 .. depth groups.size())

    const PartitionGroup* find(const std::string& group_id) const;
    int index_of(const std::string& group_id) const;  // -1 if absent
};

enum class Layout { spatial_map, token_seq };

struct ActivationBatch {
    std::string tap_id;
    Layout layout = Layout::spatial_map;
    std::vector<int> sample_shape;  // (c,h,w) or (tokens,dim)
    int cls_index = -1;             // token_seq only; -1 = no cls token
    Tensor values;                  // (B, sample_shape...)
    std::vector<std::int64_t> sample_ids;

    int batch() const { return values.shape.empty() ? 0 : values.dim(0); }
    std::size_t sample_numel() const { return values.numel() / std::max(1, batch()); }
};

struct ForwardOptions {
    bool train = false;
    const std::vector<std::string>* taps = nullptr;  // subset of tap_ids()
    bool capture_attention = false;                  // ViT only
    const std::vector<std::int64_t>* sample_ids = nullptr;
};

struct CaptureResult {
    std::vector<ActivationBatch> taps;   // forward order
    std::vector<Tensor> attention;       // per block, (B, H, T, T)
};

class ProbeableNetwork {
public:
    virtual ~ProbeableNetwork() = default;

    const ArchSpec& spec() const { return spec_; }
    const std::string& arch_id() const { return arch_id_; }
    int num_classes() const { return spec_.num_classes; }

    const std::vector<ModuleInfo>& modules() const { return modules_; }
    const std::vector<std::string>& tap_ids() const { return taps_; }
    bool has_tap(const std::string& id) const;

    /// Learnable parameters in forward (registration) order.
    const std::vector<ParamRef>& params() { return params_; }
    std::vector<std::pair<std::string, const Tensor*>> param_values() const;
    const std::vector<BufferRef>& buffers() { return buffers_; }

    /// Module that owns a parameter (every parameter belongs to exactly one).
    const std::string& module_of(const std::string& param_name) const;
    ParamKind param_kind(const std::string& param_name) const;

    void zero_grads();

    /// Forward pass producing logits (B, num_classes). Capturing must not
    /// perturb outputs; `cap` may be null when no capture was requested.
    virtual Tensor forward(const Tensor& x, const ForwardOptions& opt = {},
                           CaptureResult* cap = nullptr) = 0;

    /// Backprop from dlogits; accumulates into param grads. Requires the last
    /// forward to have run with opt.train == true.
    virtual void backward(const Tensor& dlogits) = 0;

    virtual std::unique_ptr<ProbeableNetwork> clone() const = 0;

protected:
    ArchSpec spec_;
    std::string arch_id_;
    std::vector<ModuleInfo> modules_;
    std::vector<std::string> taps_;
    std::vector<ParamRef> params_;
    std::vector<BufferRef> buffers_;
    std::vector<std::pair<std::string, std::string>> param_module_;  // name -> module id
    std::vector<std::pair<std::string, ParamKind>> param_kinds_;

    void register_param(const std::string& module_id, const std::string& name, Param* p,
                        ParamKind kind);
    void register_buffer(const std::string& module_id, const std::string& name, Tensor* t);
};

/// Builds a freshly Kaiming-initialized network (the RI baseline) and registers
/// its partition. Deterministic in (spec, seed).
std::unique_ptr<ProbeableNetwork> build_model(const ArchSpec& spec);

/// One inference-mode forward over a batch, returning the requested taps in
/// forward order. Capture never alters the network or its outputs.
std::vector<ActivationBatch> capture_activations(ProbeableNetwork& net, const Tensor& images,
                                                 const std::vector<std::int64_t>& sample_ids,
                                                 const std::vector<std::string>& tap_ids);

/// Canonical partition for a built network; stable across calls.
const ModulePartition& partition_of(const ProbeableNetwork& net);
const ModulePartition& partition_for(const std::string& arch_id);  // LookupError if unknown

/// ViT-only: new network with the patchifier and first n_blocks carrying the
/// source weights, plus a fresh final norm and head.
std::unique_ptr<ProbeableNetwork> truncate(const ProbeableNetwork& net, int n_blocks);

} // namespace tlab::netlab
