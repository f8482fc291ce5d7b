#pragma once

#include "tlab/netlab/layers.hpp"
#include "tlab/netlab/network.hpp"

namespace tlab::netlab {

struct CnnDims {
    int widths[4];  // per-stage channel counts
    int blocks_per_stage = 2;
};

struct VitDims {
    int dim;
    int depth;
    int heads = 4;
    int mlp_ratio = 4;
    int patch = 4;
};

CnnDims cnn_dims(Capacity c);
VitDims vit_dims(Capacity c);

class MiniCnn final : public ProbeableNetwork {
public:
    explicit MiniCnn(const ArchSpec& spec);

    Tensor forward(const Tensor& x, const ForwardOptions& opt, CaptureResult* cap) override;
    void backward(const Tensor& dlogits) override;
    std::unique_ptr<ProbeableNetwork> clone() const override;

private:
    Conv2d stem_conv_;
    BatchNorm2d stem_norm_;
    ReLU stem_relu_;
    std::vector<std::vector<BasicBlock>> stages_;
    Linear head_;
    std::vector<int> gap_in_shape_;

    void register_all();
};

class MiniVit final : public ProbeableNetwork {
public:
    explicit MiniVit(const ArchSpec& spec);

    Tensor forward(const Tensor& x, const ForwardOptions& opt, CaptureResult* cap) override;
    void backward(const Tensor& dlogits) override;
    std::unique_ptr<ProbeableNetwork> clone() const override;

    int depth() const { return static_cast<int>(blocks_.size()); }
    int grid() const { return grid_; }
    int token_count() const { return grid_ * grid_ + 1; }

private:
    VitDims dims_;
    int grid_ = 0;
    Conv2d patch_proj_;
    Param cls_token_;  // (1, dim)
    Param pos_embed_;  // (tokens, dim)
    std::vector<TransformerBlock> blocks_;
    LayerNorm final_norm_;
    Linear head_;
    int batch_ = 0;

    void register_all();
};

} // namespace tlab::netlab
