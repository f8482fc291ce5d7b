#pragma once

#include <optional>
#include <vector>

#include "tlab/tensor.hpp"

namespace tlab::netlab {

// Layers cache whatever the backward pass needs during a training-mode forward.
// Shapes: CNN activations are (B, C, H, W); token activations are (B, T, D),
// flattened row-major. Linear layers work on 2-D (rows, features) views.

struct Conv2d {
    int in_ch = 0, out_ch = 0, ksize = 1, stride = 1, pad = 0;
    Param weight;  // (out, in, k, k)
    Param bias;    // (out)

    Conv2d() = default;
    Conv2d(int in_c, int out_c, int k, int s, int p);

    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy);

    int out_extent(int in_extent) const { return (in_extent + 2 * pad - ksize) / stride + 1; }

private:
    Tensor cols_;  // (in*k*k, B*oh*ow)
    std::vector<int> x_shape_;
};

struct BatchNorm2d {
    int channels = 0;
    float eps = 1e-5f;
    float momentum = 0.1f;
    Param gamma, beta;
    Tensor running_mean, running_var;

    BatchNorm2d() = default;
    explicit BatchNorm2d(int ch);

    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy);

private:
    Tensor xhat_;
    std::vector<float> invstd_;
    std::vector<int> x_shape_;
};

struct LayerNorm {
    int dim = 0;
    float eps = 1e-5f;
    Param gamma, beta;

    LayerNorm() = default;
    explicit LayerNorm(int d);

    Tensor forward(const Tensor& x, bool train);  // normalizes the trailing dim
    Tensor backward(const Tensor& dy);

private:
    Tensor xhat_;
    std::vector<float> invstd_;
    std::vector<int> x_shape_;
};

struct Linear {
    int in_features = 0, out_features = 0;
    Param weight;  // (out, in)
    Param bias;    // (out)

    Linear() = default;
    Linear(int in_f, int out_f);

    Tensor forward(const Tensor& x, bool train);  // x: (rows, in) -> (rows, out)
    Tensor backward(const Tensor& dy);

private:
    Tensor x_cache_;
};

struct ReLU {
    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy) const;

private:
    Tensor mask_;
};

struct Gelu {
    // tanh approximation; cheap and smooth enough for desk-scale training
    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy) const;

private:
    Tensor x_cache_;
};

struct SelfAttention {
    int dim = 0, heads = 0, head_dim = 0;
    Linear qkv;   // D -> 3D
    Linear proj;  // D -> D

    SelfAttention() = default;
    SelfAttention(int d, int h);

    // x: (B, T, D). When capture != nullptr the softmax maps (B, H, T, T) are copied out.
    Tensor forward(const Tensor& x, bool train, Tensor* capture = nullptr);
    Tensor backward(const Tensor& dy);

private:
    Tensor attn_;  // (B, H, T, T)
    Tensor qkv_out_, ctx_;
    int batch_ = 0, tokens_ = 0;
};

struct Mlp {
    Linear fc1, fc2;
    Gelu act;

    Mlp() = default;
    Mlp(int dim, int hidden);

    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy);
};

struct TransformerBlock {
    LayerNorm ln1, ln2;
    SelfAttention attn;
    Mlp mlp;

    TransformerBlock() = default;
    TransformerBlock(int dim, int heads, int mlp_hidden);

    // attn_out, when non-null, receives the activation after the attention residual.
    Tensor forward(const Tensor& x, bool train, Tensor* attn_out = nullptr,
                   Tensor* attn_maps = nullptr);
    Tensor backward(const Tensor& dy);
};

struct BasicBlock {
    Conv2d conv1, conv2;
    BatchNorm2d bn1, bn2;
    ReLU relu1, relu2;
    bool has_down = false;
    Conv2d down_conv;
    BatchNorm2d down_bn;

    BasicBlock() = default;
    BasicBlock(int in_ch, int out_ch, int stride);

    Tensor forward(const Tensor& x, bool train);
    Tensor backward(const Tensor& dy);
};

// softmax over the trailing dimension, in place
void softmax_rows(float* data, int rows, int cols);

Tensor global_avg_pool(const Tensor& x);                       // (B,C,H,W) -> (B,C)
Tensor gap_backward(const Tensor& dy, const std::vector<int>& x_shape);

} // namespace tlab::netlab
