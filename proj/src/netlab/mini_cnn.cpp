#include <algorithm>

#include "tlab/error.hpp"
#include "tlab/netlab/models.hpp"

namespace tlab::netlab {

CnnDims cnn_dims(Capacity c) {
    // widths {16,32,64,128} scaled by {0.5, 1, 2}
    switch (c) {
        case Capacity::tiny: return {{8, 16, 32, 64}, 2};
        case Capacity::small: return {{16, 32, 64, 128}, 2};
        default: return {{32, 64, 128, 256}, 2};
    }
}

namespace {

bool wants(const ForwardOptions& opt, const std::string& tap) {
    if (!opt.taps) return false;
    return std::find(opt.taps->begin(), opt.taps->end(), tap) != opt.taps->end();
}

void push_spatial(CaptureResult* cap, const ForwardOptions& opt, const std::string& tap,
                  const Tensor& act) {
    if (!cap || !wants(opt, tap)) return;
    ActivationBatch ab;
    ab.tap_id = tap;
    ab.layout = Layout::spatial_map;
    ab.sample_shape = {act.dim(1), act.dim(2), act.dim(3)};
    ab.values = act;
    if (opt.sample_ids) ab.sample_ids = *opt.sample_ids;
    cap->taps.push_back(std::move(ab));
}

} // namespace

MiniCnn::MiniCnn(const ArchSpec& spec) {
    spec_ = spec;
    arch_id_ = spec.arch_id();
    const CnnDims d = cnn_dims(spec.capacity);

    stem_conv_ = Conv2d(spec.input_ch, d.widths[0], 3, 1, 1);
    stem_norm_ = BatchNorm2d(d.widths[0]);
    stages_.resize(4);
    int in_ch = d.widths[0];
    for (int s = 0; s < 4; ++s) {
        const int out_ch = d.widths[s];
        const int stride = (s == 0) ? 1 : 2;
        for (int b = 0; b < d.blocks_per_stage; ++b) {
            stages_[s].emplace_back(b == 0 ? in_ch : out_ch, out_ch, b == 0 ? stride : 1);
        }
        in_ch = out_ch;
    }
    head_ = Linear(d.widths[3], spec.num_classes);

    modules_ = {{"stem_conv", ModuleKind::stem},   {"stem_norm", ModuleKind::norm},
                {"stage1", ModuleKind::conv_stage}, {"stage2", ModuleKind::conv_stage},
                {"stage3", ModuleKind::conv_stage}, {"stage4", ModuleKind::conv_stage},
                {"head", ModuleKind::head}};
    taps_ = {"stem_conv", "stem_norm", "stage1", "stage2", "stage3", "stage4"};
    register_all();
}

void MiniCnn::register_all() {
    register_param("stem_conv", "stem_conv.weight", &stem_conv_.weight, ParamKind::conv_weight);
    register_param("stem_conv", "stem_conv.bias", &stem_conv_.bias, ParamKind::bias);
    register_param("stem_norm", "stem_norm.gamma", &stem_norm_.gamma, ParamKind::norm_scale);
    register_param("stem_norm", "stem_norm.beta", &stem_norm_.beta, ParamKind::norm_shift);
    register_buffer("stem_norm", "stem_norm.running_mean", &stem_norm_.running_mean);
    register_buffer("stem_norm", "stem_norm.running_var", &stem_norm_.running_var);

    for (int s = 0; s < 4; ++s) {
        const std::string stage = "stage" + std::to_string(s + 1);
        for (std::size_t b = 0; b < stages_[s].size(); ++b) {
            BasicBlock& blk = stages_[s][b];
            const std::string base = stage + ".block" + std::to_string(b + 1) + ".";
            register_param(stage, base + "conv1.weight", &blk.conv1.weight, ParamKind::conv_weight);
            register_param(stage, base + "conv1.bias", &blk.conv1.bias, ParamKind::bias);
            register_param(stage, base + "bn1.gamma", &blk.bn1.gamma, ParamKind::norm_scale);
            register_param(stage, base + "bn1.beta", &blk.bn1.beta, ParamKind::norm_shift);
            register_buffer(stage, base + "bn1.running_mean", &blk.bn1.running_mean);
            register_buffer(stage, base + "bn1.running_var", &blk.bn1.running_var);
            register_param(stage, base + "conv2.weight", &blk.conv2.weight, ParamKind::conv_weight);
            register_param(stage, base + "conv2.bias", &blk.conv2.bias, ParamKind::bias);
            register_param(stage, base + "bn2.gamma", &blk.bn2.gamma, ParamKind::norm_scale);
            register_param(stage, base + "bn2.beta", &blk.bn2.beta, ParamKind::norm_shift);
            register_buffer(stage, base + "bn2.running_mean", &blk.bn2.running_mean);
            register_buffer(stage, base + "bn2.running_var", &blk.bn2.running_var);
            if (blk.has_down) {
                register_param(stage, base + "down.weight", &blk.down_conv.weight,
                               ParamKind::conv_weight);
                register_param(stage, base + "down.bias", &blk.down_conv.bias, ParamKind::bias);
                register_param(stage, base + "down_bn.gamma", &blk.down_bn.gamma,
                               ParamKind::norm_scale);
                register_param(stage, base + "down_bn.beta", &blk.down_bn.beta,
                               ParamKind::norm_shift);
                register_buffer(stage, base + "down_bn.running_mean", &blk.down_bn.running_mean);
                register_buffer(stage, base + "down_bn.running_var", &blk.down_bn.running_var);
            }
        }
    }
    register_param("head", "head.weight", &head_.weight, ParamKind::linear_weight);
    register_param("head", "head.bias", &head_.bias, ParamKind::bias);
}

Tensor MiniCnn::forward(const Tensor& x, const ForwardOptions& opt, CaptureResult* cap) {
    if (x.rank() != 4 || x.dim(1) != spec_.input_ch || x.dim(2) != spec_.input_h ||
        x.dim(3) != spec_.input_w)
        throw ShapeError("mini_cnn: expected (B," + std::to_string(spec_.input_ch) + "," +
                         std::to_string(spec_.input_h) + "," + std::to_string(spec_.input_w) +
                         "), got " + shape_str(x.shape));
    if (opt.taps)
        for (const auto& t : *opt.taps)
            if (!has_tap(t)) throw LookupError("mini_cnn: unknown tap " + t);

    Tensor a = stem_conv_.forward(x, opt.train);
    push_spatial(cap, opt, "stem_conv", a);
    a = stem_relu_.forward(stem_norm_.forward(a, opt.train), opt.train);
    push_spatial(cap, opt, "stem_norm", a);
    for (int s = 0; s < 4; ++s) {
        for (auto& blk : stages_[s]) a = blk.forward(a, opt.train);
        push_spatial(cap, opt, "stage" + std::to_string(s + 1), a);
    }
    gap_in_shape_ = a.shape;
    Tensor feats = global_avg_pool(a);
    return head_.forward(feats, opt.train);
}

void MiniCnn::backward(const Tensor& dlogits) {
    Tensor d = gap_backward(head_.backward(dlogits), gap_in_shape_);
    for (int s = 3; s >= 0; --s)
        for (auto it = stages_[s].rbegin(); it != stages_[s].rend(); ++it) d = it->backward(d);
    stem_conv_.backward(stem_norm_.backward(stem_relu_.backward(d)));
}

std::unique_ptr<ProbeableNetwork> MiniCnn::clone() const {
    auto copy = std::make_unique<MiniCnn>(spec_);
    for (std::size_t i = 0; i < params_.size(); ++i)
        copy->params_[i].param->value = params_[i].param->value;
    for (std::size_t i = 0; i < buffers_.size(); ++i)
        *copy->buffers_[i].tensor = *buffers_[i].tensor;
    return copy;
}

} // namespace tlab::netlab
