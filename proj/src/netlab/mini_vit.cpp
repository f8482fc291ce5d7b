#include <algorithm>

#include "tlab/error.hpp"
#include "tlab/netlab/models.hpp"

namespace tlab::netlab {

VitDims vit_dims(Capacity c) {
    switch (c) {
        case Capacity::tiny: return {96, 4};
        case Capacity::small: return {128, 6};
        default: return {192, 8};
    }
}

namespace {

bool wants(const ForwardOptions& opt, const std::string& tap) {
    if (!opt.taps) return false;
    return std::find(opt.taps->begin(), opt.taps->end(), tap) != opt.taps->end();
}

void push_tokens(CaptureResult* cap, const ForwardOptions& opt, const std::string& tap,
                 const Tensor& act) {
    if (!cap || !wants(opt, tap)) return;
    ActivationBatch ab;
    ab.tap_id = tap;
    ab.layout = Layout::token_seq;
    ab.sample_shape = {act.dim(1), act.dim(2)};
    ab.cls_index = 0;
    ab.values = act;
    if (opt.sample_ids) ab.sample_ids = *opt.sample_ids;
    cap->taps.push_back(std::move(ab));
}

} // namespace

MiniVit::MiniVit(const ArchSpec& spec) {
    spec_ = spec;
    arch_id_ = spec.arch_id();
    dims_ = vit_dims(spec.capacity);
    if (spec.trunc_blocks > 0) {
        if (spec.trunc_blocks > dims_.depth)
            throw ConfigError("mini_vit: trunc_blocks exceeds depth");
        dims_.depth = spec.trunc_blocks;
    }
    if (spec.input_h % dims_.patch != 0 || spec.input_w % dims_.patch != 0)
        throw ShapeError("mini_vit: input not divisible by patch size " +
                         std::to_string(dims_.patch));
    grid_ = spec.input_h / dims_.patch;
    if (spec.input_w / dims_.patch != grid_)
        throw ShapeError("mini_vit: non-square patch grid unsupported");

    patch_proj_ = Conv2d(spec.input_ch, dims_.dim, dims_.patch, dims_.patch, 0);
    cls_token_ = Param({1, dims_.dim});
    pos_embed_ = Param({token_count(), dims_.dim});
    for (int b = 0; b < dims_.depth; ++b)
        blocks_.emplace_back(dims_.dim, dims_.heads, dims_.dim * dims_.mlp_ratio);
    final_norm_ = LayerNorm(dims_.dim);
    head_ = Linear(dims_.dim, spec.num_classes);

    modules_.push_back({"patchifier", ModuleKind::patchifier});
    taps_.push_back("patchifier");
    for (int b = 0; b < dims_.depth; ++b) {
        const std::string id = "block" + std::to_string(b + 1);
        modules_.push_back({id, ModuleKind::transformer_block});
        taps_.push_back(id + "_attn");
        taps_.push_back(id);
    }
    modules_.push_back({"final_norm", ModuleKind::norm});
    taps_.push_back("final_norm");
    modules_.push_back({"head", ModuleKind::head});
    register_all();
}

void MiniVit::register_all() {
    register_param("patchifier", "patchifier.proj.weight", &patch_proj_.weight,
                   ParamKind::conv_weight);
    register_param("patchifier", "patchifier.proj.bias", &patch_proj_.bias, ParamKind::bias);
    // cls token and positional table ride with the patchifier group (flagged in
    // checkpoint manifests as pos_embed_group)
    register_param("patchifier", "patchifier.cls_token", &cls_token_, ParamKind::embed);
    register_param("patchifier", "patchifier.pos_embed", &pos_embed_, ParamKind::embed);

    for (std::size_t b = 0; b < blocks_.size(); ++b) {
        TransformerBlock& blk = blocks_[b];
        const std::string mod = "block" + std::to_string(b + 1);
        const std::string base = mod + ".";
        register_param(mod, base + "ln1.gamma", &blk.ln1.gamma, ParamKind::norm_scale);
        register_param(mod, base + "ln1.beta", &blk.ln1.beta, ParamKind::norm_shift);
        register_param(mod, base + "attn.qkv.weight", &blk.attn.qkv.weight,
                       ParamKind::linear_weight);
        register_param(mod, base + "attn.qkv.bias", &blk.attn.qkv.bias, ParamKind::bias);
        register_param(mod, base + "attn.proj.weight", &blk.attn.proj.weight,
                       ParamKind::linear_weight);
        register_param(mod, base + "attn.proj.bias", &blk.attn.proj.bias, ParamKind::bias);
        register_param(mod, base + "ln2.gamma", &blk.ln2.gamma, ParamKind::norm_scale);
        register_param(mod, base + "ln2.beta", &blk.ln2.beta, ParamKind::norm_shift);
        register_param(mod, base + "mlp.fc1.weight", &blk.mlp.fc1.weight,
                       ParamKind::linear_weight);
        register_param(mod, base + "mlp.fc1.bias", &blk.mlp.fc1.bias, ParamKind::bias);
        register_param(mod, base + "mlp.fc2.weight", &blk.mlp.fc2.weight,
                       ParamKind::linear_weight);
        register_param(mod, base + "mlp.fc2.bias", &blk.mlp.fc2.bias, ParamKind::bias);
    }
    register_param("final_norm", "final_norm.gamma", &final_norm_.gamma, ParamKind::norm_scale);
    register_param("final_norm", "final_norm.beta", &final_norm_.beta, ParamKind::norm_shift);
    register_param("head", "head.weight", &head_.weight, ParamKind::linear_weight);
    register_param("head", "head.bias", &head_.bias, ParamKind::bias);
}

Tensor MiniVit::forward(const Tensor& x, const ForwardOptions& opt, CaptureResult* cap) {
    if (x.rank() != 4 || x.dim(1) != spec_.input_ch || x.dim(2) != spec_.input_h ||
        x.dim(3) != spec_.input_w)
        throw ShapeError("mini_vit: bad input shape " + shape_str(x.shape));
    if (opt.taps)
        for (const auto& t : *opt.taps)
            if (!has_tap(t)) throw LookupError("mini_vit: unknown tap " + t);

    const int b = x.dim(0), d = dims_.dim, t = token_count();
    batch_ = b;
    Tensor pm = patch_proj_.forward(x, opt.train);  // (B, D, g, g)
    const int g2 = grid_ * grid_;
    Tensor tokens({b, t, d});
    for (int s = 0; s < b; ++s) {
        float* cls = tokens.ptr() + (std::size_t)s * t * d;
        for (int i = 0; i < d; ++i) cls[i] = cls_token_.value[i] + pos_embed_.value[i];
        for (int p = 0; p < g2; ++p) {
            float* dst = tokens.ptr() + ((std::size_t)s * t + 1 + p) * d;
            const float* pe = pos_embed_.value.ptr() + (std::size_t)(1 + p) * d;
            for (int i = 0; i < d; ++i)
                dst[i] = pm[((std::size_t)s * d + i) * g2 + p] + pe[i];
        }
    }
    push_tokens(cap, opt, "patchifier", tokens);

    Tensor a = std::move(tokens);
    for (std::size_t k = 0; k < blocks_.size(); ++k) {
        const std::string id = "block" + std::to_string(k + 1);
        Tensor attn_out;
        Tensor attn_maps;
        const bool want_attn_tap = cap && wants(opt, id + "_attn");
        Tensor* maps_ptr = (cap && opt.capture_attention) ? &attn_maps : nullptr;
        a = blocks_[k].forward(a, opt.train, want_attn_tap ? &attn_out : nullptr, maps_ptr);
        if (want_attn_tap) push_tokens(cap, opt, id + "_attn", attn_out);
        if (maps_ptr) cap->attention.push_back(std::move(attn_maps));
        push_tokens(cap, opt, id, a);
    }
    a = final_norm_.forward(a, opt.train);
    push_tokens(cap, opt, "final_norm", a);

    Tensor cls_feat({b, d});
    for (int s = 0; s < b; ++s)
        std::copy(a.ptr() + (std::size_t)s * t * d, a.ptr() + (std::size_t)s * t * d + d,
                  cls_feat.ptr() + (std::size_t)s * d);
    return head_.forward(cls_feat, opt.train);
}

void MiniVit::backward(const Tensor& dlogits) {
    const int b = batch_, d = dims_.dim, t = token_count();
    Tensor dcls = head_.backward(dlogits);  // (B, D)
    Tensor dtok({b, t, d});
    for (int s = 0; s < b; ++s)
        std::copy(dcls.ptr() + (std::size_t)s * d, dcls.ptr() + (std::size_t)(s + 1) * d,
                  dtok.ptr() + (std::size_t)s * t * d);
    Tensor da = final_norm_.backward(dtok);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) da = it->backward(da);

    // split into patch gradient, cls gradient, positional gradient
    const int g2 = grid_ * grid_;
    Tensor dpm({b, d, grid_, grid_});
    for (int s = 0; s < b; ++s) {
        const float* dcls_row = da.ptr() + (std::size_t)s * t * d;
        for (int i = 0; i < d; ++i) {
            cls_token_.grad[i] += dcls_row[i];
            pos_embed_.grad[i] += dcls_row[i];
        }
        for (int p = 0; p < g2; ++p) {
            const float* src = da.ptr() + ((std::size_t)s * t + 1 + p) * d;
            float* pe = pos_embed_.grad.ptr() + (std::size_t)(1 + p) * d;
            for (int i = 0; i < d; ++i) {
                dpm[((std::size_t)s * d + i) * g2 + p] = src[i];
                pe[i] += src[i];
            }
        }
    }
    patch_proj_.backward(dpm);
}

std::unique_ptr<ProbeableNetwork> MiniVit::clone() const {
    auto copy = std::make_unique<MiniVit>(spec_);
    for (std::size_t i = 0; i < params_.size(); ++i)
        copy->params_[i].param->value = params_[i].param->value;
    for (std::size_t i = 0; i < buffers_.size(); ++i)
        *copy->buffers_[i].tensor = *buffers_[i].tensor;
    return copy;
}

} // namespace tlab::netlab
