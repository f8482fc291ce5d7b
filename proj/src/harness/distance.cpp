#include "tlab/harness/distance.hpp"

#include "tlab/error.hpp"
#include "tlab/initkit/init.hpp"
#include "tlab/metrics/metrics.hpp"
#include "tlab/netlab/snapshot.hpp"
#include "tlab/probes/knn.hpp"

namespace tlab::harness {

using netlab::ActivationBatch;
using netlab::CaptureResult;
using netlab::ForwardOptions;
using netlab::ProbeableNetwork;

Tensor fid_embeddings(ProbeableNetwork& net, const Tensor& images, int batch_size) {
    const int total = images.dim(0);
    if (total == 0) throw DataError("fid_embeddings: no images");
    const int ch = images.dim(1), h = images.dim(2), w = images.dim(3);
    const bool is_cnn = net.spec().family == netlab::Family::mini_cnn;
    const std::vector<std::string> taps = {is_cnn ? "stage4" : "final_norm"};
    const auto mode = is_cnn ? probes::EmbedMode::gap : probes::EmbedMode::cls;

    Tensor out;
    for (int start = 0; start < total; start += batch_size) {
        const int n = std::min(batch_size, total - start);
        Tensor batch({n, ch, h, w});
        std::copy(images.ptr() + (std::size_t)start * ch * h * w,
                  images.ptr() + (std::size_t)(start + n) * ch * h * w, batch.ptr());
        for (auto& v : batch.data) v = (v - 0.5f) / 0.5f;
        ForwardOptions opt;
        opt.taps = &taps;
        CaptureResult cap;
        (void)net.forward(batch, opt, &cap);
        Tensor emb = probes::embed_activation(cap.taps.at(0), mode);
        if (out.numel() == 0) out = Tensor({total, emb.dim(1)});
        std::copy(emb.ptr(), emb.ptr() + emb.numel(),
                  out.ptr() + (std::size_t)start * emb.dim(1));
    }
    return out;
}

std::unique_ptr<ProbeableNetwork> load_embedder(const std::string& ckpt_base) {
    netlab::WeightSnapshot snap = netlab::load_checkpoint(ckpt_base);
    auto net = netlab::build_model(snap.spec);
    // the checkpoint usually has its task head stripped; route through weight
    // transfer, which re-initializes the (unused) head
    initkit::init_weight_transfer(*net, snap, snap.spec.seed);
    return net;
}

double dataset_distance(const Dataset& a, const Dataset& b, ProbeableNetwork& embedder) {
    Tensor ea = fid_embeddings(embedder, a.images);
    Tensor eb = fid_embeddings(embedder, b.images);
    return metrics::fid(ea, eb);
}

} // namespace tlab::harness
