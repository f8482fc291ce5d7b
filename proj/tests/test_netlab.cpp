#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "tlab/netlab/models.hpp"
#include "tlab/netlab/network.hpp"
#include "tlab/netlab/snapshot.hpp"
#include "tlab/rng.hpp"

using namespace tlab;
using namespace tlab::netlab;

namespace {

ArchSpec cnn_spec(Capacity cap = Capacity::small, int hw = 32, int classes = 10,
                  std::uint64_t seed = 0) {
    ArchSpec s;
    s.family = Family::mini_cnn;
    s.capacity = cap;
    s.input_h = s.input_w = hw;
    s.num_classes = classes;
    s.seed = seed;
    return s;
}

ArchSpec vit_spec(Capacity cap = Capacity::small, int hw = 32, int classes = 10,
                  std::uint64_t seed = 0) {
    ArchSpec s = cnn_spec(cap, hw, classes, seed);
    s.family = Family::mini_vit;
    return s;
}

Tensor random_images(int b, int ch, int h, int w, std::uint64_t seed) {
    Tensor x({b, ch, h, w});
    Rng rng(seed);
    for (auto& v : x.data) v = static_cast<float>(rng.uniform());
    return x;
}

std::size_t param_count(ProbeableNetwork& net) {
    std::size_t n = 0;
    for (auto& p : net.params()) n += p.param->value.numel();
    return n;
}

bool params_bitwise_equal(ProbeableNetwork& a, ProbeableNetwork& b) {
    auto pa = a.params();
    auto pb = b.params();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (pa[i].name != pb[i].name || !pa[i].param->value.bitwise_equal(pb[i].param->value))
            return false;
    return true;
}

// softmax cross-entropy used only as a scalar objective for gradient checking
double ce_loss(const Tensor& logits, const std::vector<int>& labels) {
    const int b = logits.dim(0), c = logits.dim(1);
    double loss = 0.0;
    for (int s = 0; s < b; ++s) {
        const float* row = logits.ptr() + (std::size_t)s * c;
        float mx = row[0];
        for (int i = 1; i < c; ++i) mx = std::max(mx, row[i]);
        double z = 0.0;
        for (int i = 0; i < c; ++i) z += std::exp((double)row[i] - mx);
        loss += std::log(z) - ((double)row[labels[s]] - mx);
    }
    return loss / b;
}

Tensor ce_grad(const Tensor& logits, const std::vector<int>& labels) {
    const int b = logits.dim(0), c = logits.dim(1);
    Tensor d({b, c});
    for (int s = 0; s < b; ++s) {
        const float* row = logits.ptr() + (std::size_t)s * c;
        float mx = row[0];
        for (int i = 1; i < c; ++i) mx = std::max(mx, row[i]);
        double z = 0.0;
        for (int i = 0; i < c; ++i) z += std::exp((double)row[i] - mx);
        for (int i = 0; i < c; ++i) {
            const double p = std::exp((double)row[i] - mx) / z;
            d[(std::size_t)s * c + i] = (float)((p - (i == labels[s] ? 1.0 : 0.0)) / b);
        }
    }
    return d;
}

void gradient_check(ProbeableNetwork& net, int batch) {
    const auto& sp = net.spec();
    Tensor x = random_images(batch, sp.input_ch, sp.input_h, sp.input_w, 42);
    std::vector<int> labels(batch);
    for (int i = 0; i < batch; ++i) labels[i] = i % sp.num_classes;

    ForwardOptions train_opt;
    train_opt.train = true;
    net.zero_grads();
    Tensor logits = net.forward(x, train_opt, nullptr);
    net.backward(ce_grad(logits, labels));

    const double l0 = ce_loss(net.forward(x, train_opt, nullptr), labels);
    Rng pick(7);
    int checked = 0;
    for (auto& p : net.params()) {
        // sample a few coordinates per tensor
        const std::size_t n = p.param->value.numel();
        for (int rep = 0; rep < 2; ++rep) {
            const std::size_t idx = pick.below(n);
            const float orig = p.param->value[idx];
            const float h = 1e-3f;
            p.param->value[idx] = orig + h;
            const double lp = ce_loss(net.forward(x, train_opt, nullptr), labels);
            p.param->value[idx] = orig - h;
            const double lm = ce_loss(net.forward(x, train_opt, nullptr), labels);
            p.param->value[idx] = orig;
            const double ana = p.param->grad[idx];
            // accept the best of central / one-sided estimates; ReLU kinks can
            // sit inside the probe interval
            const double cands[3] = {(lp - lm) / (2.0 * h), (lp - l0) / h, (l0 - lm) / h};
            double best = cands[0], err = std::fabs(cands[0] - ana);
            for (double c : cands)
                if (std::fabs(c - ana) < err) {
                    err = std::fabs(c - ana);
                    best = c;
                }
            if (std::fabs(best) < 2e-3 && std::fabs(ana) < 2e-3) continue;  // both ~0
            const double tol = 8e-2 * std::max({1.0, std::fabs(best), std::fabs(ana)});
            INFO(p.name << "[" << idx << "] numeric=" << best << " analytic=" << ana);
            CHECK(err <= tol);
            ++checked;
        }
    }
    CHECK(checked > 20);
}

} // namespace

TEST_CASE("mini_cnn structure and partition") {
    auto net = build_model(cnn_spec());
    const auto& part = partition_of(*net);
    REQUIRE(part.groups.size() == 6);
    CHECK(part.groups[0].group_id == "stem_conv");
    CHECK(part.groups[1].group_id == "stem_norm");
    CHECK(part.groups[2].group_id == "stage1");
    CHECK(part.groups[5].group_id == "stage4");
    CHECK(part.wt_st_levels == 7);
    CHECK(part.head_group.group_id == "head");
}

TEST_CASE("mini_vit structure and partition") {
    auto net = build_model(vit_spec());
    const auto& part = partition_of(*net);
    REQUIRE(part.groups.size() == 8);  // patchifier + 6 blocks + final_norm
    CHECK(part.groups[0].group_id == "patchifier");
    CHECK(part.groups[1].group_id == "block1");
    CHECK(part.groups[6].group_id == "block6");
    CHECK(part.groups[7].group_id == "final_norm");
    CHECK(part.wt_st_levels == 9);

    bool has_cls = false;
    for (auto& p : net->params())
        if (p.name == "patchifier.cls_token") has_cls = true;
    CHECK(has_cls);
}

TEST_CASE("partition covers every parameter exactly once") {
    for (auto spec : {cnn_spec(), vit_spec()}) {
        auto net = build_model(spec);
        const auto& part = partition_of(*net);
        std::set<std::string> covered;
        auto add_group = [&](const PartitionGroup& g) {
            for (auto& p : net->params()) {
                const std::string& mod = net->module_of(p.name);
                for (const auto& m : g.module_ids)
                    if (m == mod) {
                        CHECK(!covered.count(p.name));  // disjoint
                        covered.insert(p.name);
                    }
            }
        };
        for (const auto& g : part.groups) add_group(g);
        add_group(part.head_group);
        CHECK(covered.size() == net->params().size());
    }
}

TEST_CASE("build_model is deterministic in (spec, seed)") {
    auto a = build_model(vit_spec(Capacity::tiny, 32, 10, 5));
    auto b = build_model(vit_spec(Capacity::tiny, 32, 10, 5));
    CHECK(params_bitwise_equal(*a, *b));
    auto c = build_model(vit_spec(Capacity::tiny, 32, 10, 6));
    CHECK(!params_bitwise_equal(*a, *c));
}

TEST_CASE("capacity monotonicity tiny < small < base") {
    for (auto family : {Family::mini_cnn, Family::mini_vit}) {
        ArchSpec s = family == Family::mini_cnn ? cnn_spec() : vit_spec();
        s.capacity = Capacity::tiny;
        auto t = build_model(s);
        s.capacity = Capacity::small;
        auto sm = build_model(s);
        s.capacity = Capacity::base;
        auto b = build_model(s);
        CHECK(param_count(*t) < param_count(*sm));
        CHECK(param_count(*sm) < param_count(*b));
    }
}

TEST_CASE("build_model error paths") {
    ArchSpec bad = vit_spec();
    bad.input_h = bad.input_w = 30;  // not divisible by patch 4
    CHECK_THROWS_AS((void)build_model(bad), ShapeError);
    ArchSpec one_class = cnn_spec();
    one_class.num_classes = 1;
    CHECK_THROWS_AS((void)build_model(one_class), ConfigError);
    CHECK_THROWS_AS((void)family_from_string("mega_net"), ConfigError);
    CHECK_THROWS_AS((void)capacity_from_string("huge"), ConfigError);
    CHECK_THROWS_AS((void)partition_for("not_an_arch"), LookupError);
}

TEST_CASE("activation capture shapes and non-interference") {
    auto cnn = build_model(cnn_spec(Capacity::tiny));
    Tensor x = random_images(8, 3, 32, 32, 1);

    std::vector<std::string> taps = {"stage1"};
    ForwardOptions opt;
    opt.taps = &taps;
    CaptureResult cap;
    Tensor with = cnn->forward(x, opt, &cap);
    REQUIRE(cap.taps.size() == 1);
    CHECK(cap.taps[0].layout == Layout::spatial_map);
    CHECK(cap.taps[0].batch() == 8);
    CHECK(cap.taps[0].sample_shape.size() == 3);

    Tensor without = cnn->forward(x, {}, nullptr);
    REQUIRE(with.numel() == without.numel());
    for (std::size_t i = 0; i < with.numel(); ++i) CHECK(with[i] == without[i]);  // 0 ULP

    auto vit = build_model(vit_spec(Capacity::small));
    std::vector<std::string> vtaps = {"block3"};
    ForwardOptions vopt;
    vopt.taps = &vtaps;
    CaptureResult vcap;
    (void)vit->forward(x, vopt, &vcap);
    REQUIRE(vcap.taps.size() == 1);
    CHECK(vcap.taps[0].layout == Layout::token_seq);
    CHECK(vcap.taps[0].sample_shape[0] == 1 + (32 / 4) * (32 / 4));
    CHECK(vcap.taps[0].cls_index == 0);

    std::vector<std::string> unknown = {"stage9"};
    ForwardOptions bad;
    bad.taps = &unknown;
    CHECK_THROWS_AS((void)cnn->forward(x, bad, &cap), LookupError);
    CHECK_THROWS_AS((void)cnn->forward(random_images(2, 3, 16, 16, 2), {}, nullptr), ShapeError);

    // the named capture entry point validates ids and returns forward order
    std::vector<std::int64_t> ids = {10, 11, 12, 13, 14, 15, 16, 17};
    std::vector<std::string> two_taps = {"stem_conv", "stage2"};
    auto batches = capture_activations(*cnn, x, ids, two_taps);
    REQUIRE(batches.size() == 2);
    CHECK(batches[0].tap_id == "stem_conv");
    CHECK(batches[1].tap_id == "stage2");
    CHECK(batches[0].sample_ids == ids);
    std::vector<std::int64_t> short_ids = {1, 2};
    CHECK_THROWS_AS((void)capture_activations(*cnn, x, short_ids, two_taps), ShapeError);
}

TEST_CASE("snapshot immutability and restore") {
    auto net = build_model(cnn_spec(Capacity::tiny));
    WeightSnapshot snap = snapshot_weights(*net, SnapshotTag::initial);

    // restore on an untouched network is a no-op
    restore_all(*net, snap);
    CHECK(network_equals_snapshot(*net, snap));

    // mutate everything; snapshot must not move
    for (auto& p : net->params())
        for (auto& v : p.param->value.data) v += 0.25f;
    CHECK(!network_equals_snapshot(*net, snap));
    CHECK(snap.params[0].tensor.data[0] + 0.25f ==
          doctest::Approx(net->params()[0].param->value.data[0]));

    // restoring one group touches exactly that group
    restore_module(*net, snap, "stage2");
    for (auto& p : net->params()) {
        const bool in_stage2 = net->module_of(p.name) == "stage2";
        CHECK(p.param->value.bitwise_equal(*snap.find_param(p.name)) == in_stage2);
    }

    // restoring every group one-by-one recovers the snapshot bitwise
    const auto& part = partition_of(*net);
    for (const auto& g : part.groups) restore_module(*net, snap, g.group_id);
    restore_module(*net, snap, "head");
    CHECK(network_equals_snapshot(*net, snap));

    auto other = build_model(vit_spec(Capacity::tiny));
    CHECK_THROWS_AS(restore_module(*other, snap, "stage2"), CompatError);
    CHECK_THROWS_AS(restore_module(*net, snap, "nonexistent"), LookupError);
}

TEST_CASE("vit snapshot contains cls token") {
    auto net = build_model(vit_spec(Capacity::tiny));
    WeightSnapshot snap = snapshot_weights(*net, SnapshotTag::initial);
    CHECK(snap.find_param("patchifier.cls_token") != nullptr);
    CHECK(snap.find_param("patchifier.pos_embed") != nullptr);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "tlab_ckpt_test";
    fs::create_directories(dir);
    const std::string base = (dir / "ck").string();

    auto net = build_model(vit_spec(Capacity::tiny, 32, 7, 3));
    WeightSnapshot snap = snapshot_weights(*net, SnapshotTag::best);
    save_checkpoint(snap, base);
    WeightSnapshot loaded = load_checkpoint(base);
    CHECK(loaded.arch_id == snap.arch_id);
    CHECK(loaded.tag == SnapshotTag::best);
    REQUIRE(loaded.params.size() == snap.params.size());
    for (std::size_t i = 0; i < snap.params.size(); ++i)
        CHECK(loaded.params[i].tensor.bitwise_equal(snap.params[i].tensor));

    // round trip through a rebuilt network
    auto net2 = network_from_snapshot(loaded);
    CHECK(network_equals_snapshot(*net2, snap));

    // manifest flags the positional-embedding group assignment
    std::ifstream mf(base + ".json");
    std::string manifest((std::istreambuf_iterator<char>(mf)), std::istreambuf_iterator<char>());
    CHECK(manifest.find("pos_embed_group") != std::string::npos);

    // corrupting the blob trips the checksum
    {
        std::fstream bf(base + ".bin", std::ios::in | std::ios::out | std::ios::binary);
        bf.seekp(100);
        char byte = 0;
        bf.read(&byte, 1);
        bf.seekp(100);
        byte = static_cast<char>(byte ^ 0x1);
        bf.write(&byte, 1);
    }
    CHECK_THROWS_AS((void)load_checkpoint(base), DataError);
    fs::remove_all(dir);
}

TEST_CASE("truncate keeps prefix weights and regenerates partition") {
    auto net = build_model(vit_spec(Capacity::small, 32, 10, 11));
    // make the source distinguishable from any fresh RI build
    for (auto& p : net->params())
        for (auto& v : p.param->value.data) v += 0.125f;

    auto t3 = truncate(*net, 3);
    CHECK(param_count(*t3) < param_count(*net));
    const auto& part = partition_of(*t3);
    CHECK(part.groups.size() == 5);  // patchifier + 3 blocks + final_norm

    auto src_vals = net->param_values();
    auto find_src = [&](const std::string& n) -> const Tensor* {
        for (auto& [name, t] : src_vals)
            if (name == n) return t;
        return nullptr;
    };
    for (auto& p : t3->params()) {
        const std::string& mod = t3->module_of(p.name);
        if (mod == "final_norm" || mod == "head") {
            CHECK(!p.param->value.bitwise_equal(*find_src(p.name)));  // fresh
        } else {
            CHECK(p.param->value.bitwise_equal(*find_src(p.name)));
        }
    }

    // boundary: truncate to full depth keeps all block weights
    auto tfull = truncate(*net, 6);
    for (auto& p : tfull->params()) {
        const std::string& mod = tfull->module_of(p.name);
        if (mod != "final_norm" && mod != "head")
            CHECK(p.param->value.bitwise_equal(*find_src(p.name)));
    }

    auto cnn = build_model(cnn_spec());
    CHECK_THROWS_AS((void)truncate(*cnn, 2), UnsupportedError);
    CHECK_THROWS_AS((void)truncate(*net, 0), ConfigError);
    CHECK_THROWS_AS((void)truncate(*net, 7), ConfigError);
}

TEST_CASE("truncation prefix property: shared depth produces identical activations") {
    auto net = build_model(vit_spec(Capacity::tiny, 32, 10, 2));
    auto t2 = truncate(*net, 2);
    Tensor x = random_images(4, 3, 32, 32, 9);

    std::vector<std::string> taps = {"block2"};
    ForwardOptions opt;
    opt.taps = &taps;
    CaptureResult ca, cb;
    (void)net->forward(x, opt, &ca);
    (void)t2->forward(x, opt, &cb);
    REQUIRE(ca.taps.size() == 1);
    REQUIRE(cb.taps.size() == 1);
    CHECK(ca.taps[0].values.bitwise_equal(cb.taps[0].values));
}

TEST_CASE("gradients match finite differences (mini_cnn)") {
    auto net = build_model(cnn_spec(Capacity::tiny, 16, 4, 13));
    gradient_check(*net, 6);
}

TEST_CASE("gradients match finite differences (mini_vit)") {
    auto net = build_model(vit_spec(Capacity::tiny, 8, 4, 13));
    gradient_check(*net, 6);
}
