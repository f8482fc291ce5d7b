#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "tlab/initkit/init.hpp"
#include "tlab/netlab/network.hpp"
#include "tlab/netlab/snapshot.hpp"
#include "tlab/rng.hpp"

using namespace tlab;
using namespace tlab::netlab;
using namespace tlab::initkit;

namespace {

ArchSpec make_spec(Family fam, Capacity cap = Capacity::tiny, std::uint64_t seed = 0) {
    ArchSpec s;
    s.family = fam;
    s.capacity = cap;
    s.input_h = s.input_w = 32;
    s.num_classes = 10;
    s.seed = seed;
    return s;
}

/// A stand-in for a pretrained source: every tensor filled from its own
/// normal so all per-tensor sigmas are positive and distinct.
WeightSnapshot make_source(const ArchSpec& spec) {
    auto net = build_model(spec);
    int k = 0;
    for (auto& p : net->params()) {
        Rng rng = Rng::keyed(999, p.name);
        const double mu = 0.01 * (k % 7 - 3);
        const double sd = 0.05 + 0.01 * (k % 5);
        for (auto& v : p.param->value.data) v = static_cast<float>(rng.normal(mu, sd));
        ++k;
    }
    return snapshot_weights(*net, SnapshotTag::pretrained);
}

bool params_bitwise_equal(ProbeableNetwork& a, ProbeableNetwork& b) {
    auto pa = a.params();
    auto pb = b.params();
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        if (!pa[i].param->value.bitwise_equal(pb[i].param->value)) return false;
    return true;
}

} // namespace

TEST_CASE("weight_stats hand cases") {
    auto net = build_model(make_spec(Family::mini_cnn));
    // constant tensor -> (mu=c, sigma=0)
    net->params()[0].param->value.fill(3.25f);
    WeightSnapshot snap = snapshot_weights(*net, SnapshotTag::initial);
    LayerStats stats = weight_stats(snap);
    const TensorStats* ts = stats.find(net->params()[0].name);
    REQUIRE(ts != nullptr);
    CHECK(ts->mu == doctest::Approx(3.25).epsilon(1e-12));
    CHECK(ts->sigma == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(ts->count == (long)net->params()[0].param->value.numel());

    // [1,2,3,4] -> mu 2.5, sigma sqrt(1.25) (population convention)
    Tensor& bias = net->params()[1].param->value;  // stem_conv.bias has 8 entries
    REQUIRE(bias.numel() >= 4);
    bias.fill(0.0f);
    WeightSnapshot snap4 = snapshot_weights(*net, SnapshotTag::initial);
    // emulate a 4-element tensor by hand computation on a local snapshot copy
    snap4.params[1].tensor = Tensor({4});
    snap4.params[1].tensor.data = {1.0f, 2.0f, 3.0f, 4.0f};
    LayerStats stats4 = weight_stats(snap4);
    const TensorStats* t4 = stats4.find(snap4.params[1].name);
    CHECK(t4->mu == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(t4->sigma == doctest::Approx(std::sqrt(1.25)).epsilon(1e-12));

    // stats of a bitwise copy are identical
    WeightSnapshot copy = snap;
    LayerStats s1 = weight_stats(snap), s2 = weight_stats(copy);
    REQUIRE(s1.entries.size() == s2.entries.size());
    for (std::size_t i = 0; i < s1.entries.size(); ++i) {
        CHECK(s1.entries[i].mu == s2.entries[i].mu);
        CHECK(s1.entries[i].sigma == s2.entries[i].sigma);
    }
}

TEST_CASE("init_random determinism and Kaiming scale") {
    auto a = build_model(make_spec(Family::mini_cnn, Capacity::small));
    auto b = build_model(make_spec(Family::mini_cnn, Capacity::small));
    init_random(*a, 21);
    init_random(*b, 21);
    CHECK(params_bitwise_equal(*a, *b));
    init_random(*b, 22);
    CHECK(!params_bitwise_equal(*a, *b));

    // conv weight with >= 1e4 elements: sample std within 5% of sqrt(2/fan_in)
    for (auto& p : a->params()) {
        if (a->param_kind(p.name) != ParamKind::conv_weight) continue;
        const Tensor& t = p.param->value;
        if (t.numel() < 10000) continue;
        const int fan = fan_in_of(ParamKind::conv_weight, t.shape);
        double mean = 0.0;
        for (float v : t.data) mean += v;
        mean /= (double)t.numel();
        double var = 0.0;
        for (float v : t.data) var += (v - mean) * (v - mean);
        var /= (double)t.numel();
        const double expect = std::sqrt(2.0 / fan);
        CHECK(std::sqrt(var) == doctest::Approx(expect).epsilon(0.05));
    }

    // norm scales all ones, shifts and biases zero
    for (auto& p : a->params()) {
        const auto kind = a->param_kind(p.name);
        if (kind == ParamKind::norm_scale)
            for (float v : p.param->value.data) CHECK(v == 1.0f);
        if (kind == ParamKind::norm_shift || kind == ParamKind::bias)
            for (float v : p.param->value.data) CHECK(v == 0.0f);
    }
}

TEST_CASE("init_stats_transfer sampling fidelity") {
    const ArchSpec spec = make_spec(Family::mini_cnn, Capacity::small);
    WeightSnapshot source = make_source(spec);
    LayerStats stats = weight_stats(source);

    auto net = build_model(spec);
    init_stats_transfer(*net, stats, 77);

    int large_checked = 0;
    for (auto& p : net->params()) {
        if (net->module_of(p.name) == "head") continue;
        const TensorStats* ts = stats.find(p.name);
        REQUIRE(ts != nullptr);
        const Tensor& t = p.param->value;
        // never bitwise equal to the source when sigma > 0
        CHECK(!t.bitwise_equal(*source.find_param(p.name)));
        if (t.numel() < 10000) continue;
        double mean = 0.0;
        for (float v : t.data) mean += v;
        mean /= (double)t.numel();
        double var = 0.0;
        for (float v : t.data) var += (v - mean) * (v - mean);
        var /= (double)t.numel();
        CHECK(std::fabs(mean - ts->mu) <= 4.0 * ts->sigma / std::sqrt((double)t.numel()));
        CHECK(std::sqrt(var) == doctest::Approx(ts->sigma).epsilon(0.05));
        ++large_checked;
    }
    CHECK(large_checked >= 3);

    // degenerate sigma = 0 becomes a constant fill
    LayerStats zero = stats;
    for (auto& e : zero.entries) {
        e.sigma = 0.0;
        e.mu = 0.5;
    }
    init_stats_transfer(*net, zero, 77);
    for (auto& p : net->params()) {
        if (net->module_of(p.name) == "head") continue;
        for (float v : p.param->value.data) CHECK(v == 0.5f);
    }

    // missing entry -> compatibility error
    LayerStats partial = stats;
    partial.entries.erase(partial.entries.begin());
    CHECK_THROWS_AS(init_stats_transfer(*net, partial, 77), CompatError);
}

TEST_CASE("init_weight_transfer copies everything but the head") {
    const ArchSpec spec = make_spec(Family::mini_vit, Capacity::small);
    WeightSnapshot source = make_source(spec);

    auto net = build_model(spec);
    init_weight_transfer(*net, source, 4);
    for (auto& p : net->params()) {
        const bool head = net->module_of(p.name) == "head";
        CHECK(p.param->value.bitwise_equal(*source.find_param(p.name)) == !head);
    }

    // incompatible source
    auto cnn = build_model(make_spec(Family::mini_cnn));
    CHECK_THROWS_AS(init_weight_transfer(*cnn, source, 4), CompatError);
}

TEST_CASE("weight transfer into a truncated ViT") {
    const ArchSpec spec = make_spec(Family::mini_vit, Capacity::small);
    WeightSnapshot source = make_source(spec);

    auto full = build_model(spec);
    auto t3 = truncate(*full, 3);
    init_weight_transfer(*t3, source, 8);
    for (auto& p : t3->params()) {
        const std::string& mod = t3->module_of(p.name);
        if (mod == "head") continue;
        CHECK(p.param->value.bitwise_equal(*source.find_param(p.name)));
    }
}

TEST_CASE("build_wt_st prefix equality at every depth, both families") {
    for (auto fam : {Family::mini_cnn, Family::mini_vit}) {
        const ArchSpec spec = make_spec(fam);
        WeightSnapshot source = make_source(spec);
        auto net = build_model(spec);
        const auto& part = partition_of(*net);
        const int groups = (int)part.groups.size();

        for (int n = 0; n <= groups; ++n) {
            build_wt_st(*net, source, n, 31);
            std::set<std::string> prefix_modules;
            for (int g = 0; g < n; ++g)
                for (const auto& m : part.groups[g].module_ids) prefix_modules.insert(m);
            for (auto& p : net->params()) {
                const std::string& mod = net->module_of(p.name);
                if (mod == "head") {
                    CHECK(!p.param->value.bitwise_equal(*source.find_param(p.name)));
                    continue;
                }
                const bool expect_equal = prefix_modules.count(mod) > 0;
                INFO("family=" << to_string(fam) << " n=" << n << " tensor=" << p.name);
                CHECK(p.param->value.bitwise_equal(*source.find_param(p.name)) == expect_equal);
            }
        }
        CHECK_THROWS_AS(build_wt_st(*net, source, -1, 31), ConfigError);
        CHECK_THROWS_AS(build_wt_st(*net, source, groups + 1, 31), ConfigError);
    }
}

TEST_CASE("boundary canonicalization: ST == WT-ST-0 and WT == WT-ST-max, bitwise") {
    const ArchSpec spec = make_spec(Family::mini_cnn);
    WeightSnapshot source = make_source(spec);
    auto a = build_model(spec);
    auto b = build_model(spec);
    const int groups = (int)partition_of(*a).groups.size();

    init_stats_transfer(*a, weight_stats(source), 55);
    build_wt_st(*b, source, 0, 55);
    CHECK(params_bitwise_equal(*a, *b));

    init_weight_transfer(*a, source, 56);
    build_wt_st(*b, source, groups, 56);
    CHECK(params_bitwise_equal(*a, *b));
}

TEST_CASE("scheme canonicalization and dispatch") {
    InitScheme ws;
    ws.kind = InitKind::WT_ST;
    ws.transfer_depth_n = 0;
    CHECK(ws.canonical(6).kind == InitKind::ST);
    ws.transfer_depth_n = 6;
    CHECK(ws.canonical(6).kind == InitKind::WT);
    ws.transfer_depth_n = 3;
    CHECK(ws.canonical(6).kind == InitKind::WT_ST);
    CHECK(ws.label() == "WT-ST-3");
    ws.transfer_depth_n = 7;
    CHECK_THROWS_AS((void)ws.canonical(6), ConfigError);

    const ArchSpec spec = make_spec(Family::mini_vit);
    WeightSnapshot source = make_source(spec);
    auto a = build_model(spec);
    auto b = build_model(spec);
    InitScheme st;
    st.kind = InitKind::ST;
    st.seed = 3;
    InitScheme wst0;
    wst0.kind = InitKind::WT_ST;
    wst0.transfer_depth_n = 0;
    wst0.seed = 3;
    apply_scheme(*a, st, &source);
    apply_scheme(*b, wst0, &source);
    CHECK(params_bitwise_equal(*a, *b));

    InitScheme ri;
    ri.kind = InitKind::RI;
    ri.seed = 3;
    apply_scheme(*a, ri, nullptr);  // RI needs no source
    CHECK_THROWS_AS(apply_scheme(*a, st, nullptr), ConfigError);
}
