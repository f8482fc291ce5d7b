#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tlab/netlab/network.hpp"
#include "tlab/netlab/snapshot.hpp"
#include "tlab/probes/attdist.hpp"
#include "tlab/probes/resilience.hpp"
#include "tlab/rng.hpp"

using namespace tlab;
using namespace tlab::netlab;
using namespace tlab::probes;

namespace {

ArchSpec tiny_cnn_spec(std::uint64_t seed = 0) {
    ArchSpec s;
    s.family = Family::mini_cnn;
    s.capacity = Capacity::tiny;
    s.input_h = s.input_w = 16;
    s.num_classes = 4;
    s.seed = seed;
    return s;
}

double weight_fingerprint(ProbeableNetwork& net) {
    double acc = 0.0;
    int k = 1;
    for (auto& p : net.params()) {
        for (float v : p.param->value.data) acc += v * (0.001 * (k % 97));
        ++k;
    }
    return acc;
}

} // namespace

TEST_CASE("reinit robustness on an untrained network equals baseline at every group") {
    auto net = build_model(tiny_cnn_spec(3));
    WeightSnapshot initial = snapshot_weights(*net, SnapshotTag::initial);
    LayerSeries series =
        reinit_robustness(*net, initial, [](ProbeableNetwork& n) { return weight_fingerprint(n); });
    REQUIRE(series.points.size() == partition_of(*net).groups.size());
    for (const auto& pt : series.points) CHECK(pt.value == series.baseline);
    CHECK(network_equals_snapshot(*net, initial));  // returned in its (un)trained state
}

TEST_CASE("reinit robustness restores exactly one group per evaluation") {
    auto net = build_model(tiny_cnn_spec(4));
    WeightSnapshot initial = snapshot_weights(*net, SnapshotTag::initial);
    // emulate training
    Rng rng(11);
    for (auto& p : net->params())
        for (auto& v : p.param->value.data) v += 0.05f * (float)rng.normal();
    WeightSnapshot trained = snapshot_weights(*net, SnapshotTag::best);

    const auto& part = partition_of(*net);
    std::size_t call = 0;
    LayerSeries series = reinit_robustness(*net, initial, [&](ProbeableNetwork& n) {
        if (call > 0) {  // call 0 is the baseline on the trained weights
            const auto& group = part.groups[call - 1];
            for (auto& p : n.params()) {
                const std::string& mod = n.module_of(p.name);
                bool in_group = false;
                for (const auto& m : group.module_ids)
                    if (m == mod) in_group = true;
                const bool matches_initial =
                    p.param->value.bitwise_equal(*initial.find_param(p.name));
                const bool matches_trained =
                    p.param->value.bitwise_equal(*trained.find_param(p.name));
                CHECK(matches_initial == in_group);
                CHECK(matches_trained == !in_group);
            }
        }
        ++call;
        return weight_fingerprint(n);
    });
    CHECK(call == part.groups.size() + 1);
    CHECK(network_equals_snapshot(*net, trained));  // trained weights put back

    auto other = build_model(tiny_cnn_spec(5));
    WeightSnapshot mismatched = snapshot_weights(*other, SnapshotTag::initial);
    mismatched.arch_id = "something_else";
    CHECK_THROWS_AS(
        (void)reinit_robustness(*net, mismatched, [](ProbeableNetwork&) { return 0.0; }),
        CompatError);
}

TEST_CASE("l2 drift: zeros iff unchanged, hand-computed value") {
    auto net = build_model(tiny_cnn_spec(6));
    WeightSnapshot initial = snapshot_weights(*net, SnapshotTag::initial);
    const auto& part = partition_of(*net);

    // unchanged network: all zeros
    WeightSnapshot same = snapshot_weights(*net, SnapshotTag::best);
    LayerSeries zeros = l2_drift(initial, same, part);
    for (const auto& pt : zeros.points) CHECK(pt.value == 0.0);

    // change exactly four stem_conv weights by +-0.1:
    // value = sqrt(4 * 0.01) / group element count = 0.2 / count
    auto& stem_w = net->params()[0].param->value;  // stem_conv.weight
    stem_w[0] += 0.1f;
    stem_w[1] -= 0.1f;
    stem_w[2] += 0.1f;
    stem_w[3] -= 0.1f;
    WeightSnapshot moved = snapshot_weights(*net, SnapshotTag::best);
    std::size_t group_count = 0;
    for (const auto& nt : initial.params)
        if (nt.name.rfind("stem_conv.", 0) == 0) group_count += nt.tensor.numel();
    LayerSeries drift = l2_drift(initial, moved, part);
    CHECK(drift.points[0].id == "stem_conv");
    CHECK(drift.points[0].value == doctest::Approx(0.2 / (double)group_count).epsilon(1e-9));
    for (std::size_t i = 1; i < drift.points.size(); ++i) CHECK(drift.points[i].value == 0.0);

    // a restored ("frozen") group drifts exactly zero while others move
    Rng rng(13);
    for (auto& p : net->params())
        for (auto& v : p.param->value.data) v += 0.02f * (float)rng.normal();
    restore_module(*net, initial, "stage2");
    WeightSnapshot frozen = snapshot_weights(*net, SnapshotTag::best);
    LayerSeries drift2 = l2_drift(initial, frozen, part);
    for (const auto& pt : drift2.points) {
        if (pt.id == "stage2")
            CHECK(pt.value == 0.0);
        else
            CHECK(pt.value > 0.0);
    }

    WeightSnapshot foreign = initial;
    foreign.arch_id = "other_arch";
    CHECK_THROWS_AS((void)l2_drift(foreign, moved, part), CompatError);
}

namespace {

Tensor identity_attention(int b, int h, int t) {
    Tensor a({b, h, t, t});
    for (int s = 0; s < b; ++s)
        for (int hd = 0; hd < h; ++hd)
            for (int q = 0; q < t; ++q) a[(((std::size_t)s * h + hd) * t + q) * t + q] = 1.0f;
    return a;
}

} // namespace

TEST_CASE("mean attended distance: identity and uniform hand cases") {
    // identity attention: every token attends to itself only -> exactly 0
    std::vector<Tensor> ident = {identity_attention(2, 3, 4)};
    LayerSeries zero = mean_attended_distance(ident, 2, 2, false);
    CHECK(zero.points[0].value == 0.0);

    // uniform attention over a 2x2 grid: (0 + 1 + 1 + sqrt(2)) / 4 per query
    Tensor uniform({1, 1, 4, 4});
    for (auto& v : uniform.data) v = 0.25f;
    LayerSeries u = mean_attended_distance({uniform}, 2, 2, false);
    const double expected = (2.0 + std::sqrt(2.0)) / 4.0;
    CHECK(std::fabs(u.points[0].value - expected) <= 1e-9);

    // with a cls token: uniform rows over 5 tokens, cls mass dropped
    Tensor with_cls({1, 2, 5, 5});
    for (auto& v : with_cls.data) v = 0.2f;
    LayerSeries c = mean_attended_distance({with_cls}, 2, 2, true);
    CHECK(std::fabs(c.points[0].value - 0.2 * (2.0 + std::sqrt(2.0))) <= 1e-6);
}

TEST_CASE("mean attended distance: bounded by grid diameter") {
    Rng rng(17);
    Tensor maps({2, 2, 9, 9});
    for (int s = 0; s < 2; ++s)
        for (int h = 0; h < 2; ++h)
            for (int q = 0; q < 9; ++q) {
                double total = 0.0;
                std::vector<double> row(9);
                for (auto& v : row) {
                    v = rng.uniform() + 1e-3;
                    total += v;
                }
                for (int j = 0; j < 9; ++j)
                    maps[(((std::size_t)s * 2 + h) * 9 + q) * 9 + j] = (float)(row[j] / total);
            }
    LayerSeries series = mean_attended_distance({maps}, 3, 3, false);
    const double diameter = std::sqrt(8.0);
    CHECK(series.points[0].value > 0.0);
    CHECK(series.points[0].value <= diameter);
}

TEST_CASE("series aggregation: point-wise mean and stderr over repeats") {
    LayerSeries a, b, c;
    for (LayerSeries* s : {&a, &b, &c}) {
        s->kind = SeriesKind::l2_drift;
        s->points = {{"g1", 0.0, 0.0}, {"g2", 0.0, 0.0}};
    }
    a.points[0].value = 1.0;
    b.points[0].value = 2.0;
    c.points[0].value = 3.0;
    a.points[1].value = 5.0;
    b.points[1].value = 5.0;
    c.points[1].value = 5.0;
    std::vector<LayerSeries> runs = {a, b, c};
    LayerSeries agg = aggregate_series(runs);
    CHECK(agg.points[0].value == doctest::Approx(2.0));
    // sample sd 1.0 over 3 runs -> stderr 1/sqrt(3)
    CHECK(agg.points[0].stderr_ == doctest::Approx(1.0 / std::sqrt(3.0)));
    CHECK(agg.points[1].value == doctest::Approx(5.0));
    CHECK(agg.points[1].stderr_ == doctest::Approx(0.0));

    LayerSeries odd = a;
    odd.points.pop_back();
    std::vector<LayerSeries> bad = {a, odd};
    CHECK_THROWS_AS((void)aggregate_series(bad), ShapeError);
}

TEST_CASE("mean attended distance error paths") {
    Tensor bad({1, 1, 4, 4});
    for (auto& v : bad.data) v = 0.3f;  // rows sum to 1.2
    CHECK_THROWS_AS((void)mean_attended_distance({bad}, 2, 2, false), NumericError);

    Tensor mismatch({1, 1, 6, 6});
    for (int q = 0; q < 6; ++q)
        for (int j = 0; j < 6; ++j) mismatch[(std::size_t)q * 6 + j] = j == q ? 1.0f : 0.0f;
    CHECK_THROWS_AS((void)mean_attended_distance({mismatch}, 2, 2, false), ShapeError);
}
