#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tlab/error.hpp"
#include "tlab/harness/config.hpp"
#include "tlab/harness/dataset.hpp"
#include "tlab/harness/distance.hpp"
#include "tlab/harness/matrix.hpp"
#include "tlab/harness/report.hpp"
#include "tlab/netlab/snapshot.hpp"
#include "tlab/trainbench/train.hpp"

using nlohmann::json;
using namespace tlab;

namespace {

json load_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read " + path);
    return json::parse(f);
}

harness::DatasetEntry dataset_entry_from_file(const std::string& path) {
    const json j = load_json(path);
    harness::DatasetEntry e;
    e.id = j.at("id").get<std::string>();
    e.metric_id = j.at("metric").get<std::string>();
    e.split_seed = j.value("split_seed", (std::uint64_t)0);
    if (j.contains("generator"))
        e.source = json{{"generator", j.at("generator")}};
    else if (j.contains("path"))
        e.source = json{{"path", j.at("path")}};
    else
        throw ConfigError("dataset file needs a generator or a path");
    return e;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"transfer-learning diagnostics bench"};
    app.require_subcommand(1);

    // ---- pretrain ----
    std::string pre_arch = "mini_cnn", pre_capacity = "tiny", pre_dataset, pre_out;
    std::uint64_t pre_seed = 0;
    std::string pre_train_json;
    auto* pre = app.add_subcommand("pretrain", "train a source checkpoint from scratch");
    pre->add_option("--arch", pre_arch, "mini_cnn | mini_vit")->required();
    pre->add_option("--capacity", pre_capacity, "tiny | small | base")->required();
    pre->add_option("--dataset", pre_dataset, "dataset spec JSON file")->required();
    pre->add_option("--out", pre_out, "checkpoint base path (writes .json/.bin)")->required();
    pre->add_option("--seed", pre_seed, "run seed");
    pre->add_option("--train", pre_train_json, "JSON file with train-config overrides");

    // ---- run ----
    std::string run_config;
    int run_workers = 1;
    bool run_deterministic = false;
    auto* run = app.add_subcommand("run", "execute the experiment matrix from a config");
    run->add_option("--config", run_config, "experiment config JSON")->required();
    run->add_option("--workers", run_workers, "parallel cell workers");
    run->add_flag("--deterministic", run_deterministic, "force single-worker execution");

    // ---- probe ----
    std::string probe_dir, probe_kind;
    auto* probe = app.add_subcommand("probe", "compute a probe for a stored run");
    probe->add_option("--run-dir", probe_dir, "run directory")->required();
    probe->add_option("--probe", probe_kind, "cka | knn | reinit | l2 | attdist")->required();

    // ---- distance ----
    std::string dist_a, dist_b, dist_embedder;
    auto* dist = app.add_subcommand("distance", "FID between two datasets under an embedder");
    dist->add_option("--dataset-a", dist_a, "dataset spec JSON file")->required();
    dist->add_option("--dataset-b", dist_b, "dataset spec JSON file")->required();
    dist->add_option("--embedder", dist_embedder, "embedder checkpoint base path")->required();

    // ---- report ----
    std::string rep_results, rep_out;
    bool rep_per_panel = false;
    auto* rep = app.add_subcommand("report", "tables and plots from a results directory");
    rep->add_option("--results", rep_results, "results directory")->required();
    rep->add_option("--out", rep_out, "output directory")->required();
    rep->add_flag("--per-panel", rep_per_panel, "normalize reuse shares per model panel");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*pre) {
            harness::DatasetEntry entry = dataset_entry_from_file(pre_dataset);
            Dataset data =
                harness::ingest_dataset(entry.source, entry.split_seed, entry.metric_id, entry.id);
            netlab::ArchSpec spec;
            spec.family = netlab::family_from_string(pre_arch);
            spec.capacity = netlab::capacity_from_string(pre_capacity);
            spec.input_h = data.images.dim(2);
            spec.input_w = data.images.dim(3);
            spec.input_ch = data.images.dim(1);
            spec.num_classes = data.class_count;
            spec.seed = pre_seed;
            trainbench::TrainConfig cfg;
            if (!pre_train_json.empty()) {
                json wrapper = json{{"version", 1},
                                    {"output_dir", "."},
                                    {"datasets", json::array({json{{"id", "x"},
                                                                   {"metric", "recall_macro"},
                                                                   {"generator",
                                                                    {{"name", "shapes10"},
                                                                     {"size", 100}}}}})},
                                    {"models", json::array({json{{"family", "mini_cnn"},
                                                                 {"capacity", "tiny"}}})},
                                    {"init_schemes", json::array({json{{"kind", "RI"}}})},
                                    {"train", load_json(pre_train_json)}};
                cfg = harness::ExperimentConfig::parse(wrapper).train;
            }
            cfg.seed = pre_seed;
            netlab::WeightSnapshot snap = trainbench::pretrain_source(spec, data, cfg);
            netlab::save_checkpoint(snap, pre_out);
            std::printf("pretrained %s -> %s.json/.bin\n", snap.arch_id.c_str(),
                        pre_out.c_str());
        } else if (*run) {
            harness::ExperimentConfig cfg = harness::ExperimentConfig::load(run_config);
            const int workers = run_deterministic ? 1 : std::max(1, run_workers);
            harness::MatrixSummary s = harness::run_matrix(cfg, workers);
            std::printf("matrix: %d executed, %d skipped, %d failed (%zu cells)\n", s.executed,
                        s.skipped, s.failed, s.cells.size());
            for (const auto& c : s.cells)
                if (c.status == "failed")
                    std::fprintf(stderr, "failed %s [%s %s %s seed %llu]: %s\n", c.run_id.c_str(),
                                 c.model_key.c_str(), c.init_label.c_str(), c.dataset_id.c_str(),
                                 (unsigned long long)c.seed, c.error.c_str());
            return s.all_ok() ? 0 : 1;
        } else if (*probe) {
            harness::run_probe(probe_dir, probe_kind);
            std::printf("probe %s written into %s\n", probe_kind.c_str(), probe_dir.c_str());
        } else if (*dist) {
            harness::DatasetEntry ea = dataset_entry_from_file(dist_a);
            harness::DatasetEntry eb = dataset_entry_from_file(dist_b);
            Dataset da = harness::ingest_dataset(ea.source, ea.split_seed, ea.metric_id, ea.id);
            Dataset db = harness::ingest_dataset(eb.source, eb.split_seed, eb.metric_id, eb.id);
            auto embedder = harness::load_embedder(dist_embedder);
            const double d = harness::dataset_distance(da, db, *embedder);
            std::printf("fid(%s, %s) = %.6f  [embedder %s]\n", da.id.c_str(), db.id.c_str(), d,
                        embedder->arch_id().c_str());
        } else if (*rep) {
            harness::ReportSpec spec;
            spec.per_panel_normalization = rep_per_panel;
            harness::report(rep_results, rep_out, spec);
            std::printf("report written to %s\n", rep_out.c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
