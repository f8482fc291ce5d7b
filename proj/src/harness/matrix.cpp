#include "tlab/harness/matrix.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "tlab/error.hpp"
#include "tlab/netlab/models.hpp"
#include "tlab/probes/attdist.hpp"
#include "tlab/probes/cka.hpp"
#include "tlab/probes/knn.hpp"
#include "tlab/probes/resilience.hpp"

namespace tlab::harness {

namespace fs = std::filesystem;
using initkit::InitKind;
using initkit::InitScheme;
using netlab::ProbeableNetwork;
using netlab::WeightSnapshot;
using nlohmann::json;
using trainbench::RunRecord;

namespace {

std::string hex16(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", (unsigned long long)h);
    return buf;
}

std::string file_hash(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return "";
    std::string body((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return hex16(Rng::fnv1a64(body));
}

int groups_of_model(const ModelEntry& m) {
    if (m.family == netlab::Family::mini_cnn) return 6;
    const int depth =
        m.trunc_blocks > 0 ? m.trunc_blocks : netlab::vit_dims(m.capacity).depth;
    return depth + 2;  // patchifier + blocks + final norm
}

struct Cell {
    ModelEntry model;
    InitScheme scheme;  // seed filled per cell
    std::string dataset_id;
    std::uint64_t seed = 0;
    std::string run_id;
};

json canonical_cell_json(const ModelEntry& model, const InitScheme& scheme,
                         const std::string& source_hash, const DatasetManifest& manifest,
                         const trainbench::TrainConfig& train, std::uint64_t seed) {
    trainbench::TrainConfig cfg = train;
    cfg.seed = seed;
    json j;
    j["arch"] = model.key();
    j["init"] = {{"kind", initkit::to_string(scheme.kind)},
                 {"n", scheme.transfer_depth_n},
                 {"source", source_hash}};
    j["dataset"] = hex16(Rng::fnv1a64(manifest.to_json().dump()));
    j["train"] = {{"base_lr", cfg.base_lr},       {"ri_lr", cfg.ri_lr},
                  {"warmup", cfg.warmup_iters},   {"factor", cfg.plateau_factor},
                  {"patience", cfg.plateau_patience}, {"min_lr", cfg.min_lr},
                  {"batch", cfg.batch_size},      {"max_iters", cfg.max_iters},
                  {"wd", cfg.weight_decay},       {"val_every", cfg.val_every},
                  {"improve", cfg.improve_threshold}, {"augment", cfg.augment},
                  {"aug",
                   {{"hflip", cfg.aug.hflip},
                    {"vflip", cfg.aug.vflip},
                    {"jitter", cfg.aug.color_jitter},
                    {"pad", cfg.aug.crop_pad}}}};
    if (cfg.optimizer_kind) j["train"]["optimizer"] = to_string(*cfg.optimizer_kind);
    j["seed"] = seed;
    return j;
}

void write_probe_rows(const std::string& run_dir, const std::string& run_id,
                      const std::string& kind, const probes::LayerSeries& series) {
    const std::string path = run_dir + "/probes.csv";
    const bool fresh = !fs::exists(path);
    std::ofstream f(path, std::ios::app);
    if (!f) throw DataError("cannot write " + path);
    if (fresh) f << "run_id,probe_kind,position_index,tap_id,value,stderr\n";
    char buf[160];
    for (std::size_t i = 0; i < series.points.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%zu,%s,%.10g,%.10g\n", run_id.c_str(),
                      kind.c_str(), i, series.points[i].id.c_str(), series.points[i].value,
                      series.points[i].stderr_);
        f << buf;
    }
    if (kind == "reinit") {
        std::snprintf(buf, sizeof(buf), "%s,reinit_baseline,%zu,baseline,%.10g,0\n",
                      run_id.c_str(), series.points.size(), series.baseline);
        f << buf;
    }
}

Dataset dataset_from_record(const RunRecord& rec) {
    const json source = json::parse(rec.dataset_source_desc);
    json wrapped = source.contains("name") ? json{{"generator", source}} : source;
    return ingest_dataset(wrapped, rec.dataset_split_seed, rec.metric_id, rec.dataset_id);
}

void compute_probe(const std::string& run_dir, const RunRecord& rec, const Dataset& data,
                   const std::string& kind) {
    const auto& part = netlab::partition_for(rec.best_ckpt.arch_id);
    if (kind == "l2") {
        probes::LayerSeries series = probes::l2_drift(rec.initial_ckpt, rec.best_ckpt, part);
        write_probe_rows(run_dir, rec.run_id, "l2", series);
        return;
    }
    auto net = netlab::network_from_snapshot(rec.best_ckpt);
    if (kind == "reinit") {
        probes::LayerSeries series =
            probes::reinit_robustness(*net, rec.initial_ckpt, [&](ProbeableNetwork& n) {
                return trainbench::evaluate(n, data, data.splits.test, data.metric_id);
            });
        write_probe_rows(run_dir, rec.run_id, "reinit", series);
        return;
    }
    if (kind == "knn") {
        const auto mode = rec.arch.family == netlab::Family::mini_cnn
                              ? probes::EmbedMode::gap
                              : probes::EmbedMode::cls;
        Tensor train_imgs = data.gather(data.splits.train);
        Tensor test_imgs = data.gather(data.splits.test);
        probes::LayerSeries series = probes::layerwise_knn(
            *net, train_imgs, data.gather_labels(data.splits.train), test_imgs,
            data.gather_labels(data.splits.test), data.class_count, data.metric_id, mode,
            net->tap_ids(), 200, 128);
        write_probe_rows(run_dir, rec.run_id, "knn", series);
        return;
    }
    if (kind == "attdist") {
        if (rec.arch.family != netlab::Family::mini_vit) return;  // geometry is ViT-only
        auto& vit = dynamic_cast<netlab::MiniVit&>(*net);
        Tensor test_imgs = data.gather(data.splits.test);
        const int take = std::min(256, test_imgs.dim(0));
        const int ch = test_imgs.dim(1), h = test_imgs.dim(2), w = test_imgs.dim(3);
        std::vector<probes::LayerSeries> batches;
        std::vector<double> weights;
        for (int start = 0; start < take; start += 128) {
            const int n = std::min(128, take - start);
            Tensor batch({n, ch, h, w});
            std::copy(test_imgs.ptr() + (std::size_t)start * ch * h * w,
                      test_imgs.ptr() + (std::size_t)(start + n) * ch * h * w, batch.ptr());
            for (auto& v : batch.data) v = (v - 0.5f) / 0.5f;
            netlab::ForwardOptions opt;
            opt.capture_attention = true;
            netlab::CaptureResult cap;
            (void)vit.forward(batch, opt, &cap);
            batches.push_back(
                probes::mean_attended_distance(cap.attention, vit.grid(), vit.grid(), true));
            weights.push_back(n);
        }
        probes::LayerSeries combined = batches[0];
        double total = 0.0;
        for (double w2 : weights) total += w2;
        for (std::size_t p = 0; p < combined.points.size(); ++p) {
            double acc = 0.0;
            for (std::size_t b = 0; b < batches.size(); ++b)
                acc += batches[b].points[p].value * weights[b];
            combined.points[p].value = acc / total;
        }
        write_probe_rows(run_dir, rec.run_id, "attdist", combined);
        return;
    }
    if (kind == "cka") {
        auto before = netlab::network_from_snapshot(rec.initial_ckpt);
        Tensor test_imgs = data.gather(data.splits.test);
        for (auto& v : test_imgs.data) v = (v - 0.5f) / 0.5f;
        const auto taps = net->tap_ids();
        probes::CKAMatrix m = probes::cka_map(*before, *net, test_imgs, taps, taps, 128);
        std::ofstream f(run_dir + "/cka_init_vs_best.csv");
        if (!f) throw DataError("cannot write cka csv");
        f << "rows=initial,cols=best,n_samples=" << m.n_samples << ",batch=" << m.batch_size
          << "\n";
        f << "tap";
        for (const auto& c : m.cols) f << "," << c;
        f << "\n";
        char buf[64];
        for (std::size_t i = 0; i < m.rows.size(); ++i) {
            f << m.rows[i];
            for (std::size_t j = 0; j < m.cols.size(); ++j) {
                std::snprintf(buf, sizeof(buf), ",%.10g", m.at(i, j));
                f << buf;
            }
            f << "\n";
        }
        return;
    }
    throw ConfigError("unknown probe kind: " + kind);
}

} // namespace

std::string cell_run_id(const ExperimentConfig& cfg, const ModelEntry& model,
                        const InitScheme& scheme, const DatasetManifest& manifest,
                        std::uint64_t seed) {
    const std::string source_hash =
        scheme.source_checkpoint.empty() ? "" : file_hash(scheme.source_checkpoint + ".json");
    const json j = canonical_cell_json(model, scheme, source_hash, manifest, cfg.train, seed);
    return hex16(Rng::fnv1a64(j.dump()));
}

void run_probe(const std::string& run_dir, const std::string& probe_kind) {
    RunRecord rec = trainbench::load_run_record(run_dir);
    Dataset data = dataset_from_record(rec);
    compute_probe(run_dir, rec, data, probe_kind);
}

MatrixSummary run_matrix(const ExperimentConfig& cfg, int workers) {
    if (workers < 1) throw ConfigError("run_matrix: workers must be >= 1");
    fs::create_directories(cfg.output_dir + "/runs");
    fs::create_directories(cfg.output_dir + "/datasets");

    // datasets and source checkpoints are shared, immutable inputs
    std::map<std::string, Dataset> datasets;
    std::map<std::string, DatasetManifest> manifests;
    for (const auto& d : cfg.datasets) {
        Dataset ds = ingest_dataset(d.source, d.split_seed, d.metric_id, d.id);
        DatasetManifest m = manifest_of(ds, d.source.contains("generator") ? "synthetic"
                                                                           : "directory");
        std::ofstream mf(cfg.output_dir + "/datasets/" + d.id + ".manifest.json");
        mf << m.to_json().dump(2) << "\n";
        manifests.emplace(d.id, std::move(m));
        datasets.emplace(d.id, std::move(ds));
    }
    std::map<std::string, WeightSnapshot> sources;
    for (const auto& [model_key, path] : cfg.source_checkpoints)
        sources.emplace(model_key, netlab::load_checkpoint(path));

    // expand the cell cross product
    std::vector<Cell> cells;
    for (const auto& model : cfg.models) {
        const int groups = groups_of_model(model);
        for (const auto& scheme_entry : cfg.schemes) {
            std::vector<InitScheme> instances;
            if (scheme_entry.kind == InitKind::WT_ST) {
                std::vector<int> depths = scheme_entry.depths;
                if (depths.empty())
                    for (int n = 0; n <= groups; ++n) depths.push_back(n);
                for (int n : depths) {
                    if (n < 0 || n > groups)
                        throw ConfigError("WT_ST depth " + std::to_string(n) +
                                          " outside partition range of " + model.key());
                    InitScheme s;
                    s.kind = InitKind::WT_ST;
                    s.transfer_depth_n = n;
                    instances.push_back(s);
                }
            } else {
                InitScheme s;
                s.kind = scheme_entry.kind;
                instances.push_back(s);
            }
            for (auto& inst : instances) {
                if (inst.kind != InitKind::RI) {
                    // truncated variants draw from their full-depth source
                    std::string key = model.key();
                    if (!cfg.source_checkpoints.count(key) && model.trunc_blocks > 0) {
                        ModelEntry full = model;
                        full.trunc_blocks = 0;
                        key = full.key();
                    }
                    auto it = cfg.source_checkpoints.find(key);
                    if (it == cfg.source_checkpoints.end())
                        throw ConfigError("no source checkpoint configured for " + model.key());
                    inst.source_checkpoint = it->second;
                }
                for (const auto& d : cfg.datasets)
                    for (std::uint64_t seed : cfg.seeds) {
                        Cell c;
                        c.model = model;
                        c.scheme = inst;
                        c.scheme.seed = seed;
                        c.dataset_id = d.id;
                        c.seed = seed;
                        c.run_id = cell_run_id(cfg, model, c.scheme, manifests.at(d.id), seed);
                        cells.push_back(std::move(c));
                    }
            }
        }
    }

    MatrixSummary summary;
    summary.cells.resize(cells.size());
    std::atomic<std::size_t> next{0};
    std::atomic<int> executed{0}, skipped{0}, failed{0};

    auto worker = [&]() {
        for (;;) {
            const std::size_t idx = next.fetch_add(1);
            if (idx >= cells.size()) return;
            const Cell& cell = cells[idx];
            CellStatus& st = summary.cells[idx];
            st.run_id = cell.run_id;
            st.model_key = cell.model.key();
            st.init_label = cell.scheme.label();
            st.dataset_id = cell.dataset_id;
            st.seed = cell.seed;
            const std::string run_dir = cfg.output_dir + "/runs/" + cell.run_id;
            try {
                if (fs::exists(run_dir + "/run.json")) {
                    st.status = "skipped";
                    ++skipped;
                    continue;
                }
                const Dataset& data = datasets.at(cell.dataset_id);
                netlab::ArchSpec spec;
                spec.family = cell.model.family;
                spec.capacity = cell.model.capacity;
                spec.trunc_blocks = cell.model.trunc_blocks;
                spec.input_h = data.images.dim(2);
                spec.input_w = data.images.dim(3);
                spec.input_ch = data.images.dim(1);
                spec.num_classes = data.class_count;
                spec.seed = cell.seed;
                auto net = netlab::build_model(spec);
                const WeightSnapshot* source = nullptr;
                if (cell.scheme.kind != InitKind::RI)
                    source = &sources.at(
                        cfg.source_checkpoints.count(cell.model.key())
                            ? cell.model.key()
                            : [&] {
                                  ModelEntry full = cell.model;
                                  full.trunc_blocks = 0;
                                  return full.key();
                              }());
                initkit::apply_scheme(*net, cell.scheme, source);

                trainbench::TrainConfig tc = cfg.train;
                tc.seed = cell.seed;
                RunRecord rec = trainbench::fine_tune(*net, data, tc, cell.scheme);
                rec.run_id = cell.run_id;
                rec.execution = workers > 1 ? "parallel" : "deterministic";
                trainbench::save_run_record(rec, run_dir);
                for (const auto& probe : cfg.probes) compute_probe(run_dir, rec, data, probe);
                st.status = "complete";
                ++executed;
            } catch (const std::exception& e) {
                st.status = "failed";
                st.error = e.what();
                ++failed;
                std::error_code ec;
                fs::create_directories(run_dir, ec);
                std::ofstream ff(run_dir + "/failed.json");
                ff << json{{"run_id", cell.run_id}, {"error", e.what()}}.dump(2) << "\n";
            }
        }
    };

    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < workers; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    summary.executed = executed;
    summary.skipped = skipped;
    summary.failed = failed;

    json matrix = json::array();
    for (const auto& st : summary.cells)
        matrix.push_back(json{{"run_id", st.run_id},
                              {"model", st.model_key},
                              {"init", st.init_label},
                              {"dataset", st.dataset_id},
                              {"seed", st.seed},
                              {"status", st.status},
                              {"error", st.error}});
    std::ofstream mf(cfg.output_dir + "/matrix.json");
    mf << matrix.dump(2) << "\n";
    return summary;
}

} // namespace tlab::harness
