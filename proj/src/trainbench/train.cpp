#include "tlab/trainbench/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "tlab/error.hpp"
#include "tlab/trainbench/optim.hpp"
#include "tlab/trainbench/schedule.hpp"

namespace tlab::trainbench {

using netlab::ArchSpec;
using netlab::ProbeableNetwork;
using netlab::WeightSnapshot;
using nlohmann::json;

std::string to_string(OptimizerKind k) {
    return k == OptimizerKind::adaptive_cnn ? "adaptive_cnn" : "adaptive_decoupled_wd";
}

OptimizerKind optimizer_from_string(const std::string& s) {
    if (s == "adaptive_cnn") return OptimizerKind::adaptive_cnn;
    if (s == "adaptive_decoupled_wd") return OptimizerKind::adaptive_decoupled_wd;
    throw ConfigError("unknown optimizer kind: " + s);
}

void TrainConfig::validate() const {
    if (!(min_lr > 0.0) || min_lr > base_lr || min_lr > ri_lr)
        throw ConfigError("train config: requires 0 < min_lr <= base_lr");
    if (plateau_factor <= 0.0 || plateau_factor >= 1.0)
        throw ConfigError("train config: plateau_factor must be in (0,1)");
    if (warmup_iters < 0) throw ConfigError("train config: warmup_iters must be >= 0");
    if (batch_size < 1 || max_iters < 0 || val_every < 1 || plateau_patience < 1)
        throw ConfigError("train config: bad loop settings");
}

int TrainConfig::patience_evals() const {
    return std::max(1, plateau_patience / val_every);
}

namespace {

constexpr float kNormMean = 0.5f, kNormStd = 0.5f;

void normalize_inplace(Tensor& batch) {
    for (auto& v : batch.data) v = (v - kNormMean) / kNormStd;
}

void augment_sample(float* img, int ch, int h, int w, const Augmentation& aug, Rng& rng) {
    // random crop with zero padding
    if (aug.crop_pad > 0) {
        const int dy = (int)rng.below(2 * aug.crop_pad + 1) - aug.crop_pad;
        const int dx = (int)rng.below(2 * aug.crop_pad + 1) - aug.crop_pad;
        if (dy != 0 || dx != 0) {
            std::vector<float> src(img, img + (std::size_t)ch * h * w);
            for (int c = 0; c < ch; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) {
                        const int sy = y + dy, sx = x + dx;
                        img[((std::size_t)c * h + y) * w + x] =
                            (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                ? src[((std::size_t)c * h + sy) * w + sx]
                                : 0.0f;
                    }
        }
    }
    const bool do_h = aug.hflip && rng.uniform() < 0.5;
    const bool do_v = aug.vflip && rng.uniform() < 0.5;
    if (do_h)
        for (int c = 0; c < ch; ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w / 2; ++x)
                    std::swap(img[((std::size_t)c * h + y) * w + x],
                              img[((std::size_t)c * h + y) * w + (w - 1 - x)]);
    if (do_v)
        for (int c = 0; c < ch; ++c)
            for (int y = 0; y < h / 2; ++y)
                for (int x = 0; x < w; ++x)
                    std::swap(img[((std::size_t)c * h + y) * w + x],
                              img[((std::size_t)c * h + (h - 1 - y)) * w + x]);
    if (aug.color_jitter > 0.0f) {
        for (int c = 0; c < ch; ++c) {
            const float gain = 1.0f + aug.color_jitter * (float)(rng.uniform() * 2.0 - 1.0);
            float* plane = img + (std::size_t)c * h * w;
            for (int i = 0; i < h * w; ++i)
                plane[i] = std::clamp(plane[i] * gain, 0.0f, 1.0f);
        }
    }
}

// mean softmax cross-entropy and its gradient
double ce_loss_grad(const Tensor& logits, const std::vector<int>& labels, Tensor& dlogits) {
    const int b = logits.dim(0), c = logits.dim(1);
    dlogits = Tensor({b, c});
    double loss = 0.0;
    for (int s = 0; s < b; ++s) {
        const float* row = logits.ptr() + (std::size_t)s * c;
        float mx = row[0];
        for (int i = 1; i < c; ++i) mx = std::max(mx, row[i]);
        double z = 0.0;
        for (int i = 0; i < c; ++i) z += std::exp((double)row[i] - mx);
        loss += std::log(z) - ((double)row[labels[s]] - mx);
        for (int i = 0; i < c; ++i) {
            const double p = std::exp((double)row[i] - mx) / z;
            dlogits[(std::size_t)s * c + i] =
                (float)((p - (i == labels[s] ? 1.0 : 0.0)) / b);
        }
    }
    return loss / b;
}

} // namespace

Tensor assemble_batch(const Dataset& data, const std::vector<int>& indices, bool augment,
                      const Augmentation& aug, Rng* rng) {
    Tensor batch = data.gather(indices);
    const int ch = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    if (augment) {
        if (!rng) throw ConfigError("assemble_batch: augmentation needs an rng");
        for (int s = 0; s < batch.dim(0); ++s)
            augment_sample(batch.ptr() + (std::size_t)s * ch * h * w, ch, h, w, aug, *rng);
    }
    normalize_inplace(batch);
    return batch;
}

metrics::PredictionSet collect_predictions(ProbeableNetwork& net, const Dataset& data,
                                           const std::vector<int>& split_indices,
                                           int batch_size) {
    if (split_indices.empty()) throw DataError("evaluate: empty split");
    metrics::PredictionSet ps;
    ps.class_count = data.class_count;
    for (std::size_t start = 0; start < split_indices.size(); start += batch_size) {
        const std::size_t end = std::min(split_indices.size(), start + batch_size);
        std::vector<int> chunk(split_indices.begin() + start, split_indices.begin() + end);
        Tensor batch = assemble_batch(data, chunk, false, {}, nullptr);
        Tensor logits = net.forward(batch, {}, nullptr);
        const int c = logits.dim(1);
        for (int s = 0; s < (int)chunk.size(); ++s) {
            const float* row = logits.ptr() + (std::size_t)s * c;
            // softmax scores for ranking metrics
            float mx = row[0];
            for (int i = 1; i < c; ++i) mx = std::max(mx, row[i]);
            double z = 0.0;
            std::vector<double> sm(c);
            for (int i = 0; i < c; ++i) {
                sm[i] = std::exp((double)row[i] - mx);
                z += sm[i];
            }
            int arg = 0;
            for (int i = 0; i < c; ++i) {
                sm[i] /= z;
                if (row[i] > row[arg]) arg = i;
            }
            ps.labels.push_back(data.labels[chunk[s]]);
            ps.hard_preds.push_back(arg);
            ps.scores.push_back(std::move(sm));
        }
    }
    return ps;
}

double evaluate(ProbeableNetwork& net, const Dataset& data,
                const std::vector<int>& split_indices, const std::string& metric_id,
                int batch_size) {
    if (!metrics::metric_known(metric_id)) throw ConfigError("unknown metric id: " + metric_id);
    return metrics::metric_by_id(metric_id, collect_predictions(net, data, split_indices,
                                                                batch_size));
}

RunRecord fine_tune(ProbeableNetwork& net, const Dataset& data, const TrainConfig& cfg,
                    const initkit::InitScheme& scheme) {
    cfg.validate();
    if (data.splits.train.empty() || data.splits.val.empty() || data.splits.test.empty())
        throw DataError("fine_tune: dataset needs non-empty train/val/test splits");
    if (!metrics::metric_known(data.metric_id))
        throw ConfigError("fine_tune: dataset metric unknown: " + data.metric_id);

    const auto t_start = std::chrono::steady_clock::now();

    RunRecord rec;
    rec.arch = net.spec();
    rec.scheme = scheme;
    rec.dataset_id = data.id;
    rec.metric_id = data.metric_id;
    rec.dataset_source_desc = data.source_desc;
    rec.dataset_split_seed = data.split_seed;
    rec.config = cfg;

    const bool is_ri = scheme.kind == initkit::InitKind::RI;
    const double lr_base = is_ri ? cfg.ri_lr : cfg.base_lr;
    const OptimizerKind okind = cfg.optimizer_kind.value_or(
        net.spec().family == netlab::Family::mini_cnn ? OptimizerKind::adaptive_cnn
                                                      : OptimizerKind::adaptive_decoupled_wd);
    Adam optim(0.9, 0.999, 1e-8, cfg.weight_decay,
               okind == OptimizerKind::adaptive_decoupled_wd);
    LrSchedule schedule(lr_base, cfg.warmup_iters, cfg.plateau_factor, cfg.min_lr);
    PlateauController plateau(cfg.patience_evals(), cfg.improve_threshold);

    rec.initial_ckpt = netlab::snapshot_weights(net, netlab::SnapshotTag::initial);

    // iteration-0 validation so a zero-iteration run is well defined
    double best_metric = evaluate(net, data, data.splits.val, data.metric_id);
    rec.validation_trace.push_back({0, best_metric, schedule.at(0)});
    rec.best_iteration = 0;
    rec.best_val_metric = best_metric;
    rec.best_ckpt = netlab::snapshot_weights(net, netlab::SnapshotTag::best);
    plateau.observe(best_metric);

    Rng data_rng = Rng::keyed(cfg.seed, "data_order");
    Rng aug_rng = Rng::keyed(cfg.seed, "augmentation");
    std::vector<int> order = data.splits.train;
    std::size_t cursor = order.size();  // forces a shuffle on first use

    bool stop = false;
    for (long it = 0; it < cfg.max_iters && !stop; ++it) {
        std::vector<int> batch_idx;
        batch_idx.reserve(cfg.batch_size);
        for (int i = 0; i < cfg.batch_size; ++i) {
            if (cursor >= order.size()) {
                for (std::size_t j = order.size(); j > 1; --j)
                    std::swap(order[j - 1], order[data_rng.below(j)]);
                cursor = 0;
            }
            batch_idx.push_back(order[cursor++]);
        }
        Tensor batch = assemble_batch(data, batch_idx, cfg.augment, cfg.aug, &aug_rng);
        std::vector<int> batch_labels = data.gather_labels(batch_idx);

        netlab::ForwardOptions opt;
        opt.train = true;
        net.zero_grads();
        Tensor logits = net.forward(batch, opt, nullptr);
        Tensor dlogits;
        const double loss = ce_loss_grad(logits, batch_labels, dlogits);
        if (!std::isfinite(loss))
            throw TrainError("fine_tune: loss diverged (non-finite)", it);
        net.backward(dlogits);
        optim.step(net.params(), schedule.at(it));

        const long done = it + 1;
        if (done % cfg.val_every == 0 || done == cfg.max_iters) {
            const double metric = evaluate(net, data, data.splits.val, data.metric_id);
            rec.validation_trace.push_back({done, metric, schedule.at(done)});
            if (metric > rec.best_val_metric) {  // strict: first occurrence keeps ties
                rec.best_val_metric = metric;
                rec.best_iteration = done;
                rec.best_ckpt = netlab::snapshot_weights(net, netlab::SnapshotTag::best);
            }
            if (done >= cfg.warmup_iters && plateau.observe(metric) && !schedule.decay())
                stop = true;  // the next decay would cross the floor
        }
    }

    netlab::restore_all(net, rec.best_ckpt);
    rec.final_test_score = evaluate(net, data, data.splits.test, data.metric_id);
    rec.wall_time_sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return rec;
}

WeightSnapshot pretrain_source(const ArchSpec& arch_spec, const Dataset& source,
                               const TrainConfig& cfg) {
    ArchSpec spec = arch_spec;
    spec.num_classes = source.class_count;
    auto net = netlab::build_model(spec);
    initkit::InitScheme ri;
    ri.kind = initkit::InitKind::RI;
    ri.seed = cfg.seed;
    RunRecord rec = fine_tune(*net, source, cfg, ri);

    WeightSnapshot snap = rec.best_ckpt;
    snap.tag = netlab::SnapshotTag::pretrained;
    std::erase_if(snap.params, [](const netlab::NamedTensor& nt) {
        return nt.name.rfind("head.", 0) == 0;
    });
    return snap;
}

long convergence_iters(const RunRecord& record) {
    if (record.validation_trace.empty()) throw DataError("convergence_iters: empty trace");
    long best_it = record.validation_trace.front().iteration;
    double best = record.validation_trace.front().metric;
    for (const auto& pt : record.validation_trace)
        if (pt.metric > best) {  // first occurrence of the maximum
            best = pt.metric;
            best_it = pt.iteration;
        }
    return best_it;
}

double convergence_speedup(const RunRecord& record, const RunRecord& baseline) {
    const long own = convergence_iters(record);
    if (own <= 0) throw DataError("convergence_speedup: record converged at iteration 0");
    return (double)convergence_iters(baseline) / (double)own;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

namespace {

json scheme_to_json(const initkit::InitScheme& s) {
    return json{{"kind", initkit::to_string(s.kind)},
                {"n", s.transfer_depth_n},
                {"source_checkpoint", s.source_checkpoint},
                {"seed", s.seed}};
}

initkit::InitScheme scheme_from_json(const json& j) {
    initkit::InitScheme s;
    s.kind = initkit::init_kind_from_string(j.at("kind").get<std::string>());
    s.transfer_depth_n = j.at("n").get<int>();
    s.source_checkpoint = j.at("source_checkpoint").get<std::string>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

json config_to_json(const TrainConfig& c) {
    json j{{"base_lr", c.base_lr},
           {"ri_lr", c.ri_lr},
           {"warmup_iters", c.warmup_iters},
           {"plateau_factor", c.plateau_factor},
           {"plateau_patience", c.plateau_patience},
           {"min_lr", c.min_lr},
           {"batch_size", c.batch_size},
           {"max_iters", c.max_iters},
           {"weight_decay", c.weight_decay},
           {"seed", c.seed},
           {"val_every", c.val_every},
           {"improve_threshold", c.improve_threshold},
           {"augment", c.augment},
           {"aug",
            {{"hflip", c.aug.hflip},
             {"vflip", c.aug.vflip},
             {"color_jitter", c.aug.color_jitter},
             {"crop_pad", c.aug.crop_pad}}}};
    if (c.optimizer_kind) j["optimizer_kind"] = to_string(*c.optimizer_kind);
    return j;
}

TrainConfig config_from_json(const json& j) {
    TrainConfig c;
    c.base_lr = j.at("base_lr").get<double>();
    c.ri_lr = j.at("ri_lr").get<double>();
    c.warmup_iters = j.at("warmup_iters").get<int>();
    c.plateau_factor = j.at("plateau_factor").get<double>();
    c.plateau_patience = j.at("plateau_patience").get<int>();
    c.min_lr = j.at("min_lr").get<double>();
    c.batch_size = j.at("batch_size").get<int>();
    c.max_iters = j.at("max_iters").get<long>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.val_every = j.at("val_every").get<int>();
    c.improve_threshold = j.at("improve_threshold").get<double>();
    c.augment = j.at("augment").get<bool>();
    const json& a = j.at("aug");
    c.aug.hflip = a.at("hflip").get<bool>();
    c.aug.vflip = a.at("vflip").get<bool>();
    c.aug.color_jitter = a.at("color_jitter").get<float>();
    c.aug.crop_pad = a.at("crop_pad").get<int>();
    if (j.contains("optimizer_kind"))
        c.optimizer_kind = optimizer_from_string(j.at("optimizer_kind").get<std::string>());
    return c;
}

} // namespace

void save_run_record(const RunRecord& rec, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    json manifest;
    manifest["run_id"] = rec.run_id;
    manifest["family"] = netlab::to_string(rec.arch.family);
    manifest["capacity"] = netlab::to_string(rec.arch.capacity);
    manifest["input"] = {rec.arch.input_h, rec.arch.input_w, rec.arch.input_ch};
    manifest["num_classes"] = rec.arch.num_classes;
    manifest["arch_seed"] = rec.arch.seed;
    manifest["trunc_blocks"] = rec.arch.trunc_blocks;
    manifest["dataset_id"] = rec.dataset_id;
    manifest["metric_id"] = rec.metric_id;
    manifest["dataset_source"] = rec.dataset_source_desc;
    manifest["dataset_split_seed"] = rec.dataset_split_seed;
    manifest["init"] = scheme_to_json(rec.scheme);
    manifest["train"] = config_to_json(rec.config);
    manifest["best_iteration"] = rec.best_iteration;
    manifest["best_val_metric"] = rec.best_val_metric;
    manifest["final_test_score"] = rec.final_test_score;
    manifest["execution"] = rec.execution;
    manifest["status"] = rec.status;
    {
        std::ofstream mf(dir + "/run.json");
        if (!mf) throw DataError("cannot write " + dir + "/run.json");
        mf << manifest.dump(2) << "\n";
    }
    {
        std::ofstream tf(dir + "/trace.csv");
        tf << "iteration,metric,lr\n";
        char buf[96];
        for (const auto& pt : rec.validation_trace) {
            std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g\n", pt.iteration, pt.metric, pt.lr);
            tf << buf;
        }
    }
    netlab::save_checkpoint(rec.initial_ckpt, dir + "/initial");
    netlab::save_checkpoint(rec.best_ckpt, dir + "/best");
    {
        std::ofstream wf(dir + "/timing.json");
        wf << json{{"wall_time_sec", rec.wall_time_sec}}.dump(2) << "\n";
    }
}

RunRecord load_run_record(const std::string& dir) {
    std::ifstream mf(dir + "/run.json");
    if (!mf) throw DataError("cannot read " + dir + "/run.json");
    json manifest = json::parse(mf);

    RunRecord rec;
    rec.run_id = manifest.at("run_id").get<std::string>();
    rec.arch.family = netlab::family_from_string(manifest.at("family").get<std::string>());
    rec.arch.capacity = netlab::capacity_from_string(manifest.at("capacity").get<std::string>());
    rec.arch.input_h = manifest.at("input").at(0).get<int>();
    rec.arch.input_w = manifest.at("input").at(1).get<int>();
    rec.arch.input_ch = manifest.at("input").at(2).get<int>();
    rec.arch.num_classes = manifest.at("num_classes").get<int>();
    rec.arch.seed = manifest.at("arch_seed").get<std::uint64_t>();
    rec.arch.trunc_blocks = manifest.at("trunc_blocks").get<int>();
    rec.dataset_id = manifest.at("dataset_id").get<std::string>();
    rec.metric_id = manifest.at("metric_id").get<std::string>();
    rec.dataset_source_desc = manifest.at("dataset_source").get<std::string>();
    rec.dataset_split_seed = manifest.at("dataset_split_seed").get<std::uint64_t>();
    rec.scheme = scheme_from_json(manifest.at("init"));
    rec.config = config_from_json(manifest.at("train"));
    rec.best_iteration = manifest.at("best_iteration").get<long>();
    rec.best_val_metric = manifest.at("best_val_metric").get<double>();
    rec.final_test_score = manifest.at("final_test_score").get<double>();
    rec.execution = manifest.at("execution").get<std::string>();
    rec.status = manifest.at("status").get<std::string>();

    std::ifstream tf(dir + "/trace.csv");
    if (!tf) throw DataError("cannot read " + dir + "/trace.csv");
    std::string line;
    std::getline(tf, line);  // header
    while (std::getline(tf, line)) {
        if (line.empty()) continue;
        TracePoint pt;
        if (std::sscanf(line.c_str(), "%ld,%lg,%lg", &pt.iteration, &pt.metric, &pt.lr) != 3)
            throw DataError("malformed trace line: " + line);
        rec.validation_trace.push_back(pt);
    }
    rec.initial_ckpt = netlab::load_checkpoint(dir + "/initial");
    rec.best_ckpt = netlab::load_checkpoint(dir + "/best");
    std::ifstream wf(dir + "/timing.json");
    if (wf) {
        json t = json::parse(wf);
        rec.wall_time_sec = t.value("wall_time_sec", 0.0);
    }
    return rec;
}

} // namespace tlab::trainbench
