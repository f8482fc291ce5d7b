#include "tlab/harness/config.hpp"

#include <fstream>
#include <set>

#include "tlab/error.hpp"

namespace tlab::harness {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
    for (const auto& [key, _] : j.items())
        if (!allowed.count(key))
            throw ConfigError("unknown key '" + key + "' in " + where);
}

trainbench::TrainConfig parse_train(const json& j) {
    reject_unknown(j, {"base_lr", "ri_lr", "warmup_iters", "plateau_factor", "plateau_patience",
                       "min_lr", "batch_size", "max_iters", "optimizer_kind", "weight_decay",
                       "val_every", "improve_threshold", "augment", "aug"},
                   "train");
    trainbench::TrainConfig c;
    c.base_lr = j.value("base_lr", c.base_lr);
    c.ri_lr = j.value("ri_lr", c.ri_lr);
    c.warmup_iters = j.value("warmup_iters", c.warmup_iters);
    c.plateau_factor = j.value("plateau_factor", c.plateau_factor);
    c.plateau_patience = j.value("plateau_patience", c.plateau_patience);
    c.min_lr = j.value("min_lr", c.min_lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.val_every = j.value("val_every", c.val_every);
    c.improve_threshold = j.value("improve_threshold", c.improve_threshold);
    c.augment = j.value("augment", c.augment);
    if (j.contains("optimizer_kind"))
        c.optimizer_kind =
            trainbench::optimizer_from_string(j.at("optimizer_kind").get<std::string>());
    if (j.contains("aug")) {
        const json& a = j.at("aug");
        reject_unknown(a, {"hflip", "vflip", "color_jitter", "crop_pad"}, "train.aug");
        c.aug.hflip = a.value("hflip", c.aug.hflip);
        c.aug.vflip = a.value("vflip", c.aug.vflip);
        c.aug.color_jitter = a.value("color_jitter", c.aug.color_jitter);
        c.aug.crop_pad = a.value("crop_pad", c.aug.crop_pad);
    }
    c.validate();
    return c;
}

} // namespace

std::string ModelEntry::key() const {
    std::string k = netlab::to_string(family) + "_" + netlab::to_string(capacity);
    if (trunc_blocks > 0) k += "_t" + std::to_string(trunc_blocks);
    return k;
}

ExperimentConfig ExperimentConfig::parse(const json& j) {
    reject_unknown(j, {"version", "output_dir", "datasets", "models", "init_schemes", "seeds",
                       "train", "probes", "source_checkpoints", "input_hw"},
                   "config");
    ExperimentConfig cfg;
    if (!j.contains("version")) throw ConfigError("config missing version");
    cfg.version = j.at("version").get<int>();
    if (cfg.version != 1) throw ConfigError("unrecognized config version");
    cfg.output_dir = j.at("output_dir").get<std::string>();
    cfg.input_hw = j.value("input_hw", 32);

    if (!j.contains("datasets") || j.at("datasets").empty())
        throw ConfigError("config needs at least one dataset");
    for (const auto& d : j.at("datasets")) {
        reject_unknown(d, {"id", "generator", "path", "metric", "split_seed"}, "dataset");
        DatasetEntry e;
        e.id = d.at("id").get<std::string>();
        e.metric_id = d.at("metric").get<std::string>();
        if (!metrics::metric_known(e.metric_id))
            throw ConfigError("dataset " + e.id + ": unregistered metric " + e.metric_id);
        e.split_seed = d.value("split_seed", (std::uint64_t)0);
        if (d.contains("generator"))
            e.source = json{{"generator", d.at("generator")}};
        else if (d.contains("path"))
            e.source = json{{"path", d.at("path")}};
        else
            throw ConfigError("dataset " + e.id + " needs a generator or a path");
        cfg.datasets.push_back(std::move(e));
    }

    if (!j.contains("models") || j.at("models").empty())
        throw ConfigError("config needs at least one model");
    for (const auto& m : j.at("models")) {
        reject_unknown(m, {"family", "capacity", "trunc_blocks"}, "model");
        ModelEntry e{netlab::family_from_string(m.at("family").get<std::string>()),
                     netlab::capacity_from_string(m.at("capacity").get<std::string>()),
                     m.value("trunc_blocks", 0)};
        cfg.models.push_back(e);
    }

    if (!j.contains("init_schemes") || j.at("init_schemes").empty())
        throw ConfigError("config needs at least one init scheme");
    for (const auto& s : j.at("init_schemes")) {
        reject_unknown(s, {"kind", "n"}, "init_scheme");
        SchemeEntry e;
        e.kind = initkit::init_kind_from_string(s.at("kind").get<std::string>());
        if (s.contains("n")) {
            if (e.kind != initkit::InitKind::WT_ST)
                throw ConfigError("depth list n only applies to WT_ST schemes");
            if (s.at("n").is_string()) {
                if (s.at("n").get<std::string>() != "all")
                    throw ConfigError("n must be a list of depths or \"all\"");
            } else {
                e.depths = s.at("n").get<std::vector<int>>();
                if (e.depths.empty()) throw ConfigError("WT_ST depth list is empty");
            }
        }
        cfg.schemes.push_back(std::move(e));
    }

    cfg.seeds = j.value("seeds", std::vector<std::uint64_t>{0, 1, 2, 3, 4});
    if (cfg.seeds.empty()) throw ConfigError("config needs at least one seed");
    if (j.contains("train")) cfg.train = parse_train(j.at("train"));
    if (j.contains("probes")) {
        for (const auto& p : j.at("probes")) {
            const std::string name = p.get<std::string>();
            if (name != "cka" && name != "knn" && name != "reinit" && name != "l2" &&
                name != "attdist")
                throw ConfigError("unknown probe: " + name);
            cfg.probes.push_back(name);
        }
    }
    if (j.contains("source_checkpoints"))
        cfg.source_checkpoints =
            j.at("source_checkpoints").get<std::map<std::string, std::string>>();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot read config " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
    }
    return parse(j);
}

} // namespace tlab::harness
