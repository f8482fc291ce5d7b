#include "tlab/harness/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include <json.hpp>

#include "tlab/error.hpp"
#include "tlab/harness/svg.hpp"
#include "tlab/metrics/metrics.hpp"

namespace tlab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunRow {
    std::string run_id, model_key, family, capacity, init_kind, init_label, dataset;
    int n = -1;  // transfer depth for WT_ST rows
    std::uint64_t seed = 0;
    std::string metric_id;
    double score = 0.0;
    long best_iter = 0;
    double wall_time = 0.0;
};

struct ProbeRow {
    std::string probe_kind, tap_id;
    int position = 0;
    double value = 0.0;
};

std::string fmt(double v, const char* spec = "%.10g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / (double)v.size();
}

double pop_std(const std::vector<double>& v) {
    const double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / (double)v.size());
}

std::vector<RunRow> scan_runs(const std::string& results_dir) {
    std::vector<RunRow> rows;
    const fs::path runs = fs::path(results_dir) / "runs";
    if (!fs::is_directory(runs)) return rows;
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(runs))
        if (e.is_directory()) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        const fs::path mf = dir / "run.json";
        if (!fs::exists(mf)) continue;
        std::ifstream f(mf);
        json j = json::parse(f);
        if (j.value("status", "") != "complete") continue;
        RunRow r;
        r.run_id = j.at("run_id").get<std::string>();
        r.family = j.at("family").get<std::string>();
        r.capacity = j.at("capacity").get<std::string>();
        r.model_key = r.family + "_" + r.capacity;
        const int trunc = j.value("trunc_blocks", 0);
        if (trunc > 0) r.model_key += "_t" + std::to_string(trunc);
        r.init_kind = j.at("init").at("kind").get<std::string>();
        r.n = j.at("init").at("n").get<int>();
        r.init_label = r.init_kind == "WT_ST" ? "WT-ST-" + std::to_string(r.n) : r.init_kind;
        r.dataset = j.at("dataset_id").get<std::string>();
        r.seed = j.at("init").at("seed").get<std::uint64_t>();
        r.metric_id = j.at("metric_id").get<std::string>();
        r.score = j.at("final_test_score").get<double>();
        r.best_iter = j.at("best_iteration").get<long>();
        std::ifstream tf(dir / "timing.json");
        if (tf) r.wall_time = json::parse(tf).value("wall_time_sec", 0.0);
        rows.push_back(std::move(r));
    }
    return rows;
}

std::map<std::string, std::vector<ProbeRow>> scan_probes(const std::string& results_dir) {
    std::map<std::string, std::vector<ProbeRow>> out;  // run_id -> rows
    const fs::path runs = fs::path(results_dir) / "runs";
    if (!fs::is_directory(runs)) return out;
    for (const auto& e : fs::directory_iterator(runs)) {
        const fs::path pf = e.path() / "probes.csv";
        if (!fs::exists(pf)) continue;
        std::ifstream f(pf);
        std::string line;
        std::getline(f, line);  // header
        while (std::getline(f, line)) {
            if (line.empty()) continue;
            ProbeRow r;
            char run_id[64], kind[48], tap[64];
            double stderr_v;
            if (std::sscanf(line.c_str(), "%63[^,],%47[^,],%d,%63[^,],%lg,%lg", run_id, kind,
                            &r.position, tap, &r.value, &stderr_v) != 6)
                continue;
            r.probe_kind = kind;
            r.tap_id = tap;
            out[run_id].push_back(std::move(r));
        }
    }
    return out;
}

} // namespace

void report(const std::string& results_dir, const std::string& out_dir, const ReportSpec& spec) {
    const std::vector<RunRow> rows = scan_runs(results_dir);
    if (rows.empty()) throw DataError("report: no completed runs in " + results_dir);
    fs::create_directories(out_dir);

    // ---- full run table (fixed column contract) ----
    {
        std::vector<RunRow> sorted = rows;
        std::sort(sorted.begin(), sorted.end(), [](const RunRow& a, const RunRow& b) {
            return std::tie(a.model_key, a.dataset, a.init_label, a.seed) <
                   std::tie(b.model_key, b.dataset, b.init_label, b.seed);
        });
        std::ofstream f(out_dir + "/runs.csv");
        f << "run_id,family,capacity,init_kind,n,dataset,seed,metric,score,best_iter,"
             "wall_time\n";
        for (const auto& r : sorted)
            f << r.run_id << "," << r.family << "," << r.capacity << "," << r.init_kind << ","
              << r.n << "," << r.dataset << "," << r.seed << "," << r.metric_id << ","
              << fmt(r.score) << "," << r.best_iter << "," << fmt(r.wall_time, "%.3f") << "\n";
    }

    // ---- per-cell summary, mean +/- population std ----
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> cells;
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<long>> cell_iters;
    for (const auto& r : rows) {
        cells[{r.model_key, r.dataset, r.init_label}].push_back(r.score);
        cell_iters[{r.model_key, r.dataset, r.init_label}].push_back(r.best_iter);
    }
    {
        std::ofstream f(out_dir + "/summary.csv");
        f << "model,dataset,init,runs,mean,std_population,display\n";
        for (const auto& [key, scores] : cells) {
            const auto& [model, dataset, init] = key;
            const double m = mean_of(scores), sd = pop_std(scores);
            char disp[64];
            std::snprintf(disp, sizeof(disp), "%.3f \xc2\xb1 %.3f", m, sd);
            f << model << "," << dataset << "," << init << "," << scores.size() << "," << fmt(m)
              << "," << fmt(sd) << "," << disp << "\n";
        }
    }

    // ---- transfer gains and feature-reuse shares ----
    struct GainRow {
        std::string model, dataset;
        metrics::GainSummary g;
    };
    std::vector<GainRow> gains;
    std::set<std::string> models_seen, datasets_seen;
    for (const auto& [key, scores] : cells) {
        const auto& [model, dataset, init] = key;
        if (init != "WT") continue;
        auto st = cells.find({model, dataset, std::string("ST")});
        auto ri = cells.find({model, dataset, std::string("RI")});
        if (st == cells.end()) st = cells.find({model, dataset, std::string("WT-ST-0")});
        if (st == cells.end() || ri == cells.end()) continue;
        GainRow gr{model, dataset,
                   metrics::gain_summary(scores, st->second, ri->second)};
        gains.push_back(gr);
        models_seen.insert(model);
        datasets_seen.insert(dataset);
    }
    if (!gains.empty()) {
        std::vector<metrics::GainSummary> all;
        for (auto& g : gains) all.push_back(g.g);
        if (spec.per_panel_normalization) {
            for (const auto& model : models_seen) {
                std::vector<metrics::GainSummary> panel;
                std::vector<std::size_t> idx;
                for (std::size_t i = 0; i < gains.size(); ++i)
                    if (gains[i].model == model) {
                        panel.push_back(gains[i].g);
                        idx.push_back(i);
                    }
                metrics::normalize_shares(panel);
                for (std::size_t k = 0; k < idx.size(); ++k) all[idx[k]] = panel[k];
            }
        } else {
            metrics::normalize_shares(all);  // global across the whole matrix
        }
        std::ofstream f(out_dir + "/gains.csv");
        f << "model,dataset,wt_mean,st_mean,ri_mean,gain_ratio,reuse_share,"
             "reuse_share_normalized\n";
        std::vector<SvgDot> dots;
        for (std::size_t i = 0; i < gains.size(); ++i) {
            const auto& g = all[i];
            f << gains[i].model << "," << gains[i].dataset << "," << fmt(g.wt) << ","
              << fmt(g.st) << "," << fmt(g.ri) << "," << fmt(g.gain_ratio) << ","
              << fmt(g.reuse_share) << "," << fmt(g.reuse_share_normalized) << "\n";
            dots.push_back({gains[i].dataset, gains[i].model, g.gain_ratio,
                            g.reuse_share_normalized});
        }
        std::ofstream sf(out_dir + "/gains.svg");
        sf << svg_dot_plot("transfer gain (size) and reuse share (color)",
                           {datasets_seen.begin(), datasets_seen.end()},
                           {models_seen.begin(), models_seen.end()}, dots);
    }

    // ---- WT-ST depth sweep ----
    std::map<std::pair<std::string, std::string>, std::map<int, std::vector<double>>> sweeps;
    for (const auto& r : rows)
        if (r.init_kind == "WT_ST") sweeps[{r.model_key, r.dataset}][r.n].push_back(r.score);
    if (!sweeps.empty()) {
        std::ofstream f(out_dir + "/wtst_sweep.csv");
        f << "model,dataset,n,runs,mean,std_population\n";
        for (const auto& [key, depths] : sweeps)
            for (const auto& [n, scores] : depths)
                f << key.first << "," << key.second << "," << n << "," << scores.size() << ","
                  << fmt(mean_of(scores)) << "," << fmt(pop_std(scores)) << "\n";
        // one plot per model, lines per dataset
        std::map<std::string, std::vector<SvgSeries>> per_model;
        std::map<std::string, std::vector<std::string>> labels;
        for (const auto& [key, depths] : sweeps) {
            SvgSeries s;
            s.name = key.second;
            std::vector<std::string> lab;
            for (const auto& [n, scores] : depths) {
                s.values.push_back(mean_of(scores));
                s.stderrs.push_back(scores.size() > 1
                                        ? pop_std(scores) / std::sqrt((double)scores.size())
                                        : 0.0);
                lab.push_back(std::to_string(n));
            }
            per_model[key.first].push_back(std::move(s));
            labels[key.first] = lab;
        }
        for (const auto& [model, series] : per_model) {
            std::ofstream sf(out_dir + "/wtst_sweep_" + model + ".svg");
            sf << svg_line_plot("WT-ST depth sweep: " + model, labels[model], series);
        }
    }

    // ---- convergence ----
    {
        std::ofstream f(out_dir + "/convergence.csv");
        f << "model,dataset,init,mean_best_iter,speedup_vs_depth0\n";
        for (const auto& [key, iters] : cell_iters) {
            const auto& [model, dataset, init] = key;
            std::vector<double> as_double(iters.begin(), iters.end());
            const double own = mean_of(as_double);
            double speedup = 0.0;
            auto base = cell_iters.find({model, dataset, std::string("WT-ST-0")});
            if (base == cell_iters.end())
                base = cell_iters.find({model, dataset, std::string("ST")});
            if (base != cell_iters.end() && own > 0.0) {
                std::vector<double> bd(base->second.begin(), base->second.end());
                speedup = mean_of(bd) / own;
            }
            f << model << "," << dataset << "," << init << "," << fmt(own) << ","
              << fmt(speedup) << "\n";
        }
    }

    // ---- per-layer probe series ----
    {
        std::map<std::string, const RunRow*> by_id;
        for (const auto& r : rows) by_id[r.run_id] = &r;
        const auto probes = scan_probes(results_dir);
        // (kind, model, dataset, init) -> position -> (tap, values)
        std::map<std::tuple<std::string, std::string, std::string, std::string>,
                 std::map<int, std::pair<std::string, std::vector<double>>>> grouped;
        for (const auto& [run_id, prows] : probes) {
            auto it = by_id.find(run_id);
            if (it == by_id.end()) continue;
            const RunRow& r = *it->second;
            for (const auto& pr : prows)
                if (pr.probe_kind != "reinit_baseline") {
                    auto& slot = grouped[{pr.probe_kind, r.model_key, r.dataset, r.init_label}]
                                        [pr.position];
                    slot.first = pr.tap_id;
                    slot.second.push_back(pr.value);
                }
        }
        if (!grouped.empty()) {
            std::ofstream f(out_dir + "/probes_aggregate.csv");
            f << "probe_kind,model,dataset,init,position_index,tap_id,runs,mean,stderr\n";
            for (const auto& [key, positions] : grouped) {
                const auto& [kind, model, dataset, init] = key;
                for (const auto& [pos, slot] : positions) {
                    const auto& vals = slot.second;
                    const double m = mean_of(vals);
                    const double se =
                        vals.size() > 1
                            ? pop_std(vals) * std::sqrt((double)vals.size() /
                                                        (double)(vals.size() - 1)) /
                                  std::sqrt((double)vals.size())
                            : 0.0;
                    f << kind << "," << model << "," << dataset << "," << init << "," << pos
                      << "," << slot.first << "," << vals.size() << "," << fmt(m) << ","
                      << fmt(se) << "\n";
                }
            }
            // plots: per (kind, model, dataset), lines per init
            std::map<std::tuple<std::string, std::string, std::string>,
                     std::vector<SvgSeries>> plots;
            std::map<std::tuple<std::string, std::string, std::string>,
                     std::vector<std::string>> plot_labels;
            for (const auto& [key, positions] : grouped) {
                const auto& [kind, model, dataset, init] = key;
                SvgSeries s;
                s.name = init;
                std::vector<std::string> lab;
                for (const auto& [pos, slot] : positions) {
                    s.values.push_back(mean_of(slot.second));
                    lab.push_back(slot.first);
                }
                plots[{kind, model, dataset}].push_back(std::move(s));
                plot_labels[{kind, model, dataset}] = lab;
            }
            for (const auto& [key, series] : plots) {
                const auto& [kind, model, dataset] = key;
                std::ofstream sf(out_dir + "/probe_" + kind + "_" + model + "_" + dataset +
                                 ".svg");
                sf << svg_line_plot(kind + ": " + model + " on " + dataset,
                                    plot_labels[key], series);
            }
        }
    }

    // ---- CKA heatmaps (seed-mean per cell) ----
    {
        std::map<std::string, const RunRow*> by_id;
        for (const auto& r : rows) by_id[r.run_id] = &r;
        struct CkaAgg {
            std::vector<std::string> taps;
            std::vector<double> sum;
            int count = 0;
        };
        std::map<std::tuple<std::string, std::string, std::string>, CkaAgg> agg;
        const fs::path runs = fs::path(results_dir) / "runs";
        if (fs::is_directory(runs))
            for (const auto& e : fs::directory_iterator(runs)) {
                const fs::path cf = e.path() / "cka_init_vs_best.csv";
                if (!fs::exists(cf)) continue;
                auto it = by_id.find(e.path().filename().string());
                if (it == by_id.end()) continue;
                std::ifstream f(cf);
                std::string line;
                std::getline(f, line);  // meta
                std::getline(f, line);  // header with col taps
                std::vector<std::string> taps;
                {
                    std::size_t pos = line.find(',');
                    while (pos != std::string::npos) {
                        const std::size_t nxt = line.find(',', pos + 1);
                        taps.push_back(line.substr(pos + 1, nxt == std::string::npos
                                                                ? std::string::npos
                                                                : nxt - pos - 1));
                        pos = nxt;
                    }
                }
                std::vector<double> values;
                while (std::getline(f, line)) {
                    std::size_t pos = line.find(',');
                    while (pos != std::string::npos) {
                        const std::size_t nxt = line.find(',', pos + 1);
                        values.push_back(std::stod(line.substr(pos + 1)));
                        pos = nxt;
                    }
                }
                const RunRow& r = *it->second;
                CkaAgg& a = agg[{r.model_key, r.dataset, r.init_label}];
                if (a.sum.empty()) {
                    a.taps = taps;
                    a.sum.assign(values.size(), 0.0);
                }
                if (a.sum.size() == values.size()) {
                    for (std::size_t i = 0; i < values.size(); ++i) a.sum[i] += values[i];
                    ++a.count;
                }
            }
        for (const auto& [key, a] : agg) {
            const auto& [model, dataset, init] = key;
            const std::string base = out_dir + "/cka_" + model + "_" + dataset + "_" + init;
            std::vector<double> m(a.sum);
            for (auto& v : m) v /= a.count;
            std::ofstream cf(base + ".csv");
            cf << "tap";
            for (const auto& t : a.taps) cf << "," << t;
            cf << "\n";
            for (std::size_t i = 0; i < a.taps.size(); ++i) {
                cf << a.taps[i];
                for (std::size_t j = 0; j < a.taps.size(); ++j)
                    cf << "," << fmt(m[i * a.taps.size() + j]);
                cf << "\n";
            }
            std::ofstream sf(base + ".svg");
            sf << svg_heatmap("CKA before vs after fine-tuning: " + model + " " + init + " on " +
                                  dataset,
                              a.taps, a.taps, m);
        }
    }

    // ---- gap list from the matrix manifest ----
    {
        const fs::path mf = fs::path(results_dir) / "matrix.json";
        if (fs::exists(mf)) {
            std::ifstream f(mf);
            json matrix = json::parse(f);
            std::ofstream g(out_dir + "/gaps.csv");
            g << "run_id,model,init,dataset,seed,status,error\n";
            for (const auto& cell : matrix)
                if (cell.value("status", "") != "complete" &&
                    cell.value("status", "") != "skipped")
                    g << cell.value("run_id", "") << "," << cell.value("model", "") << ","
                      << cell.value("init", "") << "," << cell.value("dataset", "") << ","
                      << cell.value("seed", 0) << "," << cell.value("status", "") << ","
                      << "\"" << cell.value("error", "") << "\"\n";
        }
    }
}

} // namespace tlab::harness
