#include "tlab/harness/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "tlab/error.hpp"
#include "tlab/metrics/metrics.hpp"
#include "tlab/rng.hpp"

namespace tlab::harness {

namespace fs = std::filesystem;
using nlohmann::json;

json GeneratorSpec::to_json() const {
    return json{{"name", name}, {"size", size}, {"image", image}, {"shift", shift},
                {"gen_seed", gen_seed}};
}

GeneratorSpec GeneratorSpec::from_json(const json& j) {
    GeneratorSpec g;
    g.name = j.at("name").get<std::string>();
    g.size = j.at("size").get<int>();
    g.image = j.value("image", 32);
    g.shift = j.value("shift", 0.0);
    g.gen_seed = j.value("gen_seed", (std::uint64_t)0);
    if (g.name != "shapes10") throw ConfigError("unknown generator: " + g.name);
    if (g.size < 10 || g.image < 16) throw ConfigError("generator spec too small");
    if (g.shift < 0.0 || g.shift > 1.0) throw ConfigError("shift must lie in [0,1]");
    return g;
}

json DatasetManifest::to_json() const {
    json j{{"id", id},
           {"source", source},
           {"class_count", class_count},
           {"sample_count", sample_count},
           {"metric_id", metric_id},
           {"split_seed", split_seed},
           {"source_spec", source_spec},
           {"splits",
            {{"train", splits.train}, {"val", splits.val}, {"test", splits.test}}}};
    if (fid_to_source) j["fid_to_source"] = *fid_to_source;
    return j;
}

DatasetManifest DatasetManifest::from_json(const json& j) {
    DatasetManifest m;
    m.id = j.at("id").get<std::string>();
    m.source = j.at("source").get<std::string>();
    m.class_count = j.at("class_count").get<int>();
    m.sample_count = j.at("sample_count").get<int>();
    m.metric_id = j.at("metric_id").get<std::string>();
    m.split_seed = j.at("split_seed").get<std::uint64_t>();
    m.source_spec = j.at("source_spec");
    m.splits.train = j.at("splits").at("train").get<std::vector<int>>();
    m.splits.val = j.at("splits").at("val").get<std::vector<int>>();
    m.splits.test = j.at("splits").at("test").get<std::vector<int>>();
    if (j.contains("fid_to_source")) m.fid_to_source = j.at("fid_to_source").get<double>();
    return m;
}

DatasetManifest manifest_of(const Dataset& data, const std::string& source_kind) {
    DatasetManifest m;
    m.id = data.id;
    m.source = source_kind;
    m.class_count = data.class_count;
    m.sample_count = data.count();
    m.splits = data.splits;
    m.metric_id = data.metric_id;
    m.split_seed = data.split_seed;
    m.source_spec = json::parse(data.source_desc);
    return m;
}

SplitIndices make_splits(int n, std::uint64_t split_seed) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = Rng::keyed(split_seed, "splits");
    for (std::size_t j = order.size(); j > 1; --j)
        std::swap(order[j - 1], order[rng.below(j)]);
    const int n_train = (int)std::llround(n * 0.8);
    const int n_test = (int)std::llround(n * 0.1);
    SplitIndices s;
    s.train.assign(order.begin(), order.begin() + n_train);
    s.test.assign(order.begin() + n_train, order.begin() + n_train + n_test);
    s.val.assign(order.begin() + n_train + n_test, order.end());
    if (s.train.empty() || s.val.empty() || s.test.empty())
        throw DataError("dataset too small for 80/10/10 splits");
    return s;
}

// ---------------------------------------------------------------------------
// shapes10 renderer
// ---------------------------------------------------------------------------

namespace {

struct Palette {
    float bg[3];
    float fg[3];
};

Palette pick_palette(Rng& rng) {
    Palette p;
    for (int c = 0; c < 3; ++c) p.bg[c] = (float)rng.uniform(0.1, 0.7);
    // contrast is guaranteed in aggregate but not per channel, so color alone
    // is an unreliable cue and shape must carry the class
    float total = 0.0f;
    for (int c = 0; c < 3; ++c) {
        const float delta = (float)rng.uniform(0.05, 0.5) * (rng.uniform() < 0.5 ? -1.0f : 1.0f);
        p.fg[c] = std::clamp(p.bg[c] + delta, 0.0f, 1.0f);
        total += std::fabs(p.fg[c] - p.bg[c]);
    }
    if (total < 0.55f) {
        const int c = (int)rng.below(3);
        p.fg[c] = p.bg[c] > 0.5f ? std::max(0.0f, p.bg[c] - 0.55f)
                                 : std::min(1.0f, p.bg[c] + 0.55f);
    }
    return p;
}

bool inside_shape(int cls, float dx, float dy, float r) {
    const float ax = std::fabs(dx), ay = std::fabs(dy);
    const float dist = std::sqrt(dx * dx + dy * dy);
    switch (cls) {
        case 0: return dist <= r;                                  // disc
        case 1: return dist <= r && dist >= 0.55f * r;             // ring
        case 2: return ax <= 0.8f * r && ay <= 0.8f * r;           // square
        case 3: {                                                  // frame
            const float m = std::max(ax, ay);
            return m <= 0.85f * r && m >= 0.5f * r;
        }
        case 4: return ax + ay <= 1.1f * r;                        // diamond
        case 5: return (ax <= 0.3f * r && ay <= r) || (ay <= 0.3f * r && ax <= r);  // plus
        case 6: return std::fabs(ax - ay) <= 0.35f * r && std::max(ax, ay) <= r;    // X
        case 7: {                                                  // horizontal stripes
            if (ax > 0.85f * r || ay > 0.85f * r) return false;
            const int band = (int)std::floor((dy + r) / std::max(2.0f, r / 2.0f));
            return band % 2 == 0;
        }
        case 8: {                                                  // vertical stripes
            if (ax > 0.85f * r || ay > 0.85f * r) return false;
            const int band = (int)std::floor((dx + r) / std::max(2.0f, r / 2.0f));
            return band % 2 == 0;
        }
        default: {                                                 // checkerboard
            if (ax > 0.85f * r || ay > 0.85f * r) return false;
            const float cell = std::max(2.0f, r / 2.0f);
            const int bx = (int)std::floor((dx + r) / cell);
            const int by = (int)std::floor((dy + r) / cell);
            return (bx + by) % 2 == 0;
        }
    }
}

} // namespace

void render_shapes10_sample(float* img, int image, int cls, double shift, std::uint64_t gen_seed,
                            int index) {
    Rng rng = Rng::keyed(gen_seed, "sample:" + std::to_string(index));
    const Palette pal = pick_palette(rng);

    // coarse value-noise background
    const int grid = 4;
    float noise[grid + 1][grid + 1];
    for (int gy = 0; gy <= grid; ++gy)
        for (int gx = 0; gx <= grid; ++gx) noise[gy][gx] = (float)rng.uniform(-1.0, 1.0);

    const float cx = (float)rng.uniform(image * 0.35, image * 0.65);
    const float cy = (float)rng.uniform(image * 0.35, image * 0.65);
    const float r = (float)rng.uniform(image * 0.2, image * 0.33);
    // pose jitter: small enough to keep square/diamond and H/V stripes distinct
    const float rot = (float)rng.uniform(-0.3, 0.3);
    const float cos_r = std::cos(rot), sin_r = std::sin(rot);
    const float aspect = (float)rng.uniform(0.75, 1.3);

    // low-contrast background grating is always present
    const float bg_fx = (float)rng.uniform(0.5, 2.5);
    const float bg_fy = (float)rng.uniform(0.5, 2.5);
    const float bg_phase = (float)rng.uniform(0.0, 6.2831853);

    // neutral clutter: a few small distractor discs that belong to no class
    const int n_clutter = 2 + (int)rng.below(3);
    float clutter[4][4];  // cx, cy, radius, brightness delta
    for (int k = 0; k < n_clutter; ++k) {
        clutter[k][0] = (float)rng.uniform(2.0, image - 2.0);
        clutter[k][1] = (float)rng.uniform(2.0, image - 2.0);
        clutter[k][2] = (float)rng.uniform(image * 0.03, image * 0.08);
        clutter[k][3] = (float)rng.uniform(-0.3, 0.3);
    }

    const float tex_fx = (float)rng.uniform(3.0, 6.0);
    const float tex_fy = (float)rng.uniform(3.0, 6.0);
    const float tex_phase = (float)rng.uniform(0.0, 6.2831853);

    for (int y = 0; y < image; ++y) {
        for (int x = 0; x < image; ++x) {
            const float u = (float)x / image * grid, v = (float)y / image * grid;
            const int gx = std::min((int)u, grid - 1), gy = std::min((int)v, grid - 1);
            const float fu = u - gx, fv = v - gy;
            const float nz = (noise[gy][gx] * (1 - fu) + noise[gy][gx + 1] * fu) * (1 - fv) +
                             (noise[gy + 1][gx] * (1 - fu) + noise[gy + 1][gx + 1] * fu) * fv;
            const float bg_grate = std::sin(6.2831853f * (x * bg_fx + y * bg_fy) / image +
                                            bg_phase);
            // rotated, aspect-scaled shape frame
            const float rx = (float)x - cx, ry = (float)y - cy;
            const float dx = (rx * cos_r + ry * sin_r) * aspect;
            const float dy = (-rx * sin_r + ry * cos_r) / aspect;
            const bool fg = inside_shape(cls, dx, dy, r);
            float px[3];
            for (int c = 0; c < 3; ++c) {
                const float base = fg ? pal.fg[c] : pal.bg[c];
                px[c] = std::clamp(base + 0.09f * nz + (fg ? 0.0f : 0.05f * bg_grate), 0.0f,
                                   1.0f);
            }
            // appearance shift: remix the palette and swap the shape's flat fill
            // for a grating texture. Labels and geometry stay put; what changes
            // is how useful source-domain features are on this data.
            if (shift > 0.0) {
                const float remix[3] = {1.0f - px[1], px[2], 1.0f - px[0]};
                for (int c = 0; c < 3; ++c)
                    px[c] = (float)((1.0 - shift) * px[c] + shift * remix[c]);
                if (fg) {
                    const float grate =
                        0.5f + 0.5f * std::sin(6.2831853f * (x * tex_fx + y * tex_fy) / image +
                                               tex_phase);
                    for (int c = 0; c < 3; ++c)
                        px[c] = (float)(px[c] * (1.0 - 0.6 * shift) + grate * 0.6 * shift);
                }
                for (int c = 0; c < 3; ++c) px[c] = std::clamp(px[c], 0.0f, 1.0f);
            }
            for (int k = 0; k < n_clutter; ++k) {
                const float ddx = (float)x - clutter[k][0], ddy = (float)y - clutter[k][1];
                if (ddx * ddx + ddy * ddy <= clutter[k][2] * clutter[k][2])
                    for (int c = 0; c < 3; ++c)
                        px[c] = std::clamp(px[c] + clutter[k][3], 0.0f, 1.0f);
            }
            for (int c = 0; c < 3; ++c)
                img[((std::size_t)c * image + y) * image + x] = px[c];
        }
    }
}

Dataset make_synthetic(const GeneratorSpec& spec, std::uint64_t split_seed,
                       const std::string& metric_id, const std::string& id) {
    if (!metrics::metric_known(metric_id)) throw ConfigError("unknown metric id: " + metric_id);
    Dataset data;
    data.id = id;
    data.class_count = 10;
    data.metric_id = metric_id;
    data.split_seed = split_seed;
    data.source_desc = spec.to_json().dump();
    data.images = Tensor({spec.size, 3, spec.image, spec.image});
    data.labels.resize(spec.size);
    const std::size_t per = (std::size_t)3 * spec.image * spec.image;
    for (int i = 0; i < spec.size; ++i) {
        const int cls = i % 10;  // balanced classes
        data.labels[i] = cls;
        render_shapes10_sample(data.images.ptr() + (std::size_t)i * per, spec.image, cls,
                               spec.shift, spec.gen_seed, i);
    }
    data.splits = make_splits(spec.size, split_seed);
    return data;
}

// ---------------------------------------------------------------------------
// directory ingestion
// ---------------------------------------------------------------------------

void write_ppm(const std::string& path, const float* chw, int c, int h, int w) {
    if (c != 3) throw ShapeError("write_ppm: expects 3 channels");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot write " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < 3; ++ch) {
                const float v = chw[((std::size_t)ch * h + y) * w + x];
                f.put((char)(unsigned char)std::clamp((int)std::lround(v * 255.0f), 0, 255));
            }
}

Tensor read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestError("unreadable file: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6") throw IngestError("not a binary PPM: " + path);
    auto next_int = [&]() {
        int v;
        f >> std::ws;
        while (f.peek() == '#') {
            std::string comment;
            std::getline(f, comment);
            f >> std::ws;
        }
        if (!(f >> v)) throw IngestError("malformed PPM header: " + path);
        return v;
    };
    const int w = next_int(), h = next_int(), maxval = next_int();
    if (w <= 0 || h <= 0 || maxval != 255) throw IngestError("unsupported PPM: " + path);
    f.get();  // single whitespace after maxval
    std::vector<unsigned char> raw((std::size_t)w * h * 3);
    f.read(reinterpret_cast<char*>(raw.data()), (std::streamsize)raw.size());
    if (!f) throw IngestError("truncated PPM: " + path);
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img[((std::size_t)c * h + y) * w + x] =
                    raw[((std::size_t)y * w + x) * 3 + c] / 255.0f;
    return img;
}

Dataset ingest_directory(const std::string& path, std::uint64_t split_seed,
                         const std::string& metric_id, const std::string& id) {
    if (!metrics::metric_known(metric_id)) throw ConfigError("unknown metric id: " + metric_id);
    if (!fs::is_directory(path)) throw IngestError("not a directory: " + path);

    std::vector<std::pair<std::string, int>> files;  // path, label
    int class_count = 0;

    const fs::path labels_csv = fs::path(path) / "labels.csv";
    if (fs::exists(labels_csv)) {
        std::ifstream lf(labels_csv);
        std::string line;
        std::set<int> classes;
        while (std::getline(lf, line)) {
            if (line.empty() || line.rfind("filename", 0) == 0) continue;
            const auto comma = line.find(',');
            if (comma == std::string::npos) throw IngestError("malformed labels.csv line: " + line);
            const std::string fname = line.substr(0, comma);
            const int label = std::stoi(line.substr(comma + 1));
            files.emplace_back((fs::path(path) / fname).string(), label);
            classes.insert(label);
        }
        class_count = (int)classes.size();
        for (int c = 0; c < class_count; ++c)
            if (!classes.count(c)) throw DataError("labels.csv classes not dense from 0");
    } else {
        std::vector<std::string> class_dirs;
        for (const auto& e : fs::directory_iterator(path))
            if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
        std::sort(class_dirs.begin(), class_dirs.end());
        if (class_dirs.empty()) throw DataError("no class subdirectories in " + path);
        for (std::size_t cls = 0; cls < class_dirs.size(); ++cls) {
            std::vector<std::string> entries;
            for (const auto& e : fs::directory_iterator(fs::path(path) / class_dirs[cls]))
                if (e.is_regular_file()) entries.push_back(e.path().string());
            std::sort(entries.begin(), entries.end());
            if (entries.empty()) throw DataError("empty class directory: " + class_dirs[cls]);
            for (const auto& file : entries) files.emplace_back(file, (int)cls);
        }
        class_count = (int)class_dirs.size();
    }
    if (class_count < 2) throw DataError("ingestion needs at least 2 classes");

    // read everything up front so every unreadable file is reported at once
    std::vector<Tensor> images;
    std::vector<std::string> offenders;
    for (const auto& [file, label] : files) {
        try {
            images.push_back(read_ppm(file));
        } catch (const IngestError&) {
            offenders.push_back(file);
        }
    }
    if (!offenders.empty()) {
        std::string msg = "ingestion failed for " + std::to_string(offenders.size()) + " file(s):";
        for (const auto& o : offenders) msg += "\n  " + o;
        throw IngestError(msg);
    }
    const int h = images[0].dim(1), w = images[0].dim(2);
    for (const auto& img : images)
        if (img.dim(1) != h || img.dim(2) != w)
            throw ShapeError("ingestion: images disagree on size");

    Dataset data;
    data.id = id;
    data.class_count = class_count;
    data.metric_id = metric_id;
    data.split_seed = split_seed;
    data.source_desc = json{{"path", path}}.dump();
    data.images = Tensor({(int)files.size(), 3, h, w});
    data.labels.resize(files.size());
    const std::size_t per = (std::size_t)3 * h * w;
    for (std::size_t i = 0; i < files.size(); ++i) {
        std::copy(images[i].ptr(), images[i].ptr() + per, data.images.ptr() + i * per);
        data.labels[i] = files[i].second;
    }
    data.splits = make_splits((int)files.size(), split_seed);

    std::ofstream mf(fs::path(path) / "dataset_manifest.json");
    if (mf) mf << manifest_of(data, "directory").to_json().dump(2) << "\n";
    return data;
}

Dataset ingest_dataset(const json& source_spec, std::uint64_t split_seed,
                       const std::string& metric_id, const std::string& id) {
    if (source_spec.contains("generator"))
        return make_synthetic(GeneratorSpec::from_json(source_spec.at("generator")), split_seed,
                              metric_id, id);
    if (source_spec.contains("path"))
        return ingest_directory(source_spec.at("path").get<std::string>(), split_seed, metric_id,
                                id);
    throw ConfigError("dataset source must carry either a generator or a path");
}

} // namespace tlab::harness
