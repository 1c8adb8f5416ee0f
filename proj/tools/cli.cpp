#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mhg/contours.hpp"
#include "mhg/dataio.hpp"
#include "mhg/engine.hpp"
#include "mhg/metrics.hpp"
#include "mhg/model.hpp"
#include "mhg/rasterizer.hpp"
#include "mhg/synthetic.hpp"
#include "mhg/topology.hpp"

namespace fs = std::filesystem;
using namespace mhg;

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;  // key=value
    int64_t seed = -1;
    int threads = 1;
};

DatasetConfig resolve_config(const CommonOpts& c) {
    std::ifstream in(c.config_path);
    if (!in) throw std::runtime_error("cannot open config '" + c.config_path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config '" + c.config_path + "': " + e.what());
    }
    for (const auto& kv : c.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::runtime_error("override '" + kv + "' is not key=value");
        apply_override(j, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (c.seed >= 0) apply_override(j, "seed", std::to_string(c.seed));
    DatasetConfig cfg = config_from_json(j);
    cfg.validate();
    return cfg;
}

void snapshot_config(const DatasetConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    save_config(cfg, (fs::path(out_dir) / "config.json").string());
}

std::string subject_file(const std::string& dir, const std::string& stem) {
    return (fs::path(dir) / stem).string();
}

void write_metrics_csv(const std::string& path, const std::vector<EvalRow>& rows,
                       const std::map<int, double>& corr_summary) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "subject,organ,dice,hausdorff_px,assd_px,correspondence\n";
    char buf[256];
    for (const auto& r : rows) {
        auto it = corr_summary.find(r.organ);
        if (it != corr_summary.end())
            std::snprintf(buf, sizeof(buf), "%s,%d,%.9g,%.9g,%.9g,%.9g\n", r.subject.c_str(), r.organ, r.dice,
                          r.hausdorff_px, r.assd_px, it->second);
        else
            std::snprintf(buf, sizeof(buf), "%s,%d,%.9g,%.9g,%.9g,\n", r.subject.c_str(), r.organ, r.dice,
                          r.hausdorff_px, r.assd_px);
        out << buf;
    }
}

nlohmann::json metrics_summary(const std::vector<EvalRow>& rows) {
    std::map<int, std::vector<const EvalRow*>> by_organ;
    for (const auto& r : rows) by_organ[r.organ].push_back(&r);
    nlohmann::json out = nlohmann::json::object();
    for (const auto& [organ, rs] : by_organ) {
        double d = 0, h = 0, a = 0;
        for (const auto* r : rs) {
            d += r->dice;
            h += r->hausdorff_px;
            a += r->assd_px;
        }
        const double n = static_cast<double>(rs.size());
        out[std::to_string(organ)] = {{"dice", d / n}, {"hausdorff_px", h / n}, {"assd_px", a / n}, {"n", rs.size()}};
    }
    return out;
}

int cmd_gen_synth(const CommonOpts& common, const std::string& out_dir, int n, bool touching,
                  double noise_sigma) {
    DatasetConfig cfg = resolve_config(common);
    const std::vector<int> want = touching ? std::vector<int>{1, 2} : std::vector<int>{1};
    if (cfg.organ_labels != want)
        throw std::runtime_error("gen-synth: config organs must be exactly " +
                                 std::string(touching ? "{1,2} in touching mode" : "{1}"));
    SyntheticSpec spec;
    spec.noise_sigma = noise_sigma;
    Rng rng(cfg.seed);
    const auto pop = gen_synthetic_population(n, spec, cfg.input_size, touching, rng);

    fs::create_directories(out_dir);
    std::vector<ManifestEntry> manifest;
    for (const auto& s : pop) {
        const std::string id = s.sample.subject_id;
        LabelMask img8(cfg.input_size, cfg.input_size);
        for (size_t i = 0; i < img8.v.size(); ++i)
            img8.v[i] = static_cast<uint8_t>(std::lround(s.sample.image.v[i] * 255.0));
        save_pgm(img8, subject_file(out_dir, id + "_img.pgm"));
        save_mask(s.sample.mask, subject_file(out_dir, id + "_mask.pgm"));
        save_oracle_csv(s.oracle, subject_file(out_dir, "oracle_" + id + ".csv"));
        manifest.push_back({id, id + "_img.pgm", id + "_mask.pgm", s.sample.annotated_organs});
    }
    save_manifest(manifest, subject_file(out_dir, "manifest.json"));
    snapshot_config(cfg, out_dir);
    log_info("gen-synth: wrote " + std::to_string(n) + " samples to " + out_dir);
    return 0;
}

GraphTopology prepare_topology(const DatasetConfig& cfg, const std::vector<Sample>& samples,
                               std::map<int, double>* stats_out, std::map<int, int>* counts_out) {
    std::vector<std::map<int, Contour>> per_sample;
    per_sample.reserve(samples.size());
    for (const auto& s : samples) per_sample.push_back(extract_organ_contours(s.mask, s.annotated_organs));
    const auto stats = contour_length_stats(per_sample, cfg.organ_labels);
    std::map<int, int> counts;
    for (const auto& [organ, len] : stats) counts[organ] = landmark_count(len, cfg.scale_factor, cfg.min_landmarks);
    if (stats_out) *stats_out = stats;
    if (counts_out) *counts_out = counts;
    const int R = cfg.resolution_levels();
    if (cfg.graph_mode == "unified") {
        // atlas = first sample carrying every organ
        for (const auto& cs : per_sample) {
            if (static_cast<int>(cs.size()) != static_cast<int>(cfg.organ_labels.size())) continue;
            return build_unified_multilevel(cs, cfg.unified_delta, counts, R);
        }
        throw std::runtime_error("prepare: no sample carries every organ, cannot build unified atlas");
    }
    return build_independent(counts, R);
}

int cmd_prepare(const CommonOpts& common, const std::string& data_dir, const std::string& out_dir) {
    DatasetConfig cfg = resolve_config(common);
    const auto samples = load_dataset(subject_file(data_dir, "manifest.json"));
    std::map<int, double> stats;
    std::map<int, int> counts;
    const GraphTopology topo = prepare_topology(cfg, samples, &stats, &counts);

    fs::create_directories(out_dir);
    save_topology(topo, subject_file(out_dir, "topology.json"));
    std::ofstream sc(subject_file(out_dir, "contour_stats.csv"));
    if (!sc) throw std::runtime_error("cannot write contour_stats.csv");
    sc << "organ,mean_length,n1\n";
    for (const auto& [organ, len] : stats) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%d\n", organ, len, counts.at(organ));
        sc << buf;
    }
    snapshot_config(cfg, out_dir);
    log_info("prepare: topology with " + std::to_string(topo.level[0].n) + " finest nodes written to " + out_dir);
    return 0;
}

int cmd_fit(const CommonOpts& common, const std::string& data_dir, const std::string& topo_path,
            const std::string& out_dir, int limit) {
    DatasetConfig cfg = resolve_config(common);
    const GraphTopology topo = load_topology(topo_path);
    auto samples = load_dataset(subject_file(data_dir, "manifest.json"));
    if (limit > 0 && static_cast<int>(samples.size()) > limit) samples.resize(limit);

    fs::create_directories(out_dir);
    std::vector<EvalRow> rows;
    for (const auto& s : samples) {
        const SnakeFitResult fit = snake_fit(s.mask, topo, cfg);
        const double scale = std::max(s.mask.h, s.mask.w);
        std::ofstream lm(subject_file(out_dir, "landmarks_" + s.subject_id + ".csv"));
        lm << "node,x,y\n";
        for (size_t i = 0; i < fit.landmarks.size(); ++i) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", i, fit.landmarks[i].x * scale,
                          fit.landmarks[i].y * scale);
            lm << buf;
        }
        for (const auto& [organ, cycle] : topo.level[0].organ_cycles) {
            if (std::find(s.annotated_organs.begin(), s.annotated_organs.end(), organ) ==
                s.annotated_organs.end())
                continue;
            PointList poly;
            for (int idx : cycle) poly.push_back(fit.landmarks[idx] * scale);
            const LabelMask pred = hard_rasterize(poly, s.mask.h, s.mask.w);
            const LabelMask gtm = binarize(s.mask, organ);
            const BoundaryDistances bd = boundary_distances(pred, gtm);
            rows.push_back({s.subject_id, organ, dice(pred, gtm), bd.hausdorff, bd.assd});
        }
        log_info("fit: " + s.subject_id + " done");
    }
    write_metrics_csv(subject_file(out_dir, "fit_metrics.csv"), rows, {});
    std::ofstream js(subject_file(out_dir, "fit_summary.json"));
    js << metrics_summary(rows).dump(2) << "\n";
    snapshot_config(cfg, out_dir);
    return 0;
}

int cmd_train(const CommonOpts& common, const std::string& data_dir, const std::string& topo_path,
              const std::string& out_dir, const std::string& resume) {
    DatasetConfig cfg = resolve_config(common);
    const GraphTopology topo = load_topology(topo_path);
    auto samples = load_dataset(subject_file(data_dir, "manifest.json"));
    Model model(cfg, topo, cfg.seed);
    fs::create_directories(out_dir);
    snapshot_config(cfg, out_dir);
    const TrainResult res = train_population(samples, model, topo, cfg, out_dir, resume);
    nlohmann::json js = {{"best_val_chamfer", res.best_val},
                         {"best_iteration", res.best_iter},
                         {"iterations", cfg.train.iterations},
                         {"train_samples", res.split.train.size()},
                         {"val_samples", res.split.val.size()},
                         {"test_samples", res.split.test.size()}};
    std::ofstream(subject_file(out_dir, "train_summary.json")) << js.dump(2) << "\n";
    log_info("train: best val chamfer " + std::to_string(res.best_val) + " at iteration " +
             std::to_string(res.best_iter));
    return 0;
}

int cmd_eval(const CommonOpts& common, const std::string& data_dir, const std::string& topo_path,
             const std::string& ckpt, const std::string& out_dir, const std::string& split_name,
             std::string oracle_dir) {
    DatasetConfig cfg = resolve_config(common);
    const GraphTopology topo = load_topology(topo_path);
    const auto all = load_dataset(subject_file(data_dir, "manifest.json"));
    Model model(cfg, topo, cfg.seed);
    load_checkpoint(ckpt, model.params(), config_hash(cfg), topology_hash(topo), nullptr);

    std::vector<Sample> samples;
    if (split_name == "all") {
        samples = all;
    } else {
        const SplitResult split = split_subjects(all, cfg.train.test_fraction, cfg.seed);
        const std::vector<int>* idx = nullptr;
        if (split_name == "train") idx = &split.train;
        else if (split_name == "val") idx = &split.val;
        else if (split_name == "test") idx = &split.test;
        else throw std::runtime_error("eval: unknown split '" + split_name + "'");
        for (int i : *idx) samples.push_back(all[i]);
    }
    if (samples.empty()) throw std::runtime_error("eval: selected split is empty");

    std::vector<PointList> pred_px;
    const auto rows = evaluate_samples(model, topo, samples, cfg, &pred_px);

    // correspondence against oracle curves when every sample has one
    if (oracle_dir.empty()) oracle_dir = data_dir;
    std::vector<OracleSet> oracles;
    bool have_oracles = true;
    for (const auto& s : samples) {
        const std::string path = subject_file(oracle_dir, "oracle_" + s.subject_id + ".csv");
        if (!fs::exists(path)) {
            have_oracles = false;
            break;
        }
        oracles.push_back(load_oracle_csv(path));
    }
    std::map<int, double> corr_summary;
    fs::create_directories(out_dir);
    if (have_oracles) {
        std::ofstream cc(subject_file(out_dir, "correspondence.csv"));
        cc << "organ,index,circ_mean,circ_std\n";
        for (const auto& [organ, cycle] : topo.level[0].organ_cycles) {
            std::vector<PointList> pred;
            std::vector<const OracleCurve*> curves;
            bool organ_ok = true;
            for (size_t n = 0; n < samples.size(); ++n) {
                auto it = oracles[n].find(organ);
                if (it == oracles[n].end()) {
                    organ_ok = false;
                    break;
                }
                PointList pts;
                for (int idx : cycle) pts.push_back(pred_px[n][idx]);
                pred.push_back(std::move(pts));
                curves.push_back(&it->second);
            }
            if (!organ_ok) continue;
            const CorrespondenceStats st = correspondence_consistency(pred, curves);
            corr_summary[organ] = st.summary;
            for (size_t i = 0; i < st.mean.size(); ++i) {
                char buf[96];
                std::snprintf(buf, sizeof(buf), "%d,%zu,%.9g,%.9g\n", organ, i, st.mean[i], st.stddev[i]);
                cc << buf;
            }
        }
    }

    write_metrics_csv(subject_file(out_dir, "metrics.csv"), rows, corr_summary);
    nlohmann::json js = metrics_summary(rows);
    for (const auto& [organ, v] : corr_summary) js[std::to_string(organ)]["correspondence"] = v;
    js["split"] = split_name;
    std::ofstream(subject_file(out_dir, "eval_summary.json")) << js.dump(2) << "\n";
    snapshot_config(cfg, out_dir);
    return 0;
}

int cmd_export_atlas(const std::string& topo_path, const std::string& out_path, const std::string& landmarks_csv,
                     const std::string& mask_path, int level) {
    const GraphTopology topo = load_topology(topo_path);
    if (level < 0 || level >= topo.levels()) throw std::runtime_error("export-atlas: level out of range");
    const LevelTopology& L = topo.level[level];

    PointList pos;
    if (!landmarks_csv.empty()) {
        std::ifstream in(landmarks_csv);
        if (!in) throw std::runtime_error("cannot open '" + landmarks_csv + "'");
        std::string line;
        std::getline(in, line);  // header
        pos.resize(L.n);
        std::vector<bool> seen(L.n, false);
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            int node;
            double x, y;
            if (std::sscanf(line.c_str(), "%d,%lf,%lf", &node, &x, &y) != 3)
                throw std::runtime_error("export-atlas: bad landmarks row '" + line + "'");
            if (node < 0 || node >= L.n) throw std::runtime_error("export-atlas: node index out of range");
            pos[node] = {x, y};
            seen[node] = true;
        }
        for (int i = 0; i < L.n; ++i)
            if (!seen[i]) throw std::runtime_error("export-atlas: landmarks missing node " + std::to_string(i));
    } else if (!L.pos.empty()) {
        pos = L.pos;
    } else {
        // schematic circular layout per organ
        pos.assign(L.n, Vec2{});
        const int n_org = static_cast<int>(topo.organ_labels.size());
        int oi = 0;
        for (const auto& [organ, cycle] : L.organ_cycles) {
            const double cx = 100.0 + 200.0 * (oi % std::max(1, n_org));
            const double cy = 100.0;
            for (size_t k = 0; k < cycle.size(); ++k) {
                const double th = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(cycle.size());
                pos[cycle[k]] = {cx + 80.0 * std::cos(th), cy + 80.0 * std::sin(th)};
            }
            ++oi;
        }
    }

    LabelMask mask;
    if (!mask_path.empty()) mask = load_mask(mask_path);

    double maxx = 0.0, maxy = 0.0;
    for (const auto& p : pos) {
        maxx = std::max(maxx, p.x);
        maxy = std::max(maxy, p.y);
    }
    const int W = mask.w > 0 ? mask.w : static_cast<int>(maxx) + 20;
    const int H = mask.h > 0 ? mask.h : static_cast<int>(maxy) + 20;

    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("cannot write '" + out_path + "'");
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    if (mask.w > 0) {
        // grey row runs for foreground pixels
        for (int y = 0; y < mask.h; ++y) {
            int x = 0;
            while (x < mask.w) {
                if (mask.at(y, x) == 0) {
                    ++x;
                    continue;
                }
                const int x0 = x;
                const uint8_t v = mask.at(y, x);
                while (x < mask.w && mask.at(y, x) == v) ++x;
                const int shade = 200 - 30 * (v % 4);
                out << "<rect x=\"" << x0 << "\" y=\"" << y << "\" width=\"" << x - x0
                    << "\" height=\"1\" fill=\"rgb(" << shade << "," << shade << "," << shade << ")\"/>\n";
            }
        }
    }
    for (const auto& [u, v] : L.edges)
        out << "<line x1=\"" << pos[u].x << "\" y1=\"" << pos[u].y << "\" x2=\"" << pos[v].x << "\" y2=\""
            << pos[v].y << "\" stroke=\"#555\" stroke-width=\"0.3\"/>\n";
    for (int i = 0; i < L.n; ++i) {
        const int hue = static_cast<int>(360.0 * i / L.n);
        const bool shared = L.membership[i].size() > 1;
        out << "<circle cx=\"" << pos[i].x << "\" cy=\"" << pos[i].y << "\" r=\"" << (shared ? 1.6 : 0.8)
            << "\" fill=\"hsl(" << hue << ",90%,45%)\"";
        if (shared) out << " stroke=\"black\" stroke-width=\"0.4\"";
        out << "/>\n";
    }
    out << "</svg>\n";
    log_info("export-atlas: " + std::to_string(L.n) + " nodes written to " + out_path);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"graph-based boundary segmentation trained from masks"};
    app.require_subcommand(1);

    CommonOpts common;
    std::string data_dir, out_dir, topo_path, ckpt, resume, split_name = "test";
    std::string oracle_dir, landmarks_csv, mask_path, out_path;
    int n = 100, limit = 0, level = 0;
    bool touching = false;
    double noise_sigma = 0.1;

    auto add_common = [&](CLI::App* sub, bool needs_config = true) {
        if (needs_config) sub->add_option("--config", common.config_path, "dataset config JSON")->required();
        sub->add_option("-D,--define", common.overrides, "config override key=value (dotted keys)");
        sub->add_option("--seed", common.seed, "override config seed");
        sub->add_option("--threads", common.threads, "worker threads (1 = reproducible)")
            ->check(CLI::Range(1, 256));
    };

    CLI::App* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
    add_common(gen);
    gen->add_option("--out", out_dir, "output directory")->required();
    gen->add_option("--n", n, "number of samples")->check(CLI::PositiveNumber);
    gen->add_flag("--touching", touching, "two organs sharing a boundary");
    gen->add_option("--noise-sigma", noise_sigma, "image noise std");

    CLI::App* prep = app.add_subcommand("prepare", "contour stats + topology build");
    add_common(prep);
    prep->add_option("--data", data_dir, "dataset directory (manifest.json)")->required();
    prep->add_option("--out", out_dir, "output directory")->required();

    CLI::App* fit = app.add_subcommand("fit", "direct snake fit over a manifest");
    add_common(fit);
    fit->add_option("--data", data_dir, "dataset directory")->required();
    fit->add_option("--topo", topo_path, "topology JSON")->required();
    fit->add_option("--out", out_dir, "output directory")->required();
    fit->add_option("--limit", limit, "fit only the first N samples");

    CLI::App* train = app.add_subcommand("train", "train the population model");
    add_common(train);
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--topo", topo_path, "topology JSON")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--resume", resume, "checkpoint to resume from");

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(ev);
    ev->add_option("--data", data_dir, "dataset directory")->required();
    ev->add_option("--topo", topo_path, "topology JSON")->required();
    ev->add_option("--checkpoint", ckpt, "model checkpoint")->required();
    ev->add_option("--out", out_dir, "output directory")->required();
    ev->add_option("--split", split_name, "train|val|test|all");
    ev->add_option("--oracle-dir", oracle_dir, "directory with oracle_<subject>.csv");

    CLI::App* atlas = app.add_subcommand("export-atlas", "render the landmark graph as SVG");
    atlas->add_option("--topo", topo_path, "topology JSON")->required();
    atlas->add_option("--out", out_path, "output SVG path")->required();
    atlas->add_option("--landmarks", landmarks_csv, "node,x,y CSV for node positions");
    atlas->add_option("--mask", mask_path, "PGM mask drawn behind the graph");
    atlas->add_option("--level", level, "topology level (0 = finest)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_synth(common, out_dir, n, touching, noise_sigma);
        if (prep->parsed()) return cmd_prepare(common, data_dir, out_dir);
        if (fit->parsed()) return cmd_fit(common, data_dir, topo_path, out_dir, limit);
        if (train->parsed()) return cmd_train(common, data_dir, topo_path, out_dir, resume);
        if (ev->parsed()) return cmd_eval(common, data_dir, topo_path, ckpt, out_dir, split_name, oracle_dir);
        if (atlas->parsed()) return cmd_export_atlas(topo_path, out_path, landmarks_csv, mask_path, level);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
