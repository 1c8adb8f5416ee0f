#include "mhg/engine.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

#include "mhg/contours.hpp"
#include "mhg/metrics.hpp"

namespace mhg {

ScheduleState schedule_weights(uint64_t iteration, uint64_t total, double decay_decades) {
    if (total == 0) throw std::runtime_error("schedule: total iterations must be > 0");
    if (iteration > total) throw std::runtime_error("schedule: iteration beyond total");
    const double t = static_cast<double>(iteration) / static_cast<double>(total);
    ScheduleState st;
    st.iteration = iteration;
    st.total_iterations = total;
    st.weights.lambda_c = 10.0;
    st.weights.lambda_p = 1.0;
    st.weights.lambda_k = std::pow(10.0, -6.0 + 3.0 * t);
    st.weights.alpha = std::pow(10.0, -6.0 + 6.0 * std::min(3.0 * t, 1.0));
    st.weights.beta = 300.0 * std::pow(10.0, -decay_decades * t);
    st.weights.gamma = 250.0 * std::pow(10.0, -decay_decades * t);
    return st;
}

void opt_init(OptState& st, const std::vector<Param>& params) {
    st.step = 0;
    st.m.assign(params.size(), {});
    st.v.assign(params.size(), {});
    for (size_t i = 0; i < params.size(); ++i) {
        st.m[i].assign(params[i].size(), 0.0);
        st.v[i].assign(params[i].size(), 0.0);
    }
}

void adam_step(std::vector<Param>& params, OptState& st) {
    if (st.m.size() != params.size()) throw std::runtime_error("adam: state/parameter mismatch");
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (size_t i = 0; i < params.size(); ++i) {
        Param& p = params[i];
        for (size_t k = 0; k < p.value.size(); ++k) {
            const double g = p.grad[k];
            if (!std::isfinite(g)) throw std::runtime_error("adam: non-finite gradient in '" + p.name + "'");
            st.m[i][k] = st.beta1 * st.m[i][k] + (1.0 - st.beta1) * g;
            st.v[i][k] = st.beta2 * st.v[i][k] + (1.0 - st.beta2) * g * g;
            const double mhat = st.m[i][k] / bc1;
            const double vhat = st.v[i][k] / bc2;
            p.value[k] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index) {
    uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream * 0x100000001B3ull + index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

SampleGT make_gt(const Sample& s, const std::vector<int>& organs, int point_cap) {
    SampleGT gt;
    gt.annotated = s.annotated_organs;
    const double scale = std::max(s.mask.h, s.mask.w);
    const auto contours = extract_organ_contours(s.mask, s.annotated_organs);
    for (int organ : s.annotated_organs) {
        if (std::find(organs.begin(), organs.end(), organ) == organs.end())
            throw std::runtime_error("make_gt: sample annotates unconfigured organ " + std::to_string(organ));
        gt.masks[organ] = binarize(s.mask, organ);
        auto it = contours.find(organ);
        if (it == contours.end()) continue;
        const PointList& c = it->second.points;
        PointList pts;
        const int n = static_cast<int>(c.size());
        if (n <= point_cap) {
            pts.reserve(n);
            for (const auto& p : c) pts.push_back({(p.x + 0.5) / scale, (p.y + 0.5) / scale});
        } else {
            pts.reserve(point_cap);
            for (int i = 0; i < point_cap; ++i) {
                const auto& p = c[static_cast<size_t>(i) * n / point_cap];
                pts.push_back({(p.x + 0.5) / scale, (p.y + 0.5) / scale});
            }
        }
        gt.points[organ] = std::move(pts);
    }
    return gt;
}

ImageGrid mask_as_image(const LabelMask& m, const std::vector<int>& organ_labels) {
    int max_label = 1;
    for (int l : organ_labels) max_label = std::max(max_label, l);
    ImageGrid g(m.h, m.w, 0.0);
    for (size_t i = 0; i < m.v.size(); ++i) g.v[i] = static_cast<double>(m.v[i]) / max_label;
    return g;
}

namespace {

// polygon of an organ cycle in pixel coordinates
PointList cycle_polygon(const PointList& P, const std::vector<int>& cycle, double scale) {
    PointList poly;
    poly.reserve(cycle.size());
    for (int idx : cycle) poly.push_back({P[idx].x * scale, P[idx].y * scale});
    return poly;
}

}  // namespace

SampleLoss compute_sample_loss(const Model& model, const GraphTopology& topo, const SampleGT& gt,
                               const ImageGrid& image, const std::vector<double>& eps,
                               const LossWeights& w, const DatasetConfig& cfg) {
    SampleLoss out;
    out.f = model.forward(image, eps);
    const int R = model.levels();
    const double scale = model.input_size();

    out.chamfer_levels.resize(R);
    ChamferResult chamfer_sum;
    chamfer_sum.dP = PointList();
    for (int l = 0; l < R; ++l) {
        out.chamfer_levels[l] =
            chamfer_loss(out.f.P[l], topo.level[l].organ_cycles, gt.points, gt.annotated);
        chamfer_sum.value += out.chamfer_levels[l].value;
    }
    chamfer_sum.dP = out.chamfer_levels[0].dP;

    PixelResult pixel_combined;
    if (cfg.train.use_raster_loss) {
        std::map<int, ImageGrid> soft;
        for (const auto& [organ, cycle] : topo.level[0].organ_cycles) {
            const PointList poly = cycle_polygon(out.f.P[0], cycle, scale);
            SoftRaster r = soft_rasterize(poly, model.input_size(), model.input_size(), cfg.model.raster_sigma_px);
            soft[organ] = r.values;
            out.rasters[organ] = std::move(r);
        }
        out.pixel_raster = pixel_loss(soft, gt.masks, gt.annotated);
    }
    if (model.dual()) out.pixel_aux = pixel_loss(out.f.aux, gt.masks, gt.annotated);
    pixel_combined = out.pixel_raster;
    pixel_combined.value += out.pixel_aux.value;

    const KlResult kl = kl_loss(out.f.mu, out.f.logvar);
    const EdgeResult edge = edge_regularizers(out.f.P[0], topo.edge_tensor);

    out.bundle = total_loss(chamfer_sum, pixel_combined, kl, edge, w);

    ModelGrads& g = out.grads;
    g.dP.resize(R);
    g.dP[0] = out.bundle.dP;  // lambda_c * finest chamfer + edge terms
    for (int l = 1; l < R; ++l) {
        g.dP[l].assign(out.f.P[l].size(), Vec2{});
        for (size_t i = 0; i < g.dP[l].size(); ++i) g.dP[l][i] = out.chamfer_levels[l].dP[i] * w.lambda_c;
    }
    if (cfg.train.use_raster_loss) {
        for (const auto& [organ, r] : out.rasters) {
            auto it = out.pixel_raster.dsoft.find(organ);
            if (it == out.pixel_raster.dsoft.end()) continue;
            ImageGrid up = it->second;
            for (double& u : up.v) u *= w.lambda_p;
            const auto& cycle = topo.level[0].organ_cycles.at(organ);
            const PointList poly = cycle_polygon(out.f.P[0], cycle, scale);
            const PointList dpoly = soft_rasterize_backward(r, poly, up);
            for (size_t k = 0; k < cycle.size(); ++k) g.dP[0][cycle[k]] += dpoly[k] * scale;
        }
    }
    g.dmu.assign(out.f.mu.size(), 0.0);
    g.dlogvar.assign(out.f.logvar.size(), 0.0);
    for (size_t i = 0; i < g.dmu.size(); ++i) {
        g.dmu[i] = w.lambda_k * kl.dmu[i];
        g.dlogvar[i] = w.lambda_k * kl.dlogvar[i];
    }
    if (model.dual()) {
        for (const auto& [organ, ds] : out.pixel_aux.dsoft) {
            ImageGrid d = ds;
            for (double& u : d.v) u *= w.lambda_p;
            g.daux[organ] = std::move(d);
        }
    }
    return out;
}

SnakeFitResult snake_fit(const LabelMask& target, const GraphTopology& topo, const DatasetConfig& cfg) {
    const int H = target.h, W = target.w;
    const double scale = std::max(H, W);
    const LevelTopology& fine = topo.level[0];

    // circle init per organ at the mask centroid
    PointList coords(fine.n, Vec2{0.5, 0.5});
    std::vector<int> present;
    for (int organ : topo.organ_labels) {
        double cx = 0.0, cy = 0.0;
        size_t area = 0;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                if (target.at(y, x) == organ) {
                    cx += x + 0.5;
                    cy += y + 0.5;
                    ++area;
                }
        const auto& cycle = fine.organ_cycles.at(organ);
        if (area == 0) {
            log_info("snake_fit: organ " + std::to_string(organ) + " absent from target, landmarks stay at center");
            for (int idx : cycle) coords[idx] = {0.5, 0.5};
            continue;
        }
        present.push_back(organ);
        cx /= static_cast<double>(area);
        cy /= static_cast<double>(area);
        const double r = std::sqrt(static_cast<double>(area) / M_PI);
        const size_t m = cycle.size();
        for (size_t k = 0; k < m; ++k) {
            const double th = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(m);
            coords[cycle[k]] = {(cx + r * std::cos(th)) / scale, (cy + r * std::sin(th)) / scale};
        }
    }
    if (present.empty()) throw std::runtime_error("snake_fit: target contains no configured organ");

    Sample s;
    s.mask = target;
    s.annotated_organs = present;
    const SampleGT gt = make_gt(s, topo.organ_labels);

    // Adam directly on the flat coordinate vector
    std::vector<Param> flat(1);
    flat[0].name = "coords";
    flat[0].shape = {fine.n, 2};
    flat[0].value.resize(static_cast<size_t>(fine.n) * 2);
    flat[0].grad.assign(flat[0].value.size(), 0.0);
    for (int i = 0; i < fine.n; ++i) {
        flat[0].value[2 * i] = coords[i].x;
        flat[0].value[2 * i + 1] = coords[i].y;
    }
    OptState opt;
    opt.lr = cfg.fit.learning_rate;
    opt_init(opt, flat);

    SnakeFitResult res;
    const int iters = cfg.fit.iterations;
    for (int it = 0; it < iters; ++it) {
        const LossWeights w = schedule_weights(it, iters, cfg.train.beta_gamma_decay_decades).weights;
        PointList P(fine.n);
        for (int i = 0; i < fine.n; ++i) P[i] = {flat[0].value[2 * i], flat[0].value[2 * i + 1]};

        const ChamferResult ch = chamfer_loss(P, fine.organ_cycles, gt.points, present);
        std::map<int, ImageGrid> soft;
        std::map<int, SoftRaster> rasters;
        for (int organ : present) {
            const auto& cycle = fine.organ_cycles.at(organ);
            SoftRaster r = soft_rasterize(cycle_polygon(P, cycle, scale), H, W, cfg.model.raster_sigma_px);
            soft[organ] = r.values;
            rasters[organ] = std::move(r);
        }
        const PixelResult px = pixel_loss(soft, gt.masks, present);
        const EdgeResult edge = edge_regularizers(P, topo.edge_tensor);
        const KlResult kl;  // no latent
        const LossBundle bundle = total_loss(ch, px, kl, edge, w);
        res.loss_history.push_back(bundle.total);

        PointList dP = bundle.dP;
        for (int organ : present) {
            auto it2 = px.dsoft.find(organ);
            if (it2 == px.dsoft.end()) continue;
            ImageGrid up = it2->second;
            for (double& u : up.v) u *= w.lambda_p;
            const auto& cycle = fine.organ_cycles.at(organ);
            const PointList dpoly =
                soft_rasterize_backward(rasters.at(organ), cycle_polygon(P, cycle, scale), up);
            for (size_t k = 0; k < cycle.size(); ++k) dP[cycle[k]] += dpoly[k] * scale;
        }
        for (int i = 0; i < fine.n; ++i) {
            flat[0].grad[2 * i] = dP[i].x;
            flat[0].grad[2 * i + 1] = dP[i].y;
        }
        adam_step(flat, opt);
        std::fill(flat[0].grad.begin(), flat[0].grad.end(), 0.0);
    }

    res.landmarks.resize(fine.n);
    for (int i = 0; i < fine.n; ++i) res.landmarks[i] = {flat[0].value[2 * i], flat[0].value[2 * i + 1]};
    return res;
}

namespace {

double validate_chamfer(const Model& model, const GraphTopology& topo, const std::vector<Sample>& dataset,
                        const std::vector<int>& idx, const std::vector<SampleGT>& gts,
                        const DatasetConfig& cfg) {
    if (idx.empty()) return 0.0;
    const std::vector<double> eps0(cfg.model.latent_dim, 0.0);
    double sum = 0.0;
    for (int i : idx) {
        const ImageGrid& img =
            cfg.train.mask_input ? mask_as_image(dataset[i].mask, cfg.organ_labels) : dataset[i].image;
        const ModelForward f = model.forward(img, eps0);
        sum += chamfer_loss(f.P[0], topo.level[0].organ_cycles, gts[i].points, gts[i].annotated).value;
    }
    return sum / static_cast<double>(idx.size());
}

std::string loss_breakdown(const LossBundle& b) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "chamfer=%g pixel=%g kld=%g uniform=%g elastic=%g curvature=%g total=%g",
                  b.chamfer, b.pixel, b.kld, b.uniform, b.elastic, b.curvature, b.total);
    return buf;
}

}  // namespace

TrainResult train_population(const std::vector<Sample>& dataset, Model& model, const GraphTopology& topo,
                             const DatasetConfig& cfg, const std::string& out_dir,
                             const std::string& resume_path) {
    if (dataset.empty()) throw std::runtime_error("train: empty dataset");
    for (const auto& s : dataset)
        if (s.mask.h != cfg.input_size || s.mask.w != cfg.input_size)
            throw std::runtime_error("train: sample '" + s.subject_id + "' not at input size");

    const uint64_t total = static_cast<uint64_t>(cfg.train.iterations);
    const uint64_t ramp = static_cast<uint64_t>(total * cfg.train.batch_ramp_fraction);
    const uint64_t cfg_h = config_hash(cfg);
    const uint64_t topo_h = topology_hash(topo);
    const bool augment_on = cfg.aug_flip_h || cfg.aug_flip_v || cfg.aug_rotate || cfg.aug_transpose;

    TrainResult res;
    res.split = dataset.size() > 1 ? split_subjects(dataset, cfg.train.test_fraction, cfg.seed)
                                   : SplitResult{{0}, {}, {}};

    std::vector<SampleGT> gts(dataset.size());
    for (size_t i = 0; i < dataset.size(); ++i) gts[i] = make_gt(dataset[i], cfg.organ_labels);

    OptState opt;
    opt.lr = cfg.train.learning_rate;
    opt_init(opt, model.params());
    uint64_t start_iter = 0;
    res.best_val = std::numeric_limits<double>::infinity();

    if (!resume_path.empty()) {
        CheckpointExtra extra;
        if (!load_checkpoint(resume_path, model.params(), cfg_h, topo_h, &extra))
            throw std::runtime_error("train: checkpoint '" + resume_path + "' carries no optimizer state");
        if (extra.total_iterations != total) throw std::runtime_error("train: checkpoint total iterations differ");
        opt.step = extra.adam_step;
        start_iter = extra.iteration;
        for (const auto& [name, block] : extra.blocks) {
            if (name == "best_val") res.best_val = block.at(0);
            if (name == "best_iter") res.best_iter = static_cast<uint64_t>(block.at(0));
            if (name.rfind("adam.m.", 0) == 0) {
                Param* p = model.find_param(name.substr(7));
                if (!p) throw std::runtime_error("train: unknown moment block '" + name + "'");
                opt.m[&*p - model.params().data()] = block;
            }
            if (name.rfind("adam.v.", 0) == 0) {
                Param* p = model.find_param(name.substr(7));
                if (!p) throw std::runtime_error("train: unknown moment block '" + name + "'");
                opt.v[&*p - model.params().data()] = block;
            }
        }
    }

    auto save_state = [&](const std::string& path, uint64_t next_iter) {
        CheckpointExtra extra;
        extra.adam_step = opt.step;
        extra.iteration = next_iter;
        extra.total_iterations = total;
        extra.blocks.push_back({"best_val", {res.best_val}});
        extra.blocks.push_back({"best_iter", {static_cast<double>(res.best_iter)}});
        const auto& ps = model.params();
        for (size_t i = 0; i < ps.size(); ++i) {
            extra.blocks.push_back({"adam.m." + ps[i].name, opt.m[i]});
            extra.blocks.push_back({"adam.v." + ps[i].name, opt.v[i]});
        }
        save_checkpoint(path, model.params(), cfg_h, topo_h, &extra);
    };

    std::ofstream log_csv;
    if (!out_dir.empty()) {
        log_csv.open(out_dir + "/train_log.csv", start_iter == 0 ? std::ios::trunc : std::ios::app);
        if (!log_csv) throw std::runtime_error("train: cannot write log in '" + out_dir + "'");
        if (start_iter == 0)
            log_csv << "iteration,chamfer,pixel,kld,uniform,elastic,curvature,total,"
                       "lambda_c,lambda_p,lambda_k,alpha,beta,gamma,batch,wall_ms\n";
    }

    const auto& train_idx = res.split.train;
    for (uint64_t it = start_iter; it < total; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        const LossWeights w = schedule_weights(it, total, cfg.train.beta_gamma_decay_decades).weights;
        const int batch = it < ramp ? 1 : cfg.train.batch_size;

        Rng rng(derive_seed(cfg.seed, 1, it));
        model.zero_grad();
        IterLog row;
        row.iteration = it;
        for (int b = 0; b < batch; ++b) {
            const int si = train_idx[rng.uniform_int(train_idx.size())];
            const Sample* sp = &dataset[si];
            Sample aug_storage;
            SampleGT gt_storage;
            const SampleGT* gt = &gts[si];
            if (augment_on) {
                aug_storage = augment(dataset[si], cfg, rng);
                gt_storage = make_gt(aug_storage, cfg.organ_labels);
                sp = &aug_storage;
                gt = &gt_storage;
            }
            std::vector<double> eps(cfg.model.latent_dim);
            for (double& e : eps) e = rng.normal();
            const ImageGrid& img = cfg.train.mask_input ? mask_as_image(sp->mask, cfg.organ_labels) : sp->image;
            const SampleLoss sl = compute_sample_loss(model, topo, *gt, img, eps, w, cfg);
            if (!std::isfinite(sl.bundle.total))
                throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(it) + " (" +
                                         loss_breakdown(sl.bundle) + ")");
            model.backward(sl.f, sl.grads);
            row.chamfer += sl.bundle.chamfer;
            row.pixel += sl.bundle.pixel;
            row.kld += sl.bundle.kld;
            row.uniform += sl.bundle.uniform;
            row.elastic += sl.bundle.elastic;
            row.curvature += sl.bundle.curvature;
            row.total += sl.bundle.total;
        }
        const double inv_b = 1.0 / batch;
        for (auto& p : model.params())
            for (double& g : p.grad) g *= inv_b;
        adam_step(model.params(), opt);
        row.chamfer *= inv_b;
        row.pixel *= inv_b;
        row.kld *= inv_b;
        row.uniform *= inv_b;
        row.elastic *= inv_b;
        row.curvature *= inv_b;
        row.total *= inv_b;
        row.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        res.log.push_back(row);
        if (log_csv)
            log_csv << it << ',' << row.chamfer << ',' << row.pixel << ',' << row.kld << ',' << row.uniform << ','
                    << row.elastic << ',' << row.curvature << ',' << row.total << ',' << w.lambda_c << ','
                    << w.lambda_p << ',' << w.lambda_k << ',' << w.alpha << ',' << w.beta << ',' << w.gamma << ','
                    << batch << ',' << row.wall_ms << '\n';

        const bool last = it + 1 == total;
        if ((it + 1) % static_cast<uint64_t>(cfg.train.val_interval) == 0 || last) {
            const auto& vidx = res.split.val.empty() ? res.split.train : res.split.val;
            const double val = validate_chamfer(model, topo, dataset, vidx, gts, cfg);
            res.val_history.push_back({it + 1, val});
            if (val < res.best_val) {
                res.best_val = val;
                res.best_iter = it + 1;
                if (!out_dir.empty()) save_state(out_dir + "/best.bin", it + 1);
            }
            log_info("iter " + std::to_string(it + 1) + "/" + std::to_string(total) +
                     " val_chamfer=" + std::to_string(val));
        }
    }
    if (!out_dir.empty()) save_state(out_dir + "/last.bin", total);
    return res;
}

std::vector<EvalRow> evaluate_samples(const Model& model, const GraphTopology& topo,
                                      const std::vector<Sample>& samples, const DatasetConfig& cfg,
                                      std::vector<PointList>* pred_px) {
    const std::vector<double> eps0(cfg.model.latent_dim, 0.0);
    const double scale = model.input_size();
    std::vector<EvalRow> rows;
    if (pred_px) pred_px->clear();
    for (const auto& s : samples) {
        const ImageGrid& img = cfg.train.mask_input ? mask_as_image(s.mask, cfg.organ_labels) : s.image;
        const ModelForward f = model.forward(img, eps0);
        if (pred_px) {
            PointList px(f.P[0].size());
            for (size_t i = 0; i < px.size(); ++i) px[i] = f.P[0][i] * scale;
            pred_px->push_back(std::move(px));
        }
        for (const auto& [organ, cycle] : topo.level[0].organ_cycles) {
            if (std::find(s.annotated_organs.begin(), s.annotated_organs.end(), organ) ==
                s.annotated_organs.end())
                continue;
            const LabelMask pred = hard_rasterize(cycle_polygon(f.P[0], cycle, scale), s.mask.h, s.mask.w);
            const LabelMask gt = binarize(s.mask, organ);
            const BoundaryDistances bd = boundary_distances(pred, gt);
            rows.push_back({s.subject_id, organ, dice(pred, gt), bd.hausdorff, bd.assd});
        }
    }
    return rows;
}

}  // namespace mhg
