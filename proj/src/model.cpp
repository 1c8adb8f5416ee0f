#include "mhg/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace mhg {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::MatrixXd scaled_laplacian(const LevelTopology& l) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(l.n, l.n);
    for (const auto& [u, v] : l.edges) {
        A(u, v) = 1.0;
        A(v, u) = 1.0;
    }
    Eigen::VectorXd dinv(l.n);
    for (int i = 0; i < l.n; ++i) {
        const double d = A.row(i).sum();
        dinv(i) = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
    }
    // L~ = 2L/lambda_max - I with lambda_max = 2 reduces to -D^{-1/2} A D^{-1/2}
    return -(dinv.asDiagonal() * A * dinv.asDiagonal());
}

namespace {

void lrelu_inplace(std::vector<double>& v, double slope) {
    for (double& x : v)
        if (x < 0.0) x *= slope;
}

Eigen::MatrixXd lrelu_mat(const Eigen::MatrixXd& m, double slope) {
    return m.unaryExpr([slope](double x) { return x < 0.0 ? slope * x : x; });
}

}  // namespace

Param& Model::P(const std::string& name) {
    auto it = param_index_.find(name);
    if (it == param_index_.end()) throw std::logic_error("model: unknown param '" + name + "'");
    return params_[it->second];
}

const Param& Model::P(const std::string& name) const {
    auto it = param_index_.find(name);
    if (it == param_index_.end()) throw std::logic_error("model: unknown param '" + name + "'");
    return params_[it->second];
}

Param* Model::find_param(const std::string& name) {
    auto it = param_index_.find(name);
    return it == param_index_.end() ? nullptr : &params_[it->second];
}

void Model::zero_grad() {
    for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

Model::Model(const DatasetConfig& cfg, const GraphTopology& topo, uint64_t init_seed)
    : cfg_(cfg.model), size_(cfg.input_size) {
    R_ = topo.levels();
    n_stages_ = static_cast<int>(cfg_.encoder_widths.size());
    if (n_stages_ < R_) throw std::runtime_error("model: need at least one encoder stage per level");
    organ_labels_ = topo.organ_labels;
    n_organs_ = static_cast<int>(organ_labels_.size());
    for (const auto& l : topo.level) {
        n_nodes_.push_back(l.n);
        lap_.push_back(scaled_laplacian(l));
    }
    for (const auto& U : topo.up) {
        int fine_n = 0;
        for (const auto& t : U) fine_n = std::max(fine_n, t.row + 1);
        std::vector<int> parent(fine_n, -1);
        for (const auto& t : U) parent[t.row] = t.col;
        up_parent_.push_back(std::move(parent));
    }
    int side = size_;
    for (int i = 0; i < n_stages_; ++i) {
        side /= 2;
        if (side < 2) throw std::runtime_error("model: too many encoder stages for input size");
    }

    const int F = cfg_.cheb_width;
    cheb_in_.assign(R_, F);
    for (int l = R_ - 1; l >= 1; --l) cheb_in_[l - 1] = F + cfg_.encoder_widths[igsc_stage(l)] + 2;

    Rng rng(init_seed);
    auto add = [&](const std::string& name, std::vector<int> shape, double scale, double bias_fill = 0.0) {
        Param p;
        p.name = name;
        p.shape = std::move(shape);
        size_t n = 1;
        for (int d : p.shape) n *= static_cast<size_t>(d);
        p.value.resize(n);
        p.grad.assign(n, 0.0);
        if (scale == 0.0)
            std::fill(p.value.begin(), p.value.end(), bias_fill);
        else
            for (double& v : p.value) v = scale * rng.normal();
        param_index_[p.name] = static_cast<int>(params_.size());
        params_.push_back(std::move(p));
    };

    int in_c = 1;
    for (int i = 0; i < n_stages_; ++i) {
        const int oc = cfg_.encoder_widths[i];
        add("enc" + std::to_string(i) + ".w", {oc, in_c, 3, 3}, std::sqrt(2.0 / (in_c * 9)));
        add("enc" + std::to_string(i) + ".b", {oc}, 0.0);
        in_c = oc;
    }
    const int flat = cfg_.encoder_widths.back() * (size_ >> n_stages_) * (size_ >> n_stages_);
    const int dz = cfg_.latent_dim;
    add("fc_mu.w", {dz, flat}, std::sqrt(1.0 / flat));
    add("fc_mu.b", {dz}, 0.0);
    add("fc_logvar.w", {dz, flat}, std::sqrt(1.0 / flat));
    add("fc_logvar.b", {dz}, 0.0);
    const int ncoarse = n_nodes_[R_ - 1];
    add("fc_z.w", {ncoarse * F, dz}, std::sqrt(2.0 / dz));
    add("fc_z.b", {ncoarse * F}, 0.0);

    for (int l = R_ - 1; l >= 0; --l) {
        int in = cheb_in_[l];
        for (int j = 0; j < cfg_.cheb_layers; ++j) {
            const std::string base = "cheb" + std::to_string(l) + "_" + std::to_string(j);
            add(base + ".theta", {cfg_.cheb_order, in, F}, std::sqrt(2.0 / (cfg_.cheb_order * in)));
            add(base + ".b", {F}, 0.0);
            in = F;
        }
        add("readout" + std::to_string(l) + ".w", {2, F}, 0.01 * std::sqrt(1.0 / F));
        add("readout" + std::to_string(l) + ".b", {2}, 0.0, 0.5);
    }

    if (cfg_.dual) {
        const int wn = cfg_.encoder_widths[n_stages_ - 1];
        add("aux0.w", {wn, wn, 3, 3}, std::sqrt(2.0 / (wn * 9)));
        add("aux0.b", {wn}, 0.0);
        for (int j = 1; j < n_stages_; ++j) {
            const int skip = cfg_.encoder_widths[n_stages_ - 1 - j];
            const int prev = cfg_.encoder_widths[n_stages_ - j];
            add("aux" + std::to_string(j) + ".w", {skip, prev + skip, 3, 3}, std::sqrt(2.0 / ((prev + skip) * 9)));
            add("aux" + std::to_string(j) + ".b", {skip}, 0.0);
        }
        const int w0 = cfg_.encoder_widths[0];
        add("aux_head.w", {n_organs_, w0, 3, 3}, std::sqrt(2.0 / (w0 * 9)));
        add("aux_head.b", {n_organs_}, 0.0);
    }
}

ChebCache cheb_forward(const Eigen::MatrixXd& lap, const Eigen::MatrixXd& X, const Param& theta, const Param& b) {
    const int K = theta.shape[0], in = theta.shape[1], out = theta.shape[2];
    if (X.cols() != in) throw std::logic_error("cheb_forward: input width mismatch");
    ChebCache cache;
    cache.Z.reserve(K);
    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(X.rows(), out);
    for (int k = 0; k < K; ++k) {
        if (k == 0)
            cache.Z.push_back(X);
        else if (k == 1)
            cache.Z.push_back(lap * X);
        else
            cache.Z.push_back(2.0 * (lap * cache.Z[k - 1]) - cache.Z[k - 2]);
        Eigen::Map<const RowMat> Th(theta.value.data() + static_cast<size_t>(k) * in * out, in, out);
        Y.noalias() += cache.Z[k] * Th;
    }
    for (int c = 0; c < out; ++c) Y.col(c).array() += b.value[c];
    cache.pre = std::move(Y);
    return cache;
}

Eigen::MatrixXd cheb_backward(const Eigen::MatrixXd& lap, const ChebCache& cache, const Eigen::MatrixXd& dY,
                              Param& theta, Param& b) {
    const int K = theta.shape[0], in = theta.shape[1], out = theta.shape[2];
    for (int c = 0; c < out; ++c) b.grad[c] += dY.col(c).sum();
    Eigen::MatrixXd dX = Eigen::MatrixXd::Zero(dY.rows(), in);
    Eigen::MatrixXd Wk, Wk1, Wk2;
    for (int k = 0; k < K; ++k) {
        // T_k is symmetric, so T_k(dY) appears in both dTheta and dX terms
        if (k == 0)
            Wk = dY;
        else if (k == 1) {
            Wk1 = std::move(Wk);
            Wk = lap * Wk1;
        } else {
            Wk2 = std::move(Wk1);
            Wk1 = std::move(Wk);
            Wk = 2.0 * (lap * Wk1) - Wk2;
        }
        Eigen::Map<RowMat> dTh(theta.grad.data() + static_cast<size_t>(k) * in * out, in, out);
        dTh += cache.Z[k].transpose() * dY;
        Eigen::Map<const RowMat> Th(theta.value.data() + static_cast<size_t>(k) * in * out, in, out);
        dX.noalias() += Wk * Th.transpose();
    }
    return dX;
}

void igsc_sample(const Tensor3& map, const PointList& P, Eigen::MatrixXd& sampled, std::vector<IgscCache>& cache) {
    const int N = static_cast<int>(P.size()), C = map.c;
    sampled.resize(N, C);
    cache.resize(N);
    for (int n = 0; n < N; ++n) {
        IgscCache& ic = cache[n];
        double xf = P[n].x * map.w - 0.5;
        double yf = P[n].y * map.h - 0.5;
        ic.grad_x = xf > 0.0 && xf < map.w - 1;
        ic.grad_y = yf > 0.0 && yf < map.h - 1;
        xf = std::clamp(xf, 0.0, static_cast<double>(map.w - 1));
        yf = std::clamp(yf, 0.0, static_cast<double>(map.h - 1));
        ic.x0 = std::min(static_cast<int>(xf), map.w - 2);
        ic.y0 = std::min(static_cast<int>(yf), map.h - 2);
        ic.fx = xf - ic.x0;
        ic.fy = yf - ic.y0;
        for (int c = 0; c < C; ++c) {
            const double v00 = map.at(c, ic.y0, ic.x0), v01 = map.at(c, ic.y0, ic.x0 + 1);
            const double v10 = map.at(c, ic.y0 + 1, ic.x0), v11 = map.at(c, ic.y0 + 1, ic.x0 + 1);
            sampled(n, c) = v00 * (1 - ic.fx) * (1 - ic.fy) + v01 * ic.fx * (1 - ic.fy) + v10 * (1 - ic.fx) * ic.fy +
                            v11 * ic.fx * ic.fy;
        }
    }
}

PointList igsc_backward(const Tensor3& map, const std::vector<IgscCache>& cache, const Eigen::MatrixXd& dsampled,
                        Tensor3& dmap) {
    const int N = static_cast<int>(cache.size()), C = map.c;
    PointList dP(N, Vec2{});
    for (int n = 0; n < N; ++n) {
        const IgscCache& ic = cache[n];
        double dxf = 0.0, dyf = 0.0;
        for (int c = 0; c < C; ++c) {
            const double gs = dsampled(n, c);
            if (gs == 0.0) continue;
            const double v00 = map.at(c, ic.y0, ic.x0), v01 = map.at(c, ic.y0, ic.x0 + 1);
            const double v10 = map.at(c, ic.y0 + 1, ic.x0), v11 = map.at(c, ic.y0 + 1, ic.x0 + 1);
            dmap.at(c, ic.y0, ic.x0) += gs * (1 - ic.fx) * (1 - ic.fy);
            dmap.at(c, ic.y0, ic.x0 + 1) += gs * ic.fx * (1 - ic.fy);
            dmap.at(c, ic.y0 + 1, ic.x0) += gs * (1 - ic.fx) * ic.fy;
            dmap.at(c, ic.y0 + 1, ic.x0 + 1) += gs * ic.fx * ic.fy;
            dxf += gs * ((v01 - v00) * (1 - ic.fy) + (v11 - v10) * ic.fy);
            dyf += gs * ((v10 - v00) * (1 - ic.fx) + (v11 - v01) * ic.fx);
        }
        if (ic.grad_x) dP[n].x = dxf * map.w;
        if (ic.grad_y) dP[n].y = dyf * map.h;
    }
    return dP;
}

namespace {

Tensor3 conv_forward(const Param& w, const Param& b, const Tensor3& in, int stride) {
    const int oc = w.shape[0], ic = w.shape[1];
    const int oh = in.h / stride, ow = in.w / stride;
    Tensor3 out(oc, oh, ow);
    for (int o = 0; o < oc; ++o)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double sum = b.value[o];
                for (int c = 0; c < ic; ++c)
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = oy * stride + ky - 1;
                        if (iy < 0 || iy >= in.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ox * stride + kx - 1;
                            if (ix < 0 || ix >= in.w) continue;
                            sum += w.value[((static_cast<size_t>(o) * ic + c) * 3 + ky) * 3 + kx] * in.at(c, iy, ix);
                        }
                    }
                out.at(o, oy, ox) = sum;
            }
    return out;
}

void conv_backward(Param& w, Param& b, const Tensor3& in, const Tensor3& dout, int stride, Tensor3* din) {
    const int oc = w.shape[0], ic = w.shape[1];
    for (int o = 0; o < oc; ++o)
        for (int oy = 0; oy < dout.h; ++oy)
            for (int ox = 0; ox < dout.w; ++ox) {
                const double g = dout.at(o, oy, ox);
                if (g == 0.0) continue;
                b.grad[o] += g;
                for (int c = 0; c < ic; ++c)
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = oy * stride + ky - 1;
                        if (iy < 0 || iy >= in.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ox * stride + kx - 1;
                            if (ix < 0 || ix >= in.w) continue;
                            const size_t wi = ((static_cast<size_t>(o) * ic + c) * 3 + ky) * 3 + kx;
                            w.grad[wi] += g * in.at(c, iy, ix);
                            if (din) din->at(c, iy, ix) += g * w.value[wi];
                        }
                    }
            }
}

std::vector<double> dense_forward(const Param& w, const Param& b, const std::vector<double>& x) {
    const int out = w.shape[0], in = w.shape[1];
    std::vector<double> y(out);
    for (int o = 0; o < out; ++o) {
        double sum = b.value[o];
        const double* row = w.value.data() + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) sum += row[i] * x[i];
        y[o] = sum;
    }
    return y;
}

void dense_backward(Param& w, Param& b, const std::vector<double>& x, const std::vector<double>& dy,
                    std::vector<double>* dx) {
    const int out = w.shape[0], in = w.shape[1];
    for (int o = 0; o < out; ++o) {
        const double g = dy[o];
        if (g == 0.0) continue;
        b.grad[o] += g;
        double* wrow = w.grad.data() + static_cast<size_t>(o) * in;
        const double* vrow = w.value.data() + static_cast<size_t>(o) * in;
        for (int i = 0; i < in; ++i) {
            wrow[i] += g * x[i];
            if (dx) (*dx)[i] += g * vrow[i];
        }
    }
}

Tensor3 nn_upsample(const Tensor3& in) {
    Tensor3 out(in.c, in.h * 2, in.w * 2);
    for (int c = 0; c < in.c; ++c)
        for (int y = 0; y < out.h; ++y)
            for (int x = 0; x < out.w; ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
    return out;
}

void nn_upsample_backward(const Tensor3& dout, Tensor3& din) {
    for (int c = 0; c < din.c; ++c)
        for (int y = 0; y < dout.h; ++y)
            for (int x = 0; x < dout.w; ++x) din.at(c, y / 2, x / 2) += dout.at(c, y, x);
}

}  // namespace

ModelForward Model::forward(const ImageGrid& image, const std::vector<double>& eps) const {
    if (image.h != size_ || image.w != size_) throw std::runtime_error("model: input size mismatch");
    if (static_cast<int>(eps.size()) != cfg_.latent_dim) throw std::runtime_error("model: eps size mismatch");
    ModelForward f;
    f.input = Tensor3(1, size_, size_);
    f.input.v = image.v;

    const Tensor3* cur = &f.input;
    for (int i = 0; i < n_stages_; ++i) {
        f.enc_pre.push_back(conv_forward(P("enc" + std::to_string(i) + ".w"), P("enc" + std::to_string(i) + ".b"), *cur, 2));
        Tensor3 act = f.enc_pre.back();
        lrelu_inplace(act.v, cfg_.leaky_slope);
        f.enc_act.push_back(std::move(act));
        cur = &f.enc_act.back();
    }
    f.flat = cur->v;
    f.mu = dense_forward(P("fc_mu.w"), P("fc_mu.b"), f.flat);
    f.logvar = dense_forward(P("fc_logvar.w"), P("fc_logvar.b"), f.flat);
    f.eps = eps;
    f.z.resize(cfg_.latent_dim);
    for (int i = 0; i < cfg_.latent_dim; ++i) f.z[i] = f.mu[i] + std::exp(0.5 * f.logvar[i]) * eps[i];

    if (cfg_.dual) {
        f.aux_in.push_back(f.enc_act.back());
        f.aux_pre.push_back(conv_forward(P("aux0.w"), P("aux0.b"), f.aux_in[0], 1));
        Tensor3 a = f.aux_pre[0];
        lrelu_inplace(a.v, cfg_.leaky_slope);
        f.aux_act.push_back(std::move(a));
        for (int j = 1; j < n_stages_; ++j) {
            const Tensor3 up = nn_upsample(f.aux_act[j - 1]);
            const Tensor3& skip = f.enc_act[n_stages_ - 1 - j];
            Tensor3 cat(up.c + skip.c, up.h, up.w);
            std::copy(up.v.begin(), up.v.end(), cat.v.begin());
            std::copy(skip.v.begin(), skip.v.end(), cat.v.begin() + up.v.size());
            f.aux_in.push_back(std::move(cat));
            f.aux_pre.push_back(conv_forward(P("aux" + std::to_string(j) + ".w"), P("aux" + std::to_string(j) + ".b"),
                                             f.aux_in[j], 1));
            Tensor3 act = f.aux_pre[j];
            lrelu_inplace(act.v, cfg_.leaky_slope);
            f.aux_act.push_back(std::move(act));
        }
        f.aux_in.push_back(nn_upsample(f.aux_act[n_stages_ - 1]));
        f.aux_logits = conv_forward(P("aux_head.w"), P("aux_head.b"), f.aux_in[n_stages_], 1);
        for (int k = 0; k < n_organs_; ++k) {
            ImageGrid s(size_, size_, 0.0);
            for (int y = 0; y < size_; ++y)
                for (int x = 0; x < size_; ++x) s.at(y, x) = 1.0 / (1.0 + std::exp(-f.aux_logits.at(k, y, x)));
            f.aux[organ_labels_[k]] = std::move(s);
        }
    }

    const int F = cfg_.cheb_width;
    f.level.resize(R_);
    f.P.resize(R_);
    {
        const std::vector<double> x0 = dense_forward(P("fc_z.w"), P("fc_z.b"), f.z);
        Eigen::MatrixXd X(n_nodes_[R_ - 1], F);
        for (int n = 0; n < n_nodes_[R_ - 1]; ++n)
            for (int c = 0; c < F; ++c) X(n, c) = x0[static_cast<size_t>(n) * F + c];
        f.level[R_ - 1].X_in = std::move(X);
    }

    for (int l = R_ - 1; l >= 0; --l) {
        LevelForward& L = f.level[l];
        Eigen::MatrixXd X = L.X_in;
        for (int j = 0; j < cfg_.cheb_layers; ++j) {
            const std::string base = "cheb" + std::to_string(l) + "_" + std::to_string(j);
            ChebCache cache = cheb_forward(lap_[l], X, P(base + ".theta"), P(base + ".b"));
            X = lrelu_mat(cache.pre, cfg_.leaky_slope);
            L.cheb.push_back(std::move(cache));
        }
        L.X_out = X;

        const Param& rw = P("readout" + std::to_string(l) + ".w");
        const Param& rb = P("readout" + std::to_string(l) + ".b");
        L.P.resize(n_nodes_[l]);
        for (int n = 0; n < n_nodes_[l]; ++n) {
            double px = rb.value[0], py = rb.value[1];
            for (int c = 0; c < F; ++c) {
                px += rw.value[c] * X(n, c);
                py += rw.value[static_cast<size_t>(F) + c] * X(n, c);
            }
            L.P[n] = {px, py};
        }
        f.P[l] = L.P;

        if (l > 0) {
            const Tensor3& map = cfg_.dual ? f.aux_act[igsc_aux(l)] : f.enc_act[igsc_stage(l)];
            const int C = map.c;
            igsc_sample(map, L.P, L.sampled, L.igsc);
            // concat [X_out | sampled | P], then unpool through U (children copy parents)
            const auto& parent = up_parent_[l - 1];
            const int fine_n = n_nodes_[l - 1];
            Eigen::MatrixXd Xf(fine_n, F + C + 2);
            for (int n = 0; n < fine_n; ++n) {
                const int p = parent[n];
                Xf.block(n, 0, 1, F) = L.X_out.row(p);
                Xf.block(n, F, 1, C) = L.sampled.row(p);
                Xf(n, F + C) = L.P[p].x;
                Xf(n, F + C + 1) = L.P[p].y;
            }
            f.level[l - 1].X_in = std::move(Xf);
        }
    }
    return f;
}

void Model::backward(const ModelForward& f, const ModelGrads& g) {
    const int F = cfg_.cheb_width;
    const double slope = cfg_.leaky_slope;

    std::vector<Tensor3> d_enc(n_stages_);
    for (int i = 0; i < n_stages_; ++i) d_enc[i] = Tensor3(f.enc_act[i].c, f.enc_act[i].h, f.enc_act[i].w);
    std::vector<Tensor3> d_aux;
    if (cfg_.dual)
        for (int j = 0; j < n_stages_; ++j) d_aux.push_back(Tensor3(f.aux_act[j].c, f.aux_act[j].h, f.aux_act[j].w));

    Eigen::MatrixXd dX_in_prev;  // dX_in of level l-1, filled while processing it
    for (int l = 0; l < R_; ++l) {
        const LevelForward& L = f.level[l];
        const int N = n_nodes_[l];
        PointList dP(N, Vec2{});
        if (l < static_cast<int>(g.dP.size()) && !g.dP[l].empty()) {
            if (static_cast<int>(g.dP[l].size()) != N) throw std::runtime_error("model backward: dP size mismatch");
            dP = g.dP[l];
        }
        Eigen::MatrixXd dX_out = Eigen::MatrixXd::Zero(N, F);

        if (l > 0) {
            // gradient arriving through the unpool of [X_out | sampled | P]
            const Tensor3& map = cfg_.dual ? f.aux_act[igsc_aux(l)] : f.enc_act[igsc_stage(l)];
            Tensor3& dmap = cfg_.dual ? d_aux[igsc_aux(l)] : d_enc[igsc_stage(l)];
            const int C = map.c;
            const auto& parent = up_parent_[l - 1];
            Eigen::MatrixXd dcat = Eigen::MatrixXd::Zero(N, F + C + 2);
            for (int n = 0; n < n_nodes_[l - 1]; ++n) dcat.row(parent[n]) += dX_in_prev.row(n);

            dX_out += dcat.leftCols(F);
            for (int n = 0; n < N; ++n) {
                dP[n].x += dcat(n, F + C);
                dP[n].y += dcat(n, F + C + 1);
            }
            const PointList dcoord = igsc_backward(map, L.igsc, dcat.middleCols(F, C), dmap);
            for (int n = 0; n < N; ++n) dP[n] += dcoord[n];
        }

        // readout
        Param& rw = P("readout" + std::to_string(l) + ".w");
        Param& rb = P("readout" + std::to_string(l) + ".b");
        for (int n = 0; n < N; ++n) {
            rb.grad[0] += dP[n].x;
            rb.grad[1] += dP[n].y;
            for (int c = 0; c < F; ++c) {
                rw.grad[c] += dP[n].x * L.X_out(n, c);
                rw.grad[static_cast<size_t>(F) + c] += dP[n].y * L.X_out(n, c);
                dX_out(n, c) += dP[n].x * rw.value[c] + dP[n].y * rw.value[static_cast<size_t>(F) + c];
            }
        }

        // cheb block, reverse layer order
        Eigen::MatrixXd dout = dX_out;
        for (int j = cfg_.cheb_layers - 1; j >= 0; --j) {
            const ChebCache& cache = L.cheb[j];
            const std::string base = "cheb" + std::to_string(l) + "_" + std::to_string(j);
            const Eigen::MatrixXd dpre =
                dout.binaryExpr(cache.pre, [slope](double d, double p) { return p < 0.0 ? d * slope : d; });
            dout = cheb_backward(lap_[l], cache, dpre, P(base + ".theta"), P(base + ".b"));
        }
        dX_in_prev = std::move(dout);
    }

    // latent path
    std::vector<double> dx0(static_cast<size_t>(n_nodes_[R_ - 1]) * F);
    for (int n = 0; n < n_nodes_[R_ - 1]; ++n)
        for (int c = 0; c < F; ++c) dx0[static_cast<size_t>(n) * F + c] = dX_in_prev(n, c);
    std::vector<double> dz(cfg_.latent_dim, 0.0);
    dense_backward(P("fc_z.w"), P("fc_z.b"), f.z, dx0, &dz);

    std::vector<double> dmu(cfg_.latent_dim, 0.0), dlogvar(cfg_.latent_dim, 0.0);
    for (int i = 0; i < cfg_.latent_dim; ++i) {
        dmu[i] = dz[i];
        dlogvar[i] = dz[i] * f.eps[i] * 0.5 * std::exp(0.5 * f.logvar[i]);
    }
    for (size_t i = 0; i < g.dmu.size(); ++i) dmu[i] += g.dmu[i];
    for (size_t i = 0; i < g.dlogvar.size(); ++i) dlogvar[i] += g.dlogvar[i];

    std::vector<double> dflat(f.flat.size(), 0.0);
    dense_backward(P("fc_mu.w"), P("fc_mu.b"), f.flat, dmu, &dflat);
    dense_backward(P("fc_logvar.w"), P("fc_logvar.b"), f.flat, dlogvar, &dflat);
    for (size_t i = 0; i < dflat.size(); ++i) d_enc[n_stages_ - 1].v[i] += dflat[i];

    // dual decoder
    if (cfg_.dual) {
        Tensor3 dlogits(n_organs_, size_, size_);
        for (int k = 0; k < n_organs_; ++k) {
            auto it = g.daux.find(organ_labels_[k]);
            if (it == g.daux.end()) continue;
            const ImageGrid& s = f.aux.at(organ_labels_[k]);
            for (int y = 0; y < size_; ++y)
                for (int x = 0; x < size_; ++x) {
                    const double sv = s.at(y, x);
                    dlogits.at(k, y, x) = it->second.at(y, x) * sv * (1.0 - sv);
                }
        }
        Tensor3 dhead_in(f.aux_in[n_stages_].c, f.aux_in[n_stages_].h, f.aux_in[n_stages_].w);
        conv_backward(P("aux_head.w"), P("aux_head.b"), f.aux_in[n_stages_], dlogits, 1, &dhead_in);
        nn_upsample_backward(dhead_in, d_aux[n_stages_ - 1]);

        for (int j = n_stages_ - 1; j >= 1; --j) {
            Tensor3 dpre = d_aux[j];
            for (size_t i = 0; i < dpre.v.size(); ++i)
                if (f.aux_pre[j].v[i] < 0.0) dpre.v[i] *= slope;
            Tensor3 dcat(f.aux_in[j].c, f.aux_in[j].h, f.aux_in[j].w);
            conv_backward(P("aux" + std::to_string(j) + ".w"), P("aux" + std::to_string(j) + ".b"), f.aux_in[j],
                          dpre, 1, &dcat);
            const Tensor3& up_src = f.aux_act[j - 1];
            Tensor3 dup(up_src.c, dcat.h, dcat.w);
            std::copy(dcat.v.begin(), dcat.v.begin() + dup.v.size(), dup.v.begin());
            nn_upsample_backward(dup, d_aux[j - 1]);
            Tensor3& dskip = d_enc[n_stages_ - 1 - j];
            const size_t off = dup.v.size();
            for (size_t i = 0; i < dskip.v.size(); ++i) dskip.v[i] += dcat.v[off + i];
        }
        Tensor3 dpre0 = d_aux[0];
        for (size_t i = 0; i < dpre0.v.size(); ++i)
            if (f.aux_pre[0].v[i] < 0.0) dpre0.v[i] *= slope;
        Tensor3 din0(f.aux_in[0].c, f.aux_in[0].h, f.aux_in[0].w);
        conv_backward(P("aux0.w"), P("aux0.b"), f.aux_in[0], dpre0, 1, &din0);
        for (size_t i = 0; i < din0.v.size(); ++i) d_enc[n_stages_ - 1].v[i] += din0.v[i];
    }

    // encoder
    for (int i = n_stages_ - 1; i >= 0; --i) {
        Tensor3 dpre = d_enc[i];
        for (size_t k = 0; k < dpre.v.size(); ++k)
            if (f.enc_pre[i].v[k] < 0.0) dpre.v[k] *= slope;
        const Tensor3& in = i > 0 ? f.enc_act[i - 1] : f.input;
        if (i > 0) {
            conv_backward(P("enc" + std::to_string(i) + ".w"), P("enc" + std::to_string(i) + ".b"), in, dpre, 2,
                          &d_enc[i - 1]);
        } else {
            conv_backward(P("enc0.w"), P("enc0.b"), in, dpre, 2, nullptr);
        }
    }
}

uint64_t topology_hash(const GraphTopology& t) {
    nlohmann::json j;
    j["mode"] = t.mode;
    j["organ_labels"] = t.organ_labels;
    nlohmann::json levels = nlohmann::json::array();
    for (const auto& l : t.level) {
        nlohmann::json jl;
        jl["n"] = l.n;
        nlohmann::json edges = nlohmann::json::array();
        for (const auto& [u, v] : l.edges) edges.push_back({u, v});
        jl["edges"] = edges;
        levels.push_back(jl);
    }
    j["levels"] = levels;
    return fnv1a(j.dump());
}

namespace {

void write_u32(std::ofstream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ofstream& out, uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

uint32_t read_u32(std::ifstream& in, const std::string& path) {
    uint32_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 4)) throw std::runtime_error("checkpoint: truncated file '" + path + "'");
    return v;
}

uint64_t read_u64(std::ifstream& in, const std::string& path) {
    uint64_t v = 0;
    if (!in.read(reinterpret_cast<char*>(&v), 8)) throw std::runtime_error("checkpoint: truncated file '" + path + "'");
    return v;
}

constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, const std::vector<Param>& params, uint64_t config_hash,
                     uint64_t topo_hash, const CheckpointExtra* extra) {
    nlohmann::json header;
    header["config_hash"] = config_hash;
    header["topo_hash"] = topo_hash;
    nlohmann::json jp = nlohmann::json::array();
    for (const auto& p : params) jp.push_back({{"name", p.name}, {"shape", p.shape}});
    header["params"] = jp;
    if (extra) {
        nlohmann::json jb = nlohmann::json::array();
        for (const auto& [name, block] : extra->blocks) jb.push_back({{"name", name}, {"size", block.size()}});
        header["extra"] = {{"blocks", jb},
                           {"adam_step", extra->adam_step},
                           {"iteration", extra->iteration},
                           {"total_iterations", extra->total_iterations}};
    }
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
    out.write("MHGN", 4);
    write_u32(out, kCheckpointVersion);
    write_u32(out, static_cast<uint32_t>(hs.size()));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& p : params)
        out.write(reinterpret_cast<const char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * 8));
    if (extra)
        for (const auto& [name, block] : extra->blocks)
            out.write(reinterpret_cast<const char*>(block.data()), static_cast<std::streamsize>(block.size() * 8));
    if (!out) throw std::runtime_error("checkpoint: write failure '" + path + "'");
}

bool load_checkpoint(const std::string& path, std::vector<Param>& params, uint64_t config_hash,
                     uint64_t topo_hash, CheckpointExtra* extra) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "MHGN", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
    const uint32_t version = read_u32(in, path);
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: version mismatch (file " + std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion) + ")");
    const uint32_t hlen = read_u32(in, path);
    std::string hs(hlen, '\0');
    if (!in.read(hs.data(), hlen)) throw std::runtime_error("checkpoint: truncated header in '" + path + "'");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("checkpoint: corrupt header in '" + path + "': " + e.what());
    }
    char buf[64];
    const uint64_t stored_cfg = header.at("config_hash").get<uint64_t>();
    if (stored_cfg != config_hash) {
        std::snprintf(buf, sizeof(buf), "%016llx vs current %016llx", static_cast<unsigned long long>(stored_cfg),
                      static_cast<unsigned long long>(config_hash));
        throw std::runtime_error("checkpoint: config hash mismatch (stored " + std::string(buf) + ")");
    }
    const uint64_t stored_topo = header.at("topo_hash").get<uint64_t>();
    if (stored_topo != topo_hash) {
        std::snprintf(buf, sizeof(buf), "%016llx vs current %016llx", static_cast<unsigned long long>(stored_topo),
                      static_cast<unsigned long long>(topo_hash));
        throw std::runtime_error("checkpoint: topology hash mismatch (stored " + std::string(buf) + ")");
    }
    const auto& jp = header.at("params");
    if (jp.size() != params.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
    for (size_t i = 0; i < params.size(); ++i) {
        if (jp[i].at("name").get<std::string>() != params[i].name ||
            jp[i].at("shape").get<std::vector<int>>() != params[i].shape)
            throw std::runtime_error("checkpoint: parameter layout mismatch at '" + params[i].name + "'");
    }
    for (auto& p : params)
        if (!in.read(reinterpret_cast<char*>(p.value.data()), static_cast<std::streamsize>(p.value.size() * 8)))
            throw std::runtime_error("checkpoint: truncated parameter block '" + p.name + "'");

    if (!header.contains("extra")) return false;
    if (!extra) return true;
    const auto& je = header.at("extra");
    extra->blocks.clear();
    for (const auto& jb : je.at("blocks")) {
        std::vector<double> block(jb.at("size").get<size_t>());
        if (!in.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(block.size() * 8)))
            throw std::runtime_error("checkpoint: truncated extra block");
        extra->blocks.push_back({jb.at("name").get<std::string>(), std::move(block)});
    }
    extra->adam_step = je.at("adam_step").get<uint64_t>();
    extra->iteration = je.at("iteration").get<uint64_t>();
    extra->total_iterations = je.at("total_iterations").get<uint64_t>();
    return true;
}

}  // namespace mhg
