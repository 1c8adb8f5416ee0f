#include "mhg/losses.hpp"

#include <algorithm>
#include <cmath>

namespace mhg {

ChamferResult chamfer_loss(const PointList& P, const std::map<int, std::vector<int>>& cycles,
                           const std::map<int, PointList>& truth, const std::vector<int>& annotated) {
    ChamferResult r;
    r.dP.assign(P.size(), Vec2{});
    for (int organ : annotated) {
        auto git = truth.find(organ);
        if (git == truth.end()) continue;  // annotated but no points: treated as absent
        const PointList& G = git->second;
        if (G.empty()) throw std::runtime_error("chamfer: annotated organ " + std::to_string(organ) + " has empty truth set");
        auto cit = cycles.find(organ);
        if (cit == cycles.end()) throw std::runtime_error("chamfer: organ " + std::to_string(organ) + " missing from topology");
        const std::vector<int>& nodes = cit->second;
        if (nodes.empty()) throw std::runtime_error("chamfer: organ " + std::to_string(organ) + " has no predicted landmarks");

        const double inv_p = 1.0 / nodes.size();
        const double inv_g = 1.0 / G.size();
        // predicted -> truth
        for (int idx : nodes) {
            const Vec2 p = P[idx];
            double best = std::numeric_limits<double>::infinity();
            size_t bi = 0;
            for (size_t g = 0; g < G.size(); ++g) {
                const double d2 = (p - G[g]).squared_norm();
                if (d2 < best) {
                    best = d2;
                    bi = g;
                }
            }
            r.value += inv_p * best;
            r.dP[idx] += (p - G[bi]) * (2.0 * inv_p);
        }
        // truth -> predicted
        for (const Vec2& g : G) {
            double best = std::numeric_limits<double>::infinity();
            int bi = nodes[0];
            for (int idx : nodes) {
                const double d2 = (g - P[idx]).squared_norm();
                if (d2 < best) {
                    best = d2;
                    bi = idx;
                }
            }
            r.value += inv_g * best;
            r.dP[bi] += (P[bi] - g) * (2.0 * inv_g);
        }
    }
    return r;
}

namespace {

constexpr double kBceLo = 1e-7;
constexpr double kBceHi = 1.0 - 1e-7;
constexpr double kDiceEps = 1.0;

}  // namespace

PixelResult pixel_loss(const std::map<int, ImageGrid>& soft, const std::map<int, LabelMask>& gt,
                       const std::vector<int>& annotated) {
    PixelResult r;
    int used = 0;
    for (int organ : annotated) {
        auto sit = soft.find(organ);
        auto git = gt.find(organ);
        if (sit == soft.end() || git == gt.end()) continue;
        ++used;
    }
    if (used == 0) return r;
    const double inv_o = 1.0 / used;

    for (int organ : annotated) {
        auto sit = soft.find(organ);
        auto git = gt.find(organ);
        if (sit == soft.end() || git == gt.end()) continue;
        const ImageGrid& s = sit->second;
        const LabelMask& g = git->second;
        if (s.h != g.h || s.w != g.w) throw std::runtime_error("pixel_loss: shape mismatch");
        const size_t n = s.v.size();
        const double inv_n = 1.0 / n;

        double inter = 0.0, sum_s = 0.0, sum_g = 0.0, bce = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double si = s.v[i];
            const double gi = g.v[i] ? 1.0 : 0.0;
            inter += si * gi;
            sum_s += si;
            sum_g += gi;
            const double sc = std::clamp(si, kBceLo, kBceHi);
            bce -= gi * std::log(sc) + (1.0 - gi) * std::log(1.0 - sc);
        }
        const double num = 2.0 * inter + kDiceEps;
        const double den = sum_s + sum_g + kDiceEps;
        const double dice_loss = 1.0 - num / den;
        r.value += inv_o * (dice_loss + bce * inv_n);

        ImageGrid d(s.h, s.w, 0.0);
        const double den2 = den * den;
        for (size_t i = 0; i < n; ++i) {
            const double si = s.v[i];
            const double gi = g.v[i] ? 1.0 : 0.0;
            double grad = -(2.0 * gi * den - num) / den2;  // d dice_loss / d s_i
            if (si > kBceLo && si < kBceHi) grad += inv_n * (-gi / si + (1.0 - gi) / (1.0 - si));
            d.v[i] = inv_o * grad;
        }
        r.dsoft[organ] = std::move(d);
    }
    return r;
}

KlResult kl_loss(const std::vector<double>& mu, const std::vector<double>& logvar) {
    if (mu.size() != logvar.size()) throw std::runtime_error("kl_loss: dimension mismatch");
    KlResult r;
    r.dmu.resize(mu.size());
    r.dlogvar.resize(mu.size());
    for (size_t i = 0; i < mu.size(); ++i) {
        const double var = std::exp(logvar[i]);
        r.value += -0.5 * (1.0 + logvar[i] - mu[i] * mu[i] - var);
        r.dmu[i] = mu[i];
        r.dlogvar[i] = 0.5 * (var - 1.0);
    }
    return r;
}

EdgeResult edge_regularizers(const PointList& P, const EdgeTensor& et) {
    EdgeResult r;
    r.d_uniform.assign(P.size(), Vec2{});
    r.d_elastic.assign(P.size(), Vec2{});
    r.d_curvature.assign(P.size(), Vec2{});
    const size_t O = et.organs.size();
    if (O == 0) return r;

    r.w.resize(O);
    r.ebar.resize(O);
    r.perim.resize(O);
    for (size_t o = 0; o < O; ++o) {
        double perim = 0.0;
        int m = 0;
        for (size_t k = 0; k < et.edges[o].size(); ++k) {
            if (!et.valid[o][k]) continue;
            const auto& [i, j] = et.edges[o][k];
            perim += (P[i] - P[j]).norm();
            ++m;
        }
        r.perim[o] = perim;
        r.ebar[o] = m > 0 ? perim / m : 0.0;
    }
    const double max_p = *std::max_element(r.perim.begin(), r.perim.end());
    for (size_t o = 0; o < O; ++o) {
        r.w[o] = max_p > 0.0 ? r.perim[o] / max_p : 0.0;
        if (r.perim[o] <= 0.0) log_info("edge_regularizers: organ " + std::to_string(et.organs[o]) + " has zero perimeter, w=0");
    }

    const double inv_O = 1.0 / O;
    for (size_t o = 0; o < O; ++o) {
        int m = 0;
        for (size_t k = 0; k < et.edges[o].size(); ++k)
            if (et.valid[o][k]) ++m;
        if (m < 3) throw std::runtime_error("edge_regularizers: organ needs >= 3 valid edges");
        const double ebar = r.ebar[o];
        const double w = r.w[o];
        const double cu = w * inv_O / m;  // per-edge weight after organ mean

        double uni = 0.0, ela = 0.0;
        for (size_t k = 0; k < et.edges[o].size(); ++k) {
            if (!et.valid[o][k]) continue;
            const auto& [i, j] = et.edges[o][k];
            const Vec2 e = P[i] - P[j];
            const double len = e.norm();
            ela += len * len;
            r.d_elastic[i] += e * (2.0 * cu);
            r.d_elastic[j] -= e * (2.0 * cu);
            if (ebar > 0.0) {
                const double res = (len - ebar) / ebar;
                uni += res * res;
                if (len > 0.0) {
                    const Vec2 g = e * (2.0 * res / (ebar * len));
                    r.d_uniform[i] += g * cu;
                    r.d_uniform[j] -= g * cu;
                }
            }
        }
        r.uniform += w * inv_O * (uni / m);
        r.elastic += w * inv_O * (ela / m);

        const auto& pairs = et.consecutive[o];
        if (!pairs.empty()) {
            const double cc = w * inv_O / pairs.size();
            double curv = 0.0;
            for (const auto& [ka, kb] : pairs) {
                const auto& [ia, ja] = et.edges[o][ka];
                const auto& [ib, jb] = et.edges[o][kb];
                const Vec2 ea = P[ia] - P[ja];
                const Vec2 eb = P[ib] - P[jb];
                const Vec2 diff = ea - eb;
                curv += diff.squared_norm();
                r.d_curvature[ia] += diff * (2.0 * cc);
                r.d_curvature[ja] -= diff * (2.0 * cc);
                r.d_curvature[ib] -= diff * (2.0 * cc);
                r.d_curvature[jb] += diff * (2.0 * cc);
            }
            r.curvature += w * inv_O * (curv / pairs.size());
        }
    }
    return r;
}

LossBundle total_loss(const ChamferResult& chamfer, const PixelResult& pixel, const KlResult& kl,
                      const EdgeResult& edge, const LossWeights& weights) {
    LossBundle b;
    b.weights = weights;
    b.chamfer = chamfer.value;
    b.pixel = pixel.value;
    b.kld = kl.value;
    b.uniform = edge.uniform;
    b.elastic = edge.elastic;
    b.curvature = edge.curvature;
    b.edge = weights.alpha * edge.uniform + weights.beta * edge.elastic + weights.gamma * edge.curvature;
    b.total = weights.lambda_c * b.chamfer + weights.lambda_p * b.pixel + weights.lambda_k * b.kld + b.edge;
    b.w = edge.w;
    b.ebar = edge.ebar;
    b.perim = edge.perim;

    const size_t n = std::max(chamfer.dP.size(), edge.d_uniform.size());
    b.dP.assign(n, Vec2{});
    for (size_t i = 0; i < chamfer.dP.size(); ++i) b.dP[i] += chamfer.dP[i] * weights.lambda_c;
    for (size_t i = 0; i < edge.d_uniform.size(); ++i) {
        b.dP[i] += edge.d_uniform[i] * weights.alpha;
        b.dP[i] += edge.d_elastic[i] * weights.beta;
        b.dP[i] += edge.d_curvature[i] * weights.gamma;
    }
    for (const auto& [organ, d] : pixel.dsoft) {
        ImageGrid scaled = d;
        for (double& v : scaled.v) v *= weights.lambda_p;
        b.dsoft[organ] = std::move(scaled);
    }
    b.dmu.resize(kl.dmu.size());
    b.dlogvar.resize(kl.dlogvar.size());
    for (size_t i = 0; i < kl.dmu.size(); ++i) {
        b.dmu[i] = kl.dmu[i] * weights.lambda_k;
        b.dlogvar[i] = kl.dlogvar[i] * weights.lambda_k;
    }
    return b;
}

}  // namespace mhg
