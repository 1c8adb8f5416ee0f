#include "mhg/rasterizer.hpp"

#include <algorithm>
#include <cmath>

namespace mhg {

namespace {

constexpr double kBoundaryEps = 1e-12;

struct Nearest {
    int seg = -1;
    double t = 0.0;
    double d2 = std::numeric_limits<double>::infinity();
};

Nearest nearest_segment(const Vec2& p, const PointList& poly) {
    Nearest best;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const Vec2 a = poly[i], b = poly[(i + 1) % n];
        const Vec2 ab = b - a;
        const double len2 = ab.squared_norm();
        const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        const Vec2 c = a + ab * t;
        const double d2 = (p - c).squared_norm();
        if (d2 < best.d2) {
            best.seg = static_cast<int>(i);
            best.t = t;
            best.d2 = d2;
        }
    }
    return best;
}

bool crossing_inside(const Vec2& p, const PointList& poly) {
    bool inside = false;
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const Vec2 a = poly[i], b = poly[(i + 1) % n];
        if ((a.y > p.y) != (b.y > p.y)) {
            const double xint = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if (p.x < xint) inside = !inside;
        }
    }
    return inside;
}

}  // namespace

double signed_distance(const Vec2& p, const PointList& poly) {
    if (poly.size() < 3) throw std::runtime_error("signed_distance: polygon needs >= 3 vertices");
    const Nearest n = nearest_segment(p, poly);
    const double d = std::sqrt(n.d2);
    if (d <= kBoundaryEps) return 0.0;
    return crossing_inside(p, poly) ? d : -d;
}

SoftRaster soft_rasterize(const PointList& poly, int H, int W, double sigma) {
    if (poly.size() < 3) throw std::runtime_error("soft_rasterize: polygon needs >= 3 vertices");
    if (!(sigma > 0.0)) throw std::runtime_error("soft_rasterize: sigma must be > 0");
    SoftRaster r;
    r.sigma = sigma;
    r.values = ImageGrid(H, W, 0.0);
    const size_t total = static_cast<size_t>(H) * W;
    r.seg.resize(total);
    r.tstar.resize(total);
    r.dist.resize(total);
    r.inside.resize(total);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const Vec2 p{x + 0.5, y + 0.5};
            const Nearest n = nearest_segment(p, poly);
            const double d = std::sqrt(n.d2);
            const int8_t s = crossing_inside(p, poly) ? 1 : -1;
            const size_t idx = static_cast<size_t>(y) * W + x;
            r.seg[idx] = n.seg;
            r.tstar[idx] = n.t;
            r.dist[idx] = d;
            r.inside[idx] = s;
            r.values.at(y, x) = 1.0 / (1.0 + std::exp(-s * d / sigma));
        }
    return r;
}

PointList soft_rasterize_backward(const SoftRaster& r, const PointList& poly, const ImageGrid& upstream) {
    const size_t n = poly.size();
    PointList grad(n, Vec2{});
    const int H = r.values.h, W = r.values.w;
    if (upstream.h != H || upstream.w != W)
        throw std::runtime_error("soft_rasterize_backward: upstream shape mismatch");
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const size_t idx = static_cast<size_t>(y) * W + x;
            const double up = upstream.at(y, x);
            if (up == 0.0) continue;
            const double d = r.dist[idx];
            if (d <= kBoundaryEps) continue;  // subgradient 0 exactly on the boundary
            const double v = r.values.at(y, x);
            const double dv_dsigned = v * (1.0 - v) / r.sigma;
            const double coeff = up * dv_dsigned * r.inside[idx];  // d(signed)/d(dist) = sign

            const Vec2 p{x + 0.5, y + 0.5};
            const int i = r.seg[idx];
            const size_t j = (static_cast<size_t>(i) + 1) % n;
            const double t = r.tstar[idx];
            const Vec2 c = poly[i] + (poly[j] - poly[i]) * t;
            const Vec2 dd_dc = (c - p) * (1.0 / d);  // d(dist)/dc
            grad[i] += dd_dc * ((1.0 - t) * coeff);
            grad[j] += dd_dc * (t * coeff);
        }
    return grad;
}

LabelMask hard_rasterize(const PointList& poly, int H, int W) {
    if (poly.size() < 3) throw std::runtime_error("hard_rasterize: polygon needs >= 3 vertices");
    double area2 = 0.0;
    for (size_t i = 0; i < poly.size(); ++i) {
        const Vec2 a = poly[i], b = poly[(i + 1) % poly.size()];
        area2 += a.cross(b);
    }
    LabelMask m(H, W, 0);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const Vec2 p{x + 0.5, y + 0.5};
            if (crossing_inside(p, poly)) {
                m.at(y, x) = 1;
                continue;
            }
            if (area2 == 0.0) continue;  // zero-area polygon has no boundary pixels either
            const Nearest n = nearest_segment(p, poly);
            if (n.d2 <= 1e-18) m.at(y, x) = 1;
        }
    return m;
}

}  // namespace mhg
