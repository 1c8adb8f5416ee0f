#include "mhg/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "mhg/contours.hpp"

namespace mhg {

void OracleCurve::finalize() {
    const size_t n = pts.size();
    if (n < 3) throw std::runtime_error("oracle: need >= 3 points");
    cum.assign(n, 0.0);
    for (size_t i = 1; i < n; ++i) cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
    total = cum[n - 1] + (pts[0] - pts[n - 1]).norm();
    if (total <= 0.0) throw std::runtime_error("oracle: zero-length curve");
}

Vec2 OracleCurve::at(double t) const {
    t -= std::floor(t);
    const double s = t * total;
    // find segment i with cum[i] <= s < cum[i+1]
    size_t i = static_cast<size_t>(std::upper_bound(cum.begin(), cum.end(), s) - cum.begin());
    i = (i == 0) ? 0 : i - 1;
    const size_t j = (i + 1) % pts.size();
    const double seg = (j == 0 ? total : cum[j]) - cum[i];
    const double f = seg > 0.0 ? (s - cum[i]) / seg : 0.0;
    return pts[i] + (pts[j] - pts[i]) * f;
}

double OracleCurve::project(const Vec2& p) const {
    const size_t n = pts.size();
    double best_d2 = std::numeric_limits<double>::infinity();
    double best_t = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const size_t j = (i + 1) % n;
        const Vec2 a = pts[i], b = pts[j];
        const Vec2 ab = b - a;
        const double len2 = ab.squared_norm();
        double f = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        const Vec2 q = a + ab * f;
        const double d2 = (p - q).squared_norm();
        if (d2 < best_d2 - 1e-15) {
            best_d2 = d2;
            const double seg = (j == 0 ? total : cum[j]) - cum[i];
            best_t = (cum[i] + f * seg) / total;
        }
    }
    return best_t - std::floor(best_t);
}

namespace {

double radius_at(const std::vector<std::pair<double, double>>& coeffs, double base, double theta) {
    double f = 1.0;
    for (size_t j = 0; j < coeffs.size(); ++j)
        f += coeffs[j].first * std::cos((static_cast<double>(j) + 2.0) * theta - coeffs[j].second);
    return base * f;
}

constexpr int kDense = 4096;    // curve sampling for arc-length integration
constexpr int kOraclePts = 2048;

SyntheticShapeParams draw_params(const SyntheticSpec& spec, int size, int organs, Rng& rng) {
    SyntheticShapeParams p;
    std::vector<std::pair<double, double>> coeffs;
    for (int j = 0; j < spec.harmonics; ++j) {
        const double amp = rng.uniform(spec.amp_min, spec.amp_max);
        const double base_phase = spec.base_phases[j % spec.base_phases.size()];
        const double phase = base_phase + rng.uniform(-spec.phase_jitter, spec.phase_jitter);
        coeffs.push_back({amp, phase});
    }
    for (int o = 0; o < organs; ++o) p.fourier_coeffs.push_back(coeffs);
    p.base_radius = size * rng.uniform(spec.radius_min_frac, spec.radius_max_frac);
    const double cj = size * spec.center_jitter_frac;
    p.center = {size / 2.0 + rng.uniform(-cj, cj), size / 2.0 + rng.uniform(-cj, cj)};
    p.rotation = spec.rotation_jitter > 0.0 ? rng.uniform(-spec.rotation_jitter, spec.rotation_jitter) : 0.0;

    double rmin = 1e30, rmax = 0.0;
    for (int i = 0; i < 720; ++i) {
        const double r = radius_at(coeffs, p.base_radius, 2.0 * M_PI * i / 720.0);
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
    }
    if (rmin < 2.0) throw std::runtime_error("synthetic: degenerate spec, radius collapses");
    const double margin = 1.5;
    if (p.center.x - rmax < margin || p.center.x + rmax > size - margin ||
        p.center.y - rmax < margin || p.center.y + rmax > size - margin)
        throw std::runtime_error("synthetic: degenerate spec, shape exceeds image bounds");
    return p;
}

// psi is the direction angle from center; the curve radius is indexed by
// theta = psi - rotation.
Vec2 curve_point(const SyntheticShapeParams& p, double psi) {
    const double r = radius_at(p.fourier_coeffs[0], p.base_radius, psi - p.rotation);
    return {p.center.x + r * std::cos(psi), p.center.y + r * std::sin(psi)};
}

LabelMask render_mask(const SyntheticShapeParams& p, int size, bool touching) {
    LabelMask m(size, size, 0);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double dx = (x + 0.5) - p.center.x;
            const double dy = (y + 0.5) - p.center.y;
            const double rho = std::hypot(dx, dy);
            const double psi = std::atan2(dy, dx);
            const double r = radius_at(p.fourier_coeffs[0], p.base_radius, psi - p.rotation);
            if (rho <= r) m.at(y, x) = (touching && dx < 0.0) ? 2 : 1;
        }
    return m;
}

OracleSet build_oracle(const SyntheticShapeParams& p, bool touching) {
    OracleSet oracle;
    if (!touching) {
        PointList pts;
        pts.reserve(kDense);
        for (int i = 0; i < kDense; ++i) pts.push_back(curve_point(p, 2.0 * M_PI * i / kDense));
        OracleCurve c;
        c.pts = resample_closed(pts, kOraclePts);
        c.finalize();
        oracle[1] = std::move(c);
        return oracle;
    }
    // right organ (label 1): arc psi in [-pi/2, pi/2] from the top crossing to
    // the bottom crossing; the closing segment is the shared chord.
    const int half = kDense / 2;
    PointList right, left;
    for (int i = 0; i <= half; ++i) right.push_back(curve_point(p, -M_PI / 2.0 + M_PI * i / half));
    for (int i = 0; i <= half; ++i) left.push_back(curve_point(p, M_PI / 2.0 + M_PI * i / half));
    OracleCurve c1, c2;
    c1.pts = resample_closed(right, kOraclePts);
    c1.finalize();
    c2.pts = resample_closed(left, kOraclePts);
    c2.finalize();
    oracle[1] = std::move(c1);
    oracle[2] = std::move(c2);
    return oracle;
}

}  // namespace

std::vector<SyntheticSample> gen_synthetic_population(int n, const SyntheticSpec& spec, int size,
                                                      bool touching, Rng& rng) {
    if (n < 1) throw std::runtime_error("synthetic: n must be >= 1");
    std::vector<SyntheticSample> out;
    out.reserve(n);
    const int organs = touching ? 2 : 1;
    for (int i = 0; i < n; ++i) {
        SyntheticSample s;
        s.params = draw_params(spec, size, organs, rng);
        s.sample.mask = render_mask(s.params, size, touching);
        s.oracle = build_oracle(s.params, touching);

        int max_label = 0;
        for (uint8_t v : s.sample.mask.v) max_label = std::max(max_label, static_cast<int>(v));
        s.sample.image = ImageGrid(size, size, 0.0);
        for (size_t k = 0; k < s.sample.mask.v.size(); ++k) {
            const double base = max_label > 0 ? static_cast<double>(s.sample.mask.v[k]) / max_label : 0.0;
            const double noisy = base + spec.noise_sigma * rng.normal();
            s.sample.image.v[k] = std::clamp(noisy, 0.0, 1.0);
        }
        char id[16];
        std::snprintf(id, sizeof(id), "s%04d", i);
        s.sample.subject_id = id;
        for (int o = 1; o <= organs; ++o) s.sample.annotated_organs.push_back(o);
        out.push_back(std::move(s));
    }
    return out;
}

void save_oracle_csv(const OracleSet& oracle, const std::string& path) {
    std::map<int, Contour> contours;
    for (const auto& [organ, curve] : oracle) {
        Contour c;
        c.organ_label = organ;
        c.points = curve.pts;
        contours[organ] = std::move(c);
    }
    save_contours_csv(contours, path);
}

OracleSet load_oracle_csv(const std::string& path) {
    OracleSet oracle;
    for (auto& [organ, contour] : load_contours_csv(path)) {
        OracleCurve c;
        c.pts = std::move(contour.points);
        c.finalize();
        oracle[organ] = std::move(c);
    }
    return oracle;
}

}  // namespace mhg
