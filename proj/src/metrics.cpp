#include "mhg/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mhg {

LabelMask binarize(const LabelMask& m, int label) {
    LabelMask out(m.h, m.w);
    for (size_t i = 0; i < m.v.size(); ++i) out.v[i] = m.v[i] == label ? 1 : 0;
    return out;
}

double dice(const LabelMask& a, const LabelMask& b) {
    if (a.h != b.h || a.w != b.w) throw std::runtime_error("dice: shape mismatch");
    size_t na = 0, nb = 0, inter = 0;
    for (size_t i = 0; i < a.v.size(); ++i) {
        const bool fa = a.v[i] != 0, fb = b.v[i] != 0;
        na += fa;
        nb += fb;
        inter += fa && fb;
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

PointList boundary_pixels(const LabelMask& m) {
    PointList pts;
    for (int y = 0; y < m.h; ++y)
        for (int x = 0; x < m.w; ++x) {
            if (m.at(y, x) == 0) continue;
            const bool edge = y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1;
            if (edge || m.at(y - 1, x) == 0 || m.at(y + 1, x) == 0 || m.at(y, x - 1) == 0 || m.at(y, x + 1) == 0)
                pts.push_back({static_cast<double>(x), static_cast<double>(y)});
        }
    return pts;
}

namespace {

// directed distances: max and mean of min distance from each point of A to B
std::pair<double, double> directed(const PointList& a, const PointList& b) {
    double worst = 0.0, sum = 0.0;
    for (const auto& p : a) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& q : b) {
            const double d = (p - q).squared_norm();
            if (d < best) best = d;
        }
        best = std::sqrt(best);
        worst = std::max(worst, best);
        sum += best;
    }
    return {worst, sum / static_cast<double>(a.size())};
}

double wrap_pi(double a) {
    a = std::fmod(a, 2.0 * M_PI);
    if (a > M_PI) a -= 2.0 * M_PI;
    if (a <= -M_PI) a += 2.0 * M_PI;
    return a;
}

double circ_mean(const std::vector<double>& angles) {
    double s = 0.0, c = 0.0;
    for (double a : angles) {
        s += std::sin(a);
        c += std::cos(a);
    }
    return std::atan2(s, c);
}

}  // namespace

BoundaryDistances boundary_distances(const LabelMask& a, const LabelMask& b) {
    if (a.h != b.h || a.w != b.w) throw std::runtime_error("boundary_distances: shape mismatch");
    const PointList pa = boundary_pixels(a), pb = boundary_pixels(b);
    BoundaryDistances out;
    if (pa.empty() || pb.empty()) {
        out.hausdorff = out.assd = std::numeric_limits<double>::infinity();
        out.infinite = true;
        return out;
    }
    const auto [max_ab, mean_ab] = directed(pa, pb);
    const auto [max_ba, mean_ba] = directed(pb, pa);
    out.hausdorff = std::max(max_ab, max_ba);
    out.assd = 0.5 * (mean_ab + mean_ba);
    return out;
}

CorrespondenceStats correspondence_consistency(const std::vector<PointList>& pred,
                                               const std::vector<const OracleCurve*>& curves) {
    const size_t S = pred.size();
    if (S == 0 || curves.size() != S) throw std::runtime_error("correspondence: sample count mismatch");
    const size_t N = pred[0].size();
    for (const auto& p : pred)
        if (p.size() != N) throw std::runtime_error("correspondence: landmark count mismatch");

    // theta[n][i] = 2*pi*t of landmark i projected onto sample n's curve
    std::vector<std::vector<double>> theta(S, std::vector<double>(N));
    for (size_t n = 0; n < S; ++n)
        for (size_t i = 0; i < N; ++i) theta[n][i] = 2.0 * M_PI * curves[n]->project(pred[n][i]);

    // remove each sample's global shift relative to sample 0
    for (size_t n = 1; n < S; ++n) {
        std::vector<double> diff(N);
        for (size_t i = 0; i < N; ++i) diff[i] = theta[n][i] - theta[0][i];
        const double shift = circ_mean(diff);
        for (size_t i = 0; i < N; ++i) theta[n][i] -= shift;
    }

    CorrespondenceStats st;
    st.mean.resize(N);
    st.stddev.resize(N);
    double acc = 0.0;
    for (size_t i = 0; i < N; ++i) {
        std::vector<double> col(S);
        for (size_t n = 0; n < S; ++n) col[n] = theta[n][i];
        const double mu = circ_mean(col);
        double var = 0.0;
        for (double a : col) {
            const double d = wrap_pi(a - mu);
            var += d * d;
        }
        var /= static_cast<double>(S);
        double m = mu / (2.0 * M_PI);
        m -= std::floor(m);
        st.mean[i] = m;
        st.stddev[i] = std::sqrt(var) / (2.0 * M_PI);
        acc += st.stddev[i];
    }
    st.summary = acc / static_cast<double>(N);
    return st;
}

}  // namespace mhg
