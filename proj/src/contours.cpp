#include "mhg/contours.hpp"

#include <cstdio>
#include <fstream>
#include <queue>
#include <sstream>

namespace mhg {

LabelMask largest_component(const LabelMask& binary) {
    const int h = binary.h, w = binary.w;
    std::vector<int> comp(static_cast<size_t>(h) * w, -1);
    std::vector<int> sizes;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!binary.at(y, x) || comp[static_cast<size_t>(y) * w + x] >= 0) continue;
            const int id = static_cast<int>(sizes.size());
            int count = 0;
            std::queue<std::pair<int, int>> q;
            q.push({y, x});
            comp[static_cast<size_t>(y) * w + x] = id;
            while (!q.empty()) {
                auto [cy, cx] = q.front();
                q.pop();
                ++count;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = cy + dy, nx = cx + dx;
                        if (!binary.in_bounds(ny, nx)) continue;
                        auto& c = comp[static_cast<size_t>(ny) * w + nx];
                        if (binary.at(ny, nx) && c < 0) {
                            c = id;
                            q.push({ny, nx});
                        }
                    }
            }
            sizes.push_back(count);
        }
    }
    int best = -1;
    for (int i = 0; i < static_cast<int>(sizes.size()); ++i)
        if (best < 0 || sizes[i] > sizes[best]) best = i;
    LabelMask out(h, w, 0);
    if (best >= 0)
        for (size_t i = 0; i < comp.size(); ++i)
            if (comp[i] == best) out.v[i] = 1;
    return out;
}

namespace {

// Moore neighborhood in clockwise order for y-down image coordinates,
// starting at north.
constexpr int kDy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kDx[8] = {0, 1, 1, 1, 0, -1, -1, -1};

int dir_index(int dy, int dx) {
    for (int i = 0; i < 8; ++i)
        if (kDy[i] == dy && kDx[i] == dx) return i;
    throw std::logic_error("trace_boundary: bad direction");
}

}  // namespace

Contour trace_boundary(const LabelMask& binary) {
    int sy = -1, sx = -1;
    for (int y = 0; y < binary.h && sy < 0; ++y)
        for (int x = 0; x < binary.w; ++x)
            if (binary.at(y, x)) {
                sy = y;
                sx = x;
                break;
            }
    if (sy < 0) throw std::runtime_error("trace_boundary: empty mask");

    auto fg = [&](int y, int x) { return binary.in_bounds(y, x) && binary.at(y, x); };

    Contour c;
    c.closed = true;
    c.points.push_back({static_cast<double>(sx), static_cast<double>(sy)});

    // entered the start pixel from the west (raster scan guarantees west is background)
    int py = sy, px = sx;
    int bdir = dir_index(0, -1);  // backtrack direction, relative to current pixel
    const int start_bdir = bdir;
    const size_t limit = static_cast<size_t>(binary.h) * binary.w * 8 + 16;

    for (size_t step = 0; step < limit; ++step) {
        int found = -1;
        for (int k = 1; k <= 8; ++k) {
            const int d = (bdir + k) % 8;
            if (fg(py + kDy[d], px + kDx[d])) {
                found = d;
                break;
            }
        }
        if (found < 0) return c;  // isolated pixel

        const int ny = py + kDy[found], nx = px + kDx[found];
        // new backtrack: direction from the new pixel to the last scanned background cell
        const int prev = (found + 7) % 8;
        const int by = py + kDy[prev], bx = px + kDx[prev];
        py = ny;
        px = nx;
        bdir = dir_index(by - py, bx - px);

        if (py == sy && px == sx && bdir == start_bdir) return c;
        c.points.push_back({static_cast<double>(px), static_cast<double>(py)});
    }
    throw std::runtime_error("trace_boundary: tracing did not terminate");
}

std::map<int, Contour> extract_organ_contours(const LabelMask& mask, const std::vector<int>& organs) {
    std::map<int, Contour> out;
    for (int organ : organs) {
        LabelMask bin(mask.h, mask.w, 0);
        bool any = false;
        for (size_t i = 0; i < mask.v.size(); ++i)
            if (mask.v[i] == organ) {
                bin.v[i] = 1;
                any = true;
            }
        if (!any) continue;
        Contour c = trace_boundary(largest_component(bin));
        c.organ_label = organ;
        out[organ] = std::move(c);
    }
    return out;
}

std::map<int, double> contour_length_stats(const std::vector<std::map<int, Contour>>& per_sample,
                                           const std::vector<int>& organs) {
    std::map<int, double> sums;
    std::map<int, int> counts;
    for (const auto& m : per_sample)
        for (const auto& [organ, contour] : m) {
            sums[organ] += static_cast<double>(contour.points.size());
            counts[organ] += 1;
        }
    std::map<int, double> means;
    for (int organ : organs) {
        auto it = counts.find(organ);
        if (it == counts.end())
            throw std::runtime_error("contour stats: organ " + std::to_string(organ) + " never observed");
        means[organ] = sums[organ] / it->second;
    }
    return means;
}

void save_contours_csv(const std::map<int, Contour>& contours, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("contours: cannot write '" + path + "'");
    out << "organ,index,x,y\n";
    char buf[128];
    for (const auto& [organ, c] : contours) {
        for (size_t i = 0; i < c.points.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%d,%zu,%.9g,%.9g\n", organ, i, c.points[i].x, c.points[i].y);
            out << buf;
        }
    }
}

PointList resample_closed(const PointList& pts, int n) {
    const size_t m = pts.size();
    if (m < 3) throw std::runtime_error("resample_closed: need >= 3 points");
    if (n < 3) throw std::runtime_error("resample_closed: need >= 3 output points");
    std::vector<double> cum(m, 0.0);
    for (size_t i = 1; i < m; ++i) cum[i] = cum[i - 1] + (pts[i] - pts[i - 1]).norm();
    const double total = cum[m - 1] + (pts[0] - pts[m - 1]).norm();
    if (total <= 0.0) throw std::runtime_error("resample_closed: zero-length polyline");
    PointList out;
    out.reserve(n);
    size_t i = 0;
    for (int k = 0; k < n; ++k) {
        const double s = total * k / n;
        while (i + 1 < m && cum[i + 1] <= s) ++i;
        const size_t j = (i + 1) % m;
        const double seg = (j == 0 ? total : cum[j]) - cum[i];
        const double f = seg > 0.0 ? (s - cum[i]) / seg : 0.0;
        out.push_back(pts[i] + (pts[j] - pts[i]) * f);
    }
    return out;
}

std::map<int, Contour> load_contours_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("contours: cannot open '" + path + "'");
    std::map<int, Contour> out;
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("contours: empty file '" + path + "'");
    size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        int organ, index;
        double x, y;
        try {
            std::getline(ss, cell, ',');
            organ = std::stoi(cell);
            std::getline(ss, cell, ',');
            index = std::stoi(cell);
            std::getline(ss, cell, ',');
            x = std::stod(cell);
            std::getline(ss, cell, ',');
            y = std::stod(cell);
        } catch (const std::exception&) {
            throw std::runtime_error("contours: malformed row at " + path + ":" + std::to_string(lineno));
        }
        auto& c = out[organ];
        c.organ_label = organ;
        if (static_cast<size_t>(index) != c.points.size())
            throw std::runtime_error("contours: non-contiguous index at " + path + ":" + std::to_string(lineno));
        c.points.push_back({x, y});
    }
    return out;
}

}  // namespace mhg
