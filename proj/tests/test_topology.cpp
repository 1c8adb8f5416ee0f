#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "mhg/model.hpp"  // topology_hash
#include "mhg/topology.hpp"

using namespace mhg;

namespace {

Contour square_contour(double x0, double y0, double side, int organ) {
    Contour c;
    c.organ_label = organ;
    c.points = {{x0, y0}, {x0 + side, y0}, {x0 + side, y0 + side}, {x0, y0 + side}};
    return c;
}

Contour circle_contour(double cx, double cy, double r, int n, int organ) {
    Contour c;
    c.organ_label = organ;
    for (int i = 0; i < n; ++i) {
        const double th = 2.0 * M_PI * i / n;
        c.points.push_back({cx + r * std::cos(th), cy + r * std::sin(th)});
    }
    return c;
}

std::vector<double> matmul(const std::vector<double>& A, int ar, int ac,
                           const std::vector<double>& B, int bc) {
    std::vector<double> C(static_cast<size_t>(ar) * bc, 0.0);
    for (int i = 0; i < ar; ++i)
        for (int k = 0; k < ac; ++k)
            for (int j = 0; j < bc; ++j) C[i * bc + j] += A[i * ac + k] * B[k * bc + j];
    return C;
}

}  // namespace

TEST_CASE("landmark_count follows max(floor(L*s), n_min)") {
    CHECK(landmark_count(200.0, 0.10, 16) == 20);
    CHECK(landmark_count(100.0, 0.10, 16) == 16);
    CHECK(landmark_count(437.0, 0.05, 8) == 21);
    CHECK_THROWS(static_cast<void>(landmark_count(0.0, 0.10, 16)));
    CHECK_THROWS(static_cast<void>(landmark_count(100.0, 1.5, 16)));
    CHECK_THROWS(static_cast<void>(landmark_count(100.0, 0.10, 2)));
}

TEST_CASE("resolution_counts halves with floors") {
    CHECK(resolution_counts(20, 3) == std::vector<int>{20, 10, 5});
    CHECK(resolution_counts(21, 3) == std::vector<int>{21, 10, 5});
    CHECK(resolution_counts(16, 2) == std::vector<int>{16, 8});
    CHECK(resolution_counts(16, 1) == std::vector<int>{16});
    CHECK_THROWS(static_cast<void>(resolution_counts(8, 3)));   // coarsest would be 2
    CHECK_THROWS(static_cast<void>(resolution_counts(20, 4)));  // coarsest would be 2
    CHECK_THROWS(static_cast<void>(resolution_counts(2, 1)));
}

TEST_CASE("independent circle of 4: neighbors of node 0 are {1,3}") {
    GraphTopology t = build_independent({{1, 4}}, 1);
    REQUIRE(t.levels() == 1);
    REQUIRE(t.level[0].n == 4);
    std::set<int> nb;
    for (const auto& [u, v] : t.level[0].edges) {
        if (u == 0) nb.insert(v);
        if (v == 0) nb.insert(u);
    }
    CHECK(nb == std::set<int>{1, 3});
    for (int d : t.level[0].degrees()) CHECK(d == 2);
    CHECK(t.level[0].organ_cycles.at(1) == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("independent N=8 pooling matrices: D half entries, D*U identity") {
    GraphTopology t = build_independent({{1, 8}}, 2);
    REQUIRE(t.levels() == 2);
    CHECK(t.level[0].n == 8);
    CHECK(t.level[1].n == 4);
    std::vector<double> D = dense_matrix(t.down[0], 4, 8);
    std::vector<double> U = dense_matrix(t.up[0], 8, 4);
    CHECK(D[0 * 8 + 0] == doctest::Approx(0.5));
    CHECK(D[0 * 8 + 1] == doctest::Approx(0.5));
    for (int j = 2; j < 8; ++j) CHECK(D[0 * 8 + j] == doctest::Approx(0.0));
    std::vector<double> DU = matmul(D, 4, 8, U, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(DU[i * 4 + j] == doctest::Approx(i == j ? 1.0 : 0.0));
}

TEST_CASE("independent D*U identity and row sums at every level, odd counts included") {
    for (int n1 : {16, 21, 13}) {
        GraphTopology t = build_independent({{1, n1}}, 3);
        for (int l = 0; l + 1 < t.levels(); ++l) {
            const int nf = t.level[l].n, nc = t.level[l + 1].n;
            std::vector<double> D = dense_matrix(t.down[l], nc, nf);
            std::vector<double> U = dense_matrix(t.up[l], nf, nc);
            std::vector<double> DU = matmul(D, nc, nf, U, nc);
            for (int i = 0; i < nc; ++i)
                for (int j = 0; j < nc; ++j)
                    CHECK(DU[i * nc + j] == doctest::Approx(i == j ? 1.0 : 0.0));
            for (int i = 0; i < nc; ++i) {
                double rs = 0.0;
                for (int j = 0; j < nf; ++j) rs += D[i * nf + j];
                CHECK(rs == doctest::Approx(1.0));
            }
            for (int j = 0; j < nc; ++j) {
                double cs = 0.0;
                for (int i = 0; i < nf; ++i) cs += U[i * nc + j];
                CHECK(cs >= 1.0 - 1e-12);
            }
        }
    }
}

TEST_CASE("independent two organs: block-diagonal 10x10 adjacency") {
    GraphTopology t = build_independent({{1, 4}, {2, 6}}, 1);
    REQUIRE(t.level[0].n == 10);
    for (const auto& [u, v] : t.level[0].edges) {
        const bool a = u < 4, b = v < 4;
        CHECK(a == b);  // no cross-organ edge
    }
    CHECK(t.level[0].organ_cycles.at(1).size() == 4);
    CHECK(t.level[0].organ_cycles.at(2) == std::vector<int>{4, 5, 6, 7, 8, 9});
    for (int d : t.level[0].degrees()) CHECK(d == 2);
    // adjacency symmetric by storage (u < v unique); edge count = sum of cycles
    CHECK(t.level[0].edges.size() == 10);
    CHECK_THROWS(static_cast<void>(build_independent({{1, 2}}, 1)));
}

TEST_CASE("unified touching squares: full shared edge gets membership {1,2}") {
    std::map<int, Contour> atlas;
    atlas[1] = square_contour(2, 2, 4, 1);
    atlas[2] = square_contour(6, 2, 4, 2);
    GraphTopology t = build_unified(atlas, std::sqrt(2.0) + 0.01, {{1, 16}, {2, 16}});
    REQUIRE(t.levels() == 1);
    const LevelTopology& l = t.level[0];
    CHECK(l.n == 27);  // 16 + 16 - 5 coincident shared-edge points
    int shared = 0;
    for (int i = 0; i < l.n; ++i) {
        const bool on_edge = std::fabs(l.pos[i].x - 6.0) < 1e-9 && l.pos[i].y >= 2.0 - 1e-9 &&
                             l.pos[i].y <= 6.0 + 1e-9;
        const bool both = l.membership[i] == std::vector<int>{1, 2};
        CHECK(on_edge == both);
        if (both) shared++;
    }
    CHECK(shared == 5);
    // junctions are the two chord endpoints
    REQUIRE(l.junctions.size() == 2);
    for (int j : l.junctions) {
        CHECK(std::fabs(l.pos[j].x - 6.0) < 1e-9);
        CHECK((std::fabs(l.pos[j].y - 2.0) < 1e-9 || std::fabs(l.pos[j].y - 6.0) < 1e-9));
    }
    // shared nodes appear in both organ cycles
    for (int i = 0; i < l.n; ++i) {
        if (l.membership[i].size() == 2) {
            for (int o : {1, 2}) {
                const auto& cyc = l.organ_cycles.at(o);
                CHECK(std::count(cyc.begin(), cyc.end(), i) == 1);
            }
        }
    }
}

TEST_CASE("unified on distant circles reduces to independent") {
    std::map<int, Contour> atlas;
    atlas[1] = circle_contour(12, 12, 6, 32, 1);
    atlas[2] = circle_contour(44, 44, 6, 32, 2);
    GraphTopology u = build_unified(atlas, std::sqrt(2.0) + 0.01, {{1, 12}, {2, 12}});
    GraphTopology ind = build_independent({{1, 12}, {2, 12}}, 1);
    CHECK(u.level[0].n == 24);
    std::set<std::pair<int, int>> ue(u.level[0].edges.begin(), u.level[0].edges.end());
    std::set<std::pair<int, int>> ie(ind.level[0].edges.begin(), ind.level[0].edges.end());
    CHECK(ue == ie);
    for (const auto& m : u.level[0].membership) CHECK(m.size() == 1);
    CHECK(u.level[0].junctions.empty());
    CHECK(u.level[0].organ_cycles.at(1) == ind.level[0].organ_cycles.at(1));
    CHECK(u.level[0].organ_cycles.at(2) == ind.level[0].organ_cycles.at(2));
}

TEST_CASE("tiny delta on off-lattice resampled squares merges nothing") {
    std::map<int, Contour> atlas;
    atlas[1] = square_contour(2, 2, 4, 1);
    atlas[2] = square_contour(6, 2, 4, 2);
    // 13 points over perimeter 16: spacing 16/13, no coincidences across organs
    const int n = 13;
    {
        PointList a = resample_closed(atlas[1].points, n);
        PointList b = resample_closed(atlas[2].points, n);
        double dmin = 1e30;
        for (const auto& p : a)
            for (const auto& q : b) dmin = std::min(dmin, (p - q).norm());
        REQUIRE(dmin > 0.01);  // premise of the example
    }
    GraphTopology t = build_unified(atlas, 0.01, {{1, n}, {2, n}});
    CHECK(t.level[0].n == 2 * n);
    for (const auto& m : t.level[0].membership) CHECK(m.size() == 1);
}

TEST_CASE("unified merge error when an organ collapses") {
    std::map<int, Contour> atlas;
    atlas[1] = square_contour(2, 2, 4, 1);
    atlas[2] = square_contour(2.2, 2.2, 4, 2);  // nearly coincident everywhere
    CHECK_THROWS(static_cast<void>(build_unified(atlas, 10.0, {{1, 8}, {2, 8}})));
}

TEST_CASE("coarsening an isolated 8-cycle matches the independent path") {
    std::map<int, Contour> atlas;
    atlas[1] = circle_contour(16, 16, 8, 32, 1);
    GraphTopology u = build_unified(atlas, std::sqrt(2.0) + 0.01, {{1, 8}});
    coarsen_unified(u);
    GraphTopology ind = build_independent({{1, 8}}, 2);
    REQUIRE(u.levels() == 2);
    CHECK(u.level[1].n == 4);
    std::set<std::pair<int, int>> ue(u.level[1].edges.begin(), u.level[1].edges.end());
    std::set<std::pair<int, int>> ie(ind.level[1].edges.begin(), ind.level[1].edges.end());
    CHECK(ue == ie);
    std::vector<double> Du = dense_matrix(u.down[0], 4, 8);
    std::vector<double> Di = dense_matrix(ind.down[0], 4, 8);
    std::vector<double> Uu = dense_matrix(u.up[0], 8, 4);
    std::vector<double> Ui = dense_matrix(ind.up[0], 8, 4);
    for (size_t k = 0; k < Du.size(); ++k) CHECK(Du[k] == doctest::Approx(Di[k]));
    for (size_t k = 0; k < Uu.size(); ++k) CHECK(Uu[k] == doctest::Approx(Ui[k]));
}

TEST_CASE("coarsening a 5-node chain between junctions leaves 3 nodes") {
    // side-6 squares sharing a full edge; 24 points each at unit spacing puts
    // 5 interior degree-2 nodes on the chord between the two junctions
    std::map<int, Contour> atlas;
    atlas[1] = square_contour(2, 2, 6, 1);
    atlas[2] = square_contour(8, 2, 6, 2);
    GraphTopology t = build_unified(atlas, std::sqrt(2.0) + 0.01, {{1, 24}, {2, 24}});
    const auto deg0 = t.level[0].degrees();
    int chain0 = 0;
    for (int i = 0; i < t.level[0].n; ++i)
        if (t.level[0].membership[i].size() == 2 && deg0[i] == 2) chain0++;
    REQUIRE(chain0 == 5);
    REQUIRE(t.level[0].junctions.size() == 2);

    coarsen_unified(t);
    const LevelTopology& c = t.level[1];
    const auto deg1 = c.degrees();
    int chain1 = 0;
    for (int i = 0; i < c.n; ++i)
        if (c.membership[i].size() == 2 && deg1[i] == 2) chain1++;
    CHECK(chain1 == 3);  // two merges plus one leftover
    CHECK(c.junctions.size() == 2);
    for (int j : c.junctions) CHECK(c.membership[j].size() == 2);
}

TEST_CASE("junction-only graph passes through coarsening unchanged") {
    GraphTopology t;
    t.mode = "unified";
    t.organ_labels = {1};
    LevelTopology l;
    l.n = 4;  // K4: every node degree 3
    l.edges = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
    l.membership = {{1}, {1}, {1}, {1}};
    l.junctions = {0, 1, 2, 3};
    l.pos = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    t.level.push_back(l);
    coarsen_unified(t);
    REQUIRE(t.levels() == 2);
    CHECK(t.level[1].n == 4);
    CHECK(t.level[1].edges == l.edges);
    std::vector<double> D = dense_matrix(t.down[0], 4, 4);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(D[i * 4 + j] == doctest::Approx(i == j ? 1.0 : 0.0));
}

TEST_CASE("multilevel unified: junction sets persist, membership grows monotonically") {
    std::map<int, Contour> atlas;
    atlas[1] = square_contour(2, 2, 6, 1);
    atlas[2] = square_contour(8, 2, 6, 2);
    GraphTopology t = build_unified_multilevel(atlas, std::sqrt(2.0) + 0.01, {{1, 24}, {2, 24}}, 3);
    REQUIRE(t.levels() == 3);
    for (int l = 0; l < 3; ++l) CHECK(t.level[l].junctions.size() == t.level[0].junctions.size());
    for (int l = 0; l + 1 < 3; ++l) {
        const int nf = t.level[l].n, nc = t.level[l + 1].n;
        CHECK(nc < nf);
        // membership monotone through D
        for (const auto& tr : t.down[l]) {
            const auto& fm = t.level[l].membership[tr.col];
            const auto& cm = t.level[l + 1].membership[tr.row];
            CHECK(std::includes(cm.begin(), cm.end(), fm.begin(), fm.end()));
        }
        // D row sums 1
        std::vector<double> rs(nc, 0.0);
        for (const auto& tr : t.down[l]) rs[tr.row] += tr.val;
        for (double s : rs) CHECK(s == doctest::Approx(1.0));
    }
    for (auto& [organ, counts] : t.counts) CHECK(counts.size() == 3);
}

TEST_CASE("pool-unpool reconstruction error bounded by merged-pair half-distance") {
    std::map<int, Contour> atlas;
    atlas[1] = square_contour(2, 2, 6, 1);
    atlas[2] = square_contour(8, 2, 6, 2);
    GraphTopology t = build_unified_multilevel(atlas, std::sqrt(2.0) + 0.01, {{1, 24}, {2, 24}}, 2);
    const LevelTopology& f = t.level[0];
    const LevelTopology& c = t.level[1];
    PointList coarse(c.n), recon(f.n);
    for (const auto& tr : t.down[0]) coarse[tr.row] += f.pos[tr.col] * tr.val;
    for (const auto& tr : t.up[0]) recon[tr.row] += coarse[tr.col] * tr.val;
    // max merged-pair half-distance from D rows with two constituents
    std::map<int, std::vector<int>> groups;
    for (const auto& tr : t.down[0]) groups[tr.row].push_back(tr.col);
    double bound = 0.0;
    for (const auto& [row, cols] : groups)
        if (cols.size() == 2) bound = std::max(bound, 0.5 * (f.pos[cols[0]] - f.pos[cols[1]]).norm());
    for (int i = 0; i < f.n; ++i) CHECK((recon[i] - f.pos[i]).norm() <= bound + 1e-9);
}

TEST_CASE("edge tensor of a 4-cycle: 4 edges, 4 consecutive pairs") {
    GraphTopology t = build_independent({{1, 4}}, 1);
    const EdgeTensor& et = t.edge_tensor;
    REQUIRE(et.organs == std::vector<int>{1});
    CHECK(et.max_edges == 4);
    int valid = 0;
    for (char f : et.valid[0]) valid += f;
    CHECK(valid == 4);
    CHECK(et.consecutive[0].size() == 4);
    for (const auto& [a, b] : et.consecutive[0]) {
        CHECK(et.edges[0][a].second == et.edges[0][b].first);           // shared middle node
        CHECK(et.edges[0][a].first != et.edges[0][b].second);           // distinct endpoints
    }
}

TEST_CASE("edge tensor pads organ lists to the max edge count") {
    GraphTopology t = build_independent({{1, 4}, {2, 6}}, 1);
    const EdgeTensor& et = t.edge_tensor;
    CHECK(et.max_edges == 6);
    REQUIRE(et.edges[0].size() == 6);
    REQUIRE(et.edges[1].size() == 6);
    int pad0 = 0;
    for (char f : et.valid[0]) pad0 += (f == 0);
    CHECK(pad0 == 2);
    for (size_t k = 0; k < et.edges[0].size(); ++k)
        if (!et.valid[0][k]) CHECK(et.edges[0][k] == std::make_pair(0, 0));
    int pad1 = 0;
    for (char f : et.valid[1]) pad1 += (f == 0);
    CHECK(pad1 == 0);
}

TEST_CASE("edge tensor on unified topology lists shared nodes in both organs") {
    std::map<int, Contour> atlas;
    atlas[1] = square_contour(2, 2, 4, 1);
    atlas[2] = square_contour(6, 2, 4, 2);
    GraphTopology t = build_unified(atlas, std::sqrt(2.0) + 0.01, {{1, 16}, {2, 16}});
    const EdgeTensor& et = t.edge_tensor;
    // find a node with membership {1,2}
    int shared = -1;
    for (int i = 0; i < t.level[0].n; ++i)
        if (t.level[0].membership[i].size() == 2) {
            shared = i;
            break;
        }
    REQUIRE(shared >= 0);
    for (int o = 0; o < 2; ++o) {
        bool seen = false;
        for (size_t k = 0; k < et.edges[o].size(); ++k)
            if (et.valid[o][k] && (et.edges[o][k].first == shared || et.edges[o][k].second == shared))
                seen = true;
        CHECK(seen);
    }
}

TEST_CASE("topology json round trip and hash") {
    std::map<int, Contour> atlas;
    atlas[1] = square_contour(2, 2, 6, 1);
    atlas[2] = square_contour(8, 2, 6, 2);
    GraphTopology t = build_unified_multilevel(atlas, std::sqrt(2.0) + 0.01, {{1, 24}, {2, 24}}, 2);
    save_topology(t, "topo_rt.json");
    GraphTopology back = load_topology("topo_rt.json");
    CHECK(back.mode == t.mode);
    CHECK(back.organ_labels == t.organ_labels);
    REQUIRE(back.levels() == t.levels());
    for (int l = 0; l < t.levels(); ++l) {
        CHECK(back.level[l].n == t.level[l].n);
        CHECK(back.level[l].edges == t.level[l].edges);
        CHECK(back.level[l].membership == t.level[l].membership);
        CHECK(back.level[l].junctions == t.level[l].junctions);
        CHECK(back.level[l].organ_cycles == t.level[l].organ_cycles);
        REQUIRE(back.level[l].pos.size() == t.level[l].pos.size());
        for (size_t i = 0; i < t.level[l].pos.size(); ++i)
            CHECK((back.level[l].pos[i] - t.level[l].pos[i]).norm() < 1e-9);
    }
    for (size_t l = 0; l < t.down.size(); ++l) {
        REQUIRE(back.down[l].size() == t.down[l].size());
        REQUIRE(back.up[l].size() == t.up[l].size());
    }
    CHECK(back.counts == t.counts);
    CHECK(back.edge_tensor.max_edges == t.edge_tensor.max_edges);
    CHECK(back.edge_tensor.edges == t.edge_tensor.edges);
    CHECK(topology_hash(back) == topology_hash(t));

    GraphTopology other = build_independent({{1, 8}}, 2);
    CHECK(topology_hash(other) != topology_hash(t));
    std::filesystem::remove("topo_rt.json");
}
