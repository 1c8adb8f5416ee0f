#include "mhg/topology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <tuple>

#include <json.hpp>

namespace mhg {

std::vector<int> LevelTopology::degrees() const {
    std::vector<int> deg(n, 0);
    for (const auto& [u, v] : edges) {
        ++deg[u];
        ++deg[v];
    }
    return deg;
}

int landmark_count(double mean_len, double s, int n_min) {
    if (!(mean_len > 0.0)) throw std::runtime_error("landmark_count: mean_len must be > 0");
    if (!(s > 0.0 && s <= 1.0)) throw std::runtime_error("landmark_count: s must be in (0,1]");
    if (n_min < 3) throw std::runtime_error("landmark_count: n_min must be >= 3");
    return std::max(static_cast<int>(std::floor(mean_len * s)), n_min);
}

std::vector<int> resolution_counts(int n1, int R) {
    if (n1 < 3) throw std::runtime_error("resolution_counts: n1 must be >= 3");
    if (R < 1) throw std::runtime_error("resolution_counts: R must be >= 1");
    std::vector<int> counts;
    for (int r = 1; r <= R; ++r) {
        const int c = n1 >> (r - 1);
        if (c < 3)
            throw std::runtime_error("resolution_counts: level " + std::to_string(r) +
                                     " falls below 3 nodes (n1=" + std::to_string(n1) + ")");
        counts.push_back(c);
    }
    return counts;
}

namespace {

void sort_unique_edges(std::vector<std::pair<int, int>>& edges) {
    for (auto& e : edges)
        if (e.first > e.second) std::swap(e.first, e.second);
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

std::vector<int> junctions_of(const LevelTopology& l) {
    std::vector<int> out;
    const auto deg = l.degrees();
    for (int i = 0; i < l.n; ++i)
        if (deg[i] >= 3) out.push_back(i);
    return out;
}

// collapses consecutive duplicates, including the wrap-around pair
std::vector<int> collapse_cycle(const std::vector<int>& cycle) {
    std::vector<int> out;
    for (int v : cycle)
        if (out.empty() || out.back() != v) out.push_back(v);
    while (out.size() > 1 && out.front() == out.back()) out.pop_back();
    return out;
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

}  // namespace

GraphTopology build_independent(const std::map<int, int>& organ_counts, int R) {
    GraphTopology t;
    t.mode = "independent";
    for (const auto& [organ, n1] : organ_counts) {
        t.organ_labels.push_back(organ);
        t.counts[organ] = resolution_counts(n1, R);
    }

    for (int r = 0; r < R; ++r) {
        LevelTopology l;
        for (int organ : t.organ_labels) {
            const int n = t.counts[organ][r];
            const int off = l.n;
            auto& cycle = l.organ_cycles[organ];
            for (int i = 0; i < n; ++i) {
                cycle.push_back(off + i);
                l.edges.push_back({off + i, off + (i + 1) % n});
                l.membership.push_back({organ});
            }
            l.n += n;
        }
        sort_unique_edges(l.edges);
        l.junctions = junctions_of(l);
        t.level.push_back(std::move(l));
    }

    for (int r = 0; r + 1 < R; ++r) {
        std::vector<SparseTriple> D, U;
        int off_f = 0, off_c = 0;
        for (int organ : t.organ_labels) {
            const int nf = t.counts[organ][r];
            const int nc = t.counts[organ][r + 1];
            for (int i = 0; i < nc; ++i) {
                D.push_back({off_c + i, off_f + 2 * i, 0.5});
                D.push_back({off_c + i, off_f + (2 * i + 1) % nf, 0.5});
            }
            for (int i = 0; i < nf; ++i) U.push_back({off_f + i, off_c + (i / 2) % nc, 1.0});
            off_f += nf;
            off_c += nc;
        }
        t.down.push_back(std::move(D));
        t.up.push_back(std::move(U));
    }

    t.edge_tensor = edge_tensor(t);
    return t;
}

GraphTopology build_unified(const std::map<int, Contour>& atlas_contours, double delta,
                            const std::map<int, int>& organ_counts) {
    if (delta <= 0.0) throw std::runtime_error("build_unified: delta must be > 0");
    GraphTopology t;
    t.mode = "unified";

    PointList pts;
    std::vector<int> organ_of;
    std::map<int, int> offset;
    for (const auto& [organ, n1] : organ_counts) {
        auto it = atlas_contours.find(organ);
        if (it == atlas_contours.end())
            throw std::runtime_error("build_unified: atlas missing organ " + std::to_string(organ));
        t.organ_labels.push_back(organ);
        t.counts[organ] = {n1};
        offset[organ] = static_cast<int>(pts.size());
        for (const Vec2& p : resample_closed(it->second.points, n1)) {
            pts.push_back(p);
            organ_of.push_back(organ);
        }
    }
    const int total = static_cast<int>(pts.size());

    // Greedy proximity merge, closest pairs first. A merged node stands for one
    // shared boundary location, so it keeps at most one constituent per organ;
    // this stops chains of within-delta pairs from collapsing a whole interface.
    struct Cand {
        double d2;
        int a, b;
        bool operator<(const Cand& o) const { return std::tie(d2, a, b) < std::tie(o.d2, o.a, o.b); }
    };
    std::vector<Cand> cands;
    const double d2max = delta * delta;
    for (int a = 0; a < total; ++a)
        for (int b = a + 1; b < total; ++b)
            if (organ_of[a] != organ_of[b] && (pts[a] - pts[b]).squared_norm() <= d2max)
                cands.push_back({(pts[a] - pts[b]).squared_norm(), a, b});
    std::sort(cands.begin(), cands.end());

    UnionFind uf(total);
    std::vector<std::set<int>> cluster_orgs(total);
    for (int i = 0; i < total; ++i) cluster_orgs[i] = {organ_of[i]};
    for (const Cand& c : cands) {
        const int ra = uf.find(c.a), rb = uf.find(c.b);
        if (ra == rb) continue;
        bool overlap = false;
        for (int o : cluster_orgs[ra])
            if (cluster_orgs[rb].count(o)) {
                overlap = true;
                break;
            }
        if (overlap) continue;
        uf.unite(ra, rb);
        const int r = uf.find(ra);
        std::set<int> merged = cluster_orgs[ra];
        merged.insert(cluster_orgs[rb].begin(), cluster_orgs[rb].end());
        cluster_orgs[r] = std::move(merged);
    }

    // node ids ordered by the smallest constituent index
    std::vector<int> node_id(total, -1);
    LevelTopology l;
    std::vector<std::vector<int>> members;
    for (int i = 0; i < total; ++i) {
        const int root = uf.find(i);
        if (node_id[root] < 0) {
            node_id[root] = l.n++;
            members.push_back({});
        }
        node_id[i] = node_id[root];
        members[node_id[i]].push_back(i);
    }

    l.pos.resize(l.n);
    l.membership.resize(l.n);
    for (int c = 0; c < l.n; ++c) {
        Vec2 sum;
        std::set<int> orgs;
        for (int i : members[c]) {
            sum += pts[i];
            orgs.insert(organ_of[i]);
        }
        l.pos[c] = sum * (1.0 / members[c].size());
        l.membership[c].assign(orgs.begin(), orgs.end());
    }

    for (const auto& [organ, n1] : organ_counts) {
        std::vector<int> cycle;
        for (int i = 0; i < n1; ++i) cycle.push_back(node_id[offset[organ] + i]);
        cycle = collapse_cycle(cycle);
        std::set<int> distinct(cycle.begin(), cycle.end());
        if (distinct.size() < 3)
            throw std::runtime_error("build_unified: merge collapsed organ " + std::to_string(organ) +
                                     " below 3 distinct nodes");
        int exclusive = 0;
        for (int v : distinct)
            if (l.membership[v].size() == 1) ++exclusive;
        if (exclusive == 0)
            throw std::runtime_error("build_unified: merge collapsed organ " + std::to_string(organ) +
                                     " (every node shared)");
        for (size_t k = 0; k < cycle.size(); ++k) {
            const int u = cycle[k], v = cycle[(k + 1) % cycle.size()];
            if (u != v) l.edges.push_back({u, v});
        }
        l.organ_cycles[organ] = std::move(cycle);
    }
    sort_unique_edges(l.edges);
    l.junctions = junctions_of(l);
    t.level.push_back(std::move(l));
    t.edge_tensor = edge_tensor(t);
    return t;
}

void coarsen_unified(GraphTopology& t) {
    const LevelTopology& fine = t.level.back();
    const auto deg = fine.degrees();

    std::vector<std::vector<int>> adj(fine.n);
    for (const auto& [u, v] : fine.edges) {
        adj[u].push_back(v);
        adj[v].push_back(u);
    }
    for (auto& a : adj) std::sort(a.begin(), a.end());

    std::vector<int> partner(fine.n, -1);
    std::vector<char> visited(fine.n, 0);

    auto pair_chain = [&](const std::vector<int>& chain) {
        for (size_t k = 0; k + 1 < chain.size(); k += 2) {
            partner[chain[k]] = chain[k + 1];
            partner[chain[k + 1]] = chain[k];
        }
    };

    // chains hanging off junctions
    for (int j = 0; j < fine.n; ++j) {
        if (deg[j] < 3) continue;
        for (int v : adj[j]) {
            if (deg[v] != 2 || visited[v]) continue;
            std::vector<int> chain;
            int prev = j, cur = v;
            while (deg[cur] == 2 && !visited[cur]) {
                visited[cur] = 1;
                chain.push_back(cur);
                int next = -1;
                for (int w : adj[cur])
                    if (w != prev) {
                        next = w;
                        break;
                    }
                prev = cur;
                cur = next;
            }
            pair_chain(chain);
        }
    }
    // pure degree-2 cycles
    for (int u = 0; u < fine.n; ++u) {
        if (deg[u] != 2 || visited[u]) continue;
        std::vector<int> cycle;
        int prev = -1, cur = u;
        while (!visited[cur]) {
            visited[cur] = 1;
            cycle.push_back(cur);
            int next = -1;
            for (int w : adj[cur])
                if (w != prev) {
                    next = w;
                    break;
                }
            prev = cur;
            cur = next;
        }
        pair_chain(cycle);
    }

    std::vector<int> coarse_id(fine.n, -1);
    LevelTopology coarse;
    for (int i = 0; i < fine.n; ++i) {
        if (coarse_id[i] >= 0) continue;
        const int c = coarse.n++;
        coarse_id[i] = c;
        if (partner[i] >= 0) coarse_id[partner[i]] = c;
    }

    std::vector<SparseTriple> D, U;
    coarse.pos.resize(coarse.n);
    coarse.membership.resize(coarse.n);
    std::vector<int> group_size(coarse.n, 0);
    for (int i = 0; i < fine.n; ++i) {
        ++group_size[coarse_id[i]];
        U.push_back({i, coarse_id[i], 1.0});
    }
    for (int i = 0; i < fine.n; ++i) {
        const int c = coarse_id[i];
        D.push_back({c, i, 1.0 / group_size[c]});
        if (!fine.pos.empty()) coarse.pos[c] += fine.pos[i] * (1.0 / group_size[c]);
        std::vector<int> merged;
        std::set_union(coarse.membership[c].begin(), coarse.membership[c].end(),
                       fine.membership[i].begin(), fine.membership[i].end(), std::back_inserter(merged));
        coarse.membership[c] = std::move(merged);
    }
    std::sort(D.begin(), D.end(), [](const SparseTriple& a, const SparseTriple& b) {
        return a.row != b.row ? a.row < b.row : a.col < b.col;
    });
    if (fine.pos.empty()) coarse.pos.clear();

    for (const auto& [u, v] : fine.edges) {
        const int cu = coarse_id[u], cv = coarse_id[v];
        if (cu != cv) coarse.edges.push_back({cu, cv});
    }
    sort_unique_edges(coarse.edges);

    for (const auto& [organ, cycle] : fine.organ_cycles) {
        std::vector<int> mapped;
        for (int v : cycle) mapped.push_back(coarse_id[v]);
        mapped = collapse_cycle(mapped);
        std::set<int> distinct(mapped.begin(), mapped.end());
        if (distinct.size() < 3)
            throw std::runtime_error("coarsen_unified: organ " + std::to_string(organ) +
                                     " cycle fell below 3 nodes");
        coarse.organ_cycles[organ] = std::move(mapped);
    }

    const auto cdeg = coarse.degrees();
    for (int c = 0; c < coarse.n; ++c)
        if (cdeg[c] < 2) throw std::runtime_error("coarsen_unified: coarsening eliminated a closed cycle");
    coarse.junctions = junctions_of(coarse);

    for (int j : fine.junctions)
        if (partner[j] >= 0) throw std::runtime_error("coarsen_unified: junction merged (internal error)");

    for (auto& [organ, counts] : t.counts)
        counts.push_back(static_cast<int>(coarse.organ_cycles[organ].size()));

    t.level.push_back(std::move(coarse));
    t.down.push_back(std::move(D));
    t.up.push_back(std::move(U));
}

GraphTopology build_unified_multilevel(const std::map<int, Contour>& atlas_contours, double delta,
                                       const std::map<int, int>& organ_counts, int R) {
    GraphTopology t = build_unified(atlas_contours, delta, organ_counts);
    for (int r = 1; r < R; ++r) coarsen_unified(t);
    return t;
}

EdgeTensor edge_tensor(const GraphTopology& t) {
    EdgeTensor e;
    const LevelTopology& l = t.level.front();
    for (int organ : t.organ_labels) {
        e.organs.push_back(organ);
        const auto& cycle = l.organ_cycles.at(organ);
        const int m = static_cast<int>(cycle.size());
        std::vector<std::pair<int, int>> edges;
        for (int k = 0; k < m; ++k) edges.push_back({cycle[k], cycle[(k + 1) % m]});
        std::vector<std::pair<int, int>> consec;
        for (int k = 0; k < m; ++k) {
            const int i = cycle[k], kk = cycle[(k + 2) % m];
            if (i != kk) consec.push_back({k, (k + 1) % m});
        }
        e.max_edges = std::max(e.max_edges, m);
        e.edges.push_back(std::move(edges));
        e.consecutive.push_back(std::move(consec));
    }
    for (auto& edges : e.edges) {
        std::vector<char> valid(edges.size(), 1);
        while (static_cast<int>(edges.size()) < e.max_edges) {
            edges.push_back({0, 0});
            valid.push_back(0);
        }
        e.valid.push_back(std::move(valid));
    }
    return e;
}

namespace {

nlohmann::json triples_to_json(const std::vector<SparseTriple>& ts) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& t : ts) j.push_back({t.row, t.col, t.val});
    return j;
}

std::vector<SparseTriple> triples_from_json(const nlohmann::json& j) {
    std::vector<SparseTriple> ts;
    for (const auto& e : j) ts.push_back({e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<double>()});
    return ts;
}

}  // namespace

void save_topology(const GraphTopology& t, const std::string& path) {
    nlohmann::json j;
    j["mode"] = t.mode;
    j["organ_labels"] = t.organ_labels;
    nlohmann::json counts;
    for (const auto& [organ, c] : t.counts) counts[std::to_string(organ)] = c;
    j["counts"] = counts;
    j["levels"] = nlohmann::json::array();
    for (const auto& l : t.level) {
        nlohmann::json jl;
        jl["n"] = l.n;
        nlohmann::json edges = nlohmann::json::array();
        for (const auto& [u, v] : l.edges) edges.push_back({u, v});
        jl["edges"] = edges;
        jl["membership"] = l.membership;
        jl["junctions"] = l.junctions;
        nlohmann::json cycles;
        for (const auto& [organ, cycle] : l.organ_cycles) cycles[std::to_string(organ)] = cycle;
        jl["organ_cycles"] = cycles;
        nlohmann::json pos = nlohmann::json::array();
        for (const auto& p : l.pos) pos.push_back({p.x, p.y});
        jl["pos"] = pos;
        j["levels"].push_back(jl);
    }
    j["down"] = nlohmann::json::array();
    for (const auto& d : t.down) j["down"].push_back(triples_to_json(d));
    j["up"] = nlohmann::json::array();
    for (const auto& u : t.up) j["up"].push_back(triples_to_json(u));

    std::ofstream out(path);
    if (!out) throw std::runtime_error("topology: cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

GraphTopology load_topology(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("topology: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("topology: parse failure in '" + path + "': " + e.what());
    }
    GraphTopology t;
    t.mode = j.at("mode").get<std::string>();
    t.organ_labels = j.at("organ_labels").get<std::vector<int>>();
    for (const auto& [key, val] : j.at("counts").items()) t.counts[std::stoi(key)] = val.get<std::vector<int>>();
    for (const auto& jl : j.at("levels")) {
        LevelTopology l;
        l.n = jl.at("n").get<int>();
        for (const auto& e : jl.at("edges")) l.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
        l.membership = jl.at("membership").get<std::vector<std::vector<int>>>();
        l.junctions = jl.at("junctions").get<std::vector<int>>();
        for (const auto& [key, val] : jl.at("organ_cycles").items())
            l.organ_cycles[std::stoi(key)] = val.get<std::vector<int>>();
        for (const auto& p : jl.at("pos")) l.pos.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        t.level.push_back(std::move(l));
    }
    for (const auto& d : j.at("down")) t.down.push_back(triples_from_json(d));
    for (const auto& u : j.at("up")) t.up.push_back(triples_from_json(u));
    t.edge_tensor = edge_tensor(t);
    return t;
}

std::vector<double> dense_matrix(const std::vector<SparseTriple>& triples, int rows, int cols) {
    std::vector<double> m(static_cast<size_t>(rows) * cols, 0.0);
    for (const auto& t : triples) m[static_cast<size_t>(t.row) * cols + t.col] += t.val;
    return m;
}

}  // namespace mhg
