#pragma once

#include <map>
#include <string>
#include <vector>

#include "mhg/contours.hpp"
#include "mhg/core.hpp"

namespace mhg {

struct SparseTriple {
    int row = 0;
    int col = 0;
    double val = 0.0;
};

struct LevelTopology {
    int n = 0;
    std::vector<std::pair<int, int>> edges;        // undirected, u < v, sorted, unique
    std::vector<std::vector<int>> membership;      // per node, sorted organ ids
    std::vector<int> junctions;                    // nodes of degree >= 3, sorted
    std::map<int, std::vector<int>> organ_cycles;  // organ -> node indices in contour order
    PointList pos;                                 // atlas positions (unified mode only)

    std::vector<int> degrees() const;
};

struct EdgeTensor {
    int max_edges = 0;                                         // M
    std::vector<int> organs;                                   // organ labels, ascending
    std::vector<std::vector<std::pair<int, int>>> edges;       // per organ, directed, padded to M with (0,0)
    std::vector<std::vector<char>> valid;                      // padding flags
    std::vector<std::vector<std::pair<int, int>>> consecutive; // per organ: (edge a, edge b) index pairs, sharing a middle node, endpoints distinct
};

struct GraphTopology {
    std::string mode;                       // "independent" | "unified"
    std::vector<int> organ_labels;          // ascending
    std::map<int, std::vector<int>> counts; // organ -> fine-constituent count per level
    std::vector<LevelTopology> level;       // level[0] is finest (r = 1)
    std::vector<std::vector<SparseTriple>> down;  // D^(r -> r+1), N_{r+1} x N_r
    std::vector<std::vector<SparseTriple>> up;    // U^(r+1 -> r), N_r x N_{r+1}
    EdgeTensor edge_tensor;                 // finest level

    int levels() const { return static_cast<int>(level.size()); }
};

// Eq. 1: max(floor(mean_len * s), n_min).
int landmark_count(double mean_len, double s, int n_min);

// Eq. 2: [floor(n1 / 2^(r-1)) for r = 1..R]; throws if the coarsest level
// would drop below 3 nodes.
std::vector<int> resolution_counts(int n1, int R);

// Block-diagonal circular topologies with halving pool/unpool matrices.
GraphTopology build_independent(const std::map<int, int>& organ_counts, int R);

// Appendix-B style proximity merge on atlas contours resampled to the given
// counts; single level (coarsen separately).
GraphTopology build_unified(const std::map<int, Contour>& atlas_contours, double delta,
                            const std::map<int, int>& organ_counts);

// Appendix-C style junction-preserving coarsening of the last level of t;
// appends the new level plus its D and U.
void coarsen_unified(GraphTopology& t);

// Builds a unified topology with R levels.
GraphTopology build_unified_multilevel(const std::map<int, Contour>& atlas_contours, double delta,
                                       const std::map<int, int>& organ_counts, int R);

// Vectorized edge connectivity at the finest level.
EdgeTensor edge_tensor(const GraphTopology& t);

void save_topology(const GraphTopology& t, const std::string& path);
GraphTopology load_topology(const std::string& path);

// Dense matrix helpers used by tests and the model.
std::vector<double> dense_matrix(const std::vector<SparseTriple>& triples, int rows, int cols);

}  // namespace mhg
