#pragma once

#include <map>
#include <vector>

#include "mhg/core.hpp"
#include "mhg/topology.hpp"

namespace mhg {

// All landmark losses operate on normalized coordinates ([0,1]^2, longer image
// side mapped to 1) so the single weight set works at any resolution.

struct ChamferResult {
    double value = 0.0;
    PointList dP;  // same length as P
};

// Eq. 10 symmetric mean-of-min squared distances, summed over annotated
// organs (Eq. 11). cycles gives each organ's node indices into P.
ChamferResult chamfer_loss(const PointList& P, const std::map<int, std::vector<int>>& cycles,
                           const std::map<int, PointList>& truth, const std::vector<int>& annotated);

struct PixelResult {
    double value = 0.0;
    std::map<int, ImageGrid> dsoft;
};

// Eq. 12: mean over annotated organs of soft Dice loss (eps = 1) + BCE
// (probabilities clamped to [1e-7, 1 - 1e-7]).
PixelResult pixel_loss(const std::map<int, ImageGrid>& soft, const std::map<int, LabelMask>& gt,
                       const std::vector<int>& annotated);

struct KlResult {
    double value = 0.0;
    std::vector<double> dmu;
    std::vector<double> dlogvar;
};

// Eq. 13: -1/2 sum(1 + logvar - mu^2 - exp(logvar)).
KlResult kl_loss(const std::vector<double>& mu, const std::vector<double>& logvar);

struct EdgeResult {
    double uniform = 0.0;   // Eq. 16, organ means weighted by w_o, averaged over organs
    double elastic = 0.0;   // Eq. 17
    double curvature = 0.0; // Eq. 18
    std::vector<double> w;      // Eq. 19, edge-tensor organ order
    std::vector<double> ebar;   // mean edge length per organ
    std::vector<double> perim;  // perimeter per organ
    PointList d_uniform;
    PointList d_elastic;
    PointList d_curvature;
};

// ebar and w are treated as constants during differentiation.
EdgeResult edge_regularizers(const PointList& P, const EdgeTensor& et);

struct LossWeights {
    double lambda_c = 10.0;
    double lambda_p = 1.0;
    double lambda_k = 0.0;
    double alpha = 0.0;
    double beta = 0.0;
    double gamma = 0.0;
};

struct LossBundle {
    double chamfer = 0.0, pixel = 0.0, kld = 0.0;
    double uniform = 0.0, elastic = 0.0, curvature = 0.0, edge = 0.0;
    double total = 0.0;
    LossWeights weights;
    std::vector<double> w, ebar, perim;
    PointList dP;
    std::map<int, ImageGrid> dsoft;
    std::vector<double> dmu, dlogvar;
};

// Eq. 21 with lambda_e folded to 1: total = lc*chamfer + lp*pixel + lk*kld
// + alpha*uniform + beta*elastic + gamma*curvature; gradients combined the
// same way.
LossBundle total_loss(const ChamferResult& chamfer, const PixelResult& pixel, const KlResult& kl,
                      const EdgeResult& edge, const LossWeights& weights);

}  // namespace mhg
