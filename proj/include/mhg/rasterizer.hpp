#pragma once

#include "mhg/core.hpp"

namespace mhg {

// Min distance from p to the polygon boundary, positive inside, negative
// outside (crossing-number parity), 0 on the boundary. Degenerate polygons
// are everywhere outside.
double signed_distance(const Vec2& p, const PointList& poly);

// Soft mask plus the per-pixel nearest-segment cache the backward pass needs.
struct SoftRaster {
    ImageGrid values;           // logistic(signed_distance / sigma) at pixel centers
    double sigma = 1.0;
    std::vector<int> seg;       // nearest segment index per pixel
    std::vector<double> tstar;  // clamped projection parameter per pixel
    std::vector<double> dist;   // unsigned distance per pixel
    std::vector<int8_t> inside; // +1 inside, -1 outside
};

// Pixel centers sampled at (x + 0.5, y + 0.5). Coordinates in pixel units.
SoftRaster soft_rasterize(const PointList& poly, int H, int W, double sigma);

// d(sum upstream .* values)/dP through the nearest-segment distance
// (envelope form; nearest-segment ties resolved to the first segment).
PointList soft_rasterize_backward(const SoftRaster& r, const PointList& poly, const ImageGrid& upstream);

// 1 iff the pixel center is inside or on the boundary.
LabelMask hard_rasterize(const PointList& poly, int H, int W);

}  // namespace mhg
