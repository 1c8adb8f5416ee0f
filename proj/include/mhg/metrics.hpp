#pragma once

#include "mhg/core.hpp"
#include "mhg/synthetic.hpp"

namespace mhg {

// Nonzero pixels are foreground throughout.
LabelMask binarize(const LabelMask& m, int label);

double dice(const LabelMask& a, const LabelMask& b);

struct BoundaryDistances {
    double hausdorff = 0.0;
    double assd = 0.0;
    bool infinite = false;  // set when either mask has no foreground
};

// Boundary pixel = foreground with a 4-adjacent background pixel or image border.
PointList boundary_pixels(const LabelMask& m);
BoundaryDistances boundary_distances(const LabelMask& a, const LabelMask& b);

struct CorrespondenceStats {
    std::vector<double> mean;    // per-index circular mean, arc-length units in [0,1)
    std::vector<double> stddev;  // per-index circular std, same units
    double summary = 0.0;        // population mean of per-index stds
};

// pred[n][i]: predicted point i of sample n in the coordinate frame of
// curves[n]. Projects onto the true curve, removes each sample's global
// circular shift (aligned to sample 0), then reports circular stats per index.
CorrespondenceStats correspondence_consistency(const std::vector<PointList>& pred,
                                               const std::vector<const OracleCurve*>& curves);

}  // namespace mhg
