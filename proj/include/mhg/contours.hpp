#pragma once

#include <map>
#include <string>
#include <vector>

#include "mhg/core.hpp"

namespace mhg {

struct Contour {
    PointList points;    // pixel coords, x right, y down; traced points are integer-valued
    int organ_label = 0;
    bool closed = true;
};

// Largest 8-connected foreground component of a 0/1 grid; ties go to the
// component appearing first in raster order.
LabelMask largest_component(const LabelMask& binary);

// Moore-neighbor tracing of the external boundary, Jacob's stopping
// criterion, no simplification. Input must have exactly one 8-connected
// component. First point is the topmost-then-leftmost boundary pixel,
// order is clockwise in image coordinates.
Contour trace_boundary(const LabelMask& binary);

// Per-organ: binarize, keep largest component, trace. Organs absent from the
// mask are omitted.
std::map<int, Contour> extract_organ_contours(const LabelMask& mask, const std::vector<int>& organs);

// Mean contour length per organ over the samples that contain it. Throws if a
// requested organ never appears.
std::map<int, double> contour_length_stats(const std::vector<std::map<int, Contour>>& per_sample,
                                           const std::vector<int>& organs);

// CSV rows organ,index,x,y with a header line.
void save_contours_csv(const std::map<int, Contour>& contours, const std::string& path);
std::map<int, Contour> load_contours_csv(const std::string& path);

// Uniform arc-length resampling of a closed polyline, keeping the start point.
PointList resample_closed(const PointList& pts, int n);

}  // namespace mhg
