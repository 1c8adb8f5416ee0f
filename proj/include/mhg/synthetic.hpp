#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mhg/dataio.hpp"

namespace mhg {

// Radial Fourier shape r(theta) = R * (1 + sum_j a_j cos(k_j*theta - phi_j)),
// wave numbers k_j = j + 2. Star-shaped, so simple by construction.
struct SyntheticShapeParams {
    std::vector<std::vector<std::pair<double, double>>> fourier_coeffs;  // per organ: (amplitude fraction, phase)
    Vec2 center;
    double base_radius = 0.0;
    double rotation = 0.0;  // radians, direction offset
};

// Population distribution. Phases stay near fixed anchors so orientation is
// recognizable across samples; amplitudes carry the shape variation.
struct SyntheticSpec {
    int harmonics = 2;
    double amp_min = 0.04;
    double amp_max = 0.14;
    std::vector<double> base_phases = {0.5, 1.7, 2.9, 4.1, 5.3};
    double phase_jitter = 0.25;
    double radius_min_frac = 0.20;  // of image side
    double radius_max_frac = 0.30;
    double center_jitter_frac = 0.04;
    double rotation_jitter = 0.0;
    double noise_sigma = 0.1;
};

// Closed polyline with a normalized arc-length parameterization t in [0,1).
struct OracleCurve {
    PointList pts;
    std::vector<double> cum;  // cum[i] = arc length at pts[i]; total closes the loop
    double total = 0.0;

    void finalize();
    Vec2 at(double t) const;
    double project(const Vec2& p) const;  // t of nearest curve point, lowest-t tie break
};

using OracleSet = std::map<int, OracleCurve>;  // organ label -> curve

struct SyntheticSample {
    Sample sample;
    OracleSet oracle;
    SyntheticShapeParams params;
};

// touching=false: one organ (label 1). touching=true: the curve is split by the
// vertical line through its center into organ 1 (right) and organ 2 (left),
// sharing the straight chord. Image = label/max_label + N(0, sigma), clipped.
std::vector<SyntheticSample> gen_synthetic_population(int n, const SyntheticSpec& spec, int size,
                                                      bool touching, Rng& rng);

// Oracle curves round-trip through the contour CSV format.
void save_oracle_csv(const OracleSet& oracle, const std::string& path);
OracleSet load_oracle_csv(const std::string& path);

}  // namespace mhg
