#pragma once

#include <map>
#include <string>
#include <vector>

#include "mhg/dataio.hpp"
#include "mhg/losses.hpp"
#include "mhg/model.hpp"
#include "mhg/rasterizer.hpp"
#include "mhg/synthetic.hpp"

namespace mhg {

struct ScheduleState {
    uint64_t iteration = 0;
    uint64_t total_iterations = 0;
    LossWeights weights;
};

// lambda_k: 1e-6 -> 1e-3 over the run; alpha: 1e-6 -> 1 over the first third,
// then constant; beta/gamma: 300/250 decaying by decay_decades decades.
ScheduleState schedule_weights(uint64_t iteration, uint64_t total, double decay_decades = 2.0);

struct OptState {
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    uint64_t step = 0;
    std::vector<std::vector<double>> m, v;  // one pair per parameter
};

void opt_init(OptState& st, const std::vector<Param>& params);
// Throws on non-finite gradients, naming the parameter.
void adam_step(std::vector<Param>& params, OptState& st);

// Deterministic per-iteration stream seed (splitmix64 mix) so that resuming
// from a checkpoint replays the exact draw sequence.
uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index);

// Per-sample supervision targets in normalized coordinates.
struct SampleGT {
    std::map<int, PointList> points;  // present organs, boundary pixel centers / scale
    std::map<int, LabelMask> masks;   // every annotated organ, possibly empty
    std::vector<int> annotated;
};

SampleGT make_gt(const Sample& s, const std::vector<int>& organs, int point_cap = 4096);

ImageGrid mask_as_image(const LabelMask& m, const std::vector<int>& organ_labels);

struct SampleLoss {
    ModelForward f;
    LossBundle bundle;                        // multi-level chamfer and aux pixel folded in
    std::vector<ChamferResult> chamfer_levels;
    std::map<int, SoftRaster> rasters;        // finest level (empty when raster loss is off)
    PixelResult pixel_raster, pixel_aux;
    ModelGrads grads;                         // ready for Model::backward
};

SampleLoss compute_sample_loss(const Model& model, const GraphTopology& topo, const SampleGT& gt,
                               const ImageGrid& image, const std::vector<double>& eps,
                               const LossWeights& w, const DatasetConfig& cfg);

struct SnakeFitResult {
    PointList landmarks;  // normalized, finest-level cardinality
    std::vector<double> loss_history;
};

// Direct Adam on landmark coordinates: chamfer + pixel(soft raster) + edge
// terms, no KL. Organs absent from the target stay at the image center.
SnakeFitResult snake_fit(const LabelMask& target, const GraphTopology& topo, const DatasetConfig& cfg);

struct IterLog {
    uint64_t iteration = 0;
    double chamfer = 0.0, pixel = 0.0, kld = 0.0;
    double uniform = 0.0, elastic = 0.0, curvature = 0.0;
    double total = 0.0;
    double wall_ms = 0.0;
};

struct TrainResult {
    std::vector<IterLog> log;
    std::vector<std::pair<uint64_t, double>> val_history;  // (iteration, mean finest chamfer)
    double best_val = 0.0;
    uint64_t best_iter = 0;
    SplitResult split;
};

// Iteration loop per the training recipe: batch 1 during the ramp, multi-level
// chamfer, pixel loss on the finest raster (+ aux output for dual), KL, edge
// terms, Adam, per-iteration schedules. Best checkpoint by validation chamfer,
// no early stopping. out_dir receives train_log.csv, best.bin, last.bin when
// nonempty. resume_path restarts from a last.bin written earlier.
TrainResult train_population(const std::vector<Sample>& dataset, Model& model, const GraphTopology& topo,
                             const DatasetConfig& cfg, const std::string& out_dir,
                             const std::string& resume_path = "");

struct EvalRow {
    std::string subject;
    int organ = 0;
    double dice = 0.0, hausdorff_px = 0.0, assd_px = 0.0;
};

// Deterministic inference (eps = 0), hard-rasterized polygons vs the mask.
// pred_px, when given, receives each sample's finest landmarks in pixel coords.
std::vector<EvalRow> evaluate_samples(const Model& model, const GraphTopology& topo,
                                      const std::vector<Sample>& samples, const DatasetConfig& cfg,
                                      std::vector<PointList>* pred_px = nullptr);

}  // namespace mhg
