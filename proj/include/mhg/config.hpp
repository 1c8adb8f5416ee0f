#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "mhg/core.hpp"

namespace mhg {

// Architecture and optimization knobs. Everything here is a free choice of
// this implementation and is exposed so experiments can override it.
struct ModelConfig {
    std::vector<int> encoder_widths = {8, 16, 32, 64};
    int latent_dim = 32;
    int cheb_order = 6;       // K
    int cheb_width = 32;      // node feature width in the graph decoder
    int cheb_layers = 2;      // Chebyshev layers per resolution level
    bool dual = false;        // auxiliary dense decoder + rerouted IGSC
    double leaky_slope = 0.2;
    double raster_sigma_px = 1.0;
};

struct TrainConfig {
    int iterations = 50000;
    int batch_size = 2;
    double learning_rate = 1e-4;
    double batch_ramp_fraction = 0.1;   // batch size 1 until this fraction of iterations
    double beta_gamma_decay_decades = 2.0;
    int val_interval = 1000;
    double test_fraction = 0.2;
    bool use_raster_loss = true;        // ablation knob: pixel loss on the rasterized contour
    bool mask_input = false;            // shape auto-encoder mode: feed the mask as the image
};

struct FitConfig {
    int iterations = 300;
    double learning_rate = 2e-3;
};

struct DatasetConfig {
    double scale_factor = 0.10;                  // s
    std::vector<std::string> resolutions = {"Full", "Half", "Quarter"};
    std::vector<int> organ_labels = {1};
    std::vector<std::string> organ_names = {"organ1"};
    int input_size = 64;
    bool aug_flip_h = false;
    bool aug_flip_v = false;
    bool aug_rotate = false;
    bool aug_transpose = false;
    double rotate_max_deg = 15.0;
    int min_landmarks = 16;                      // N_min
    uint64_t seed = 0;
    std::string graph_mode = "independent";      // or "unified"
    double unified_delta = 1.4152135623730951;   // sqrt(2) + 0.01

    ModelConfig model;
    TrainConfig train;
    FitConfig fit;

    int resolution_levels() const { return static_cast<int>(resolutions.size()); }
    void validate() const;
};

// JSON keys follow the per-dataset configuration dictionary: scale_factor,
// resolutions, organs, organ_names, inputsize, flip_h, flip_v, rotate,
// transpose, plus seed and the knobs above. Unknown keys are rejected.
DatasetConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const DatasetConfig& cfg);

DatasetConfig load_config(const std::string& path);
void save_config(const DatasetConfig& cfg, const std::string& path);

// Applies "a.b.c=value" to the JSON form before validation; value parsed as JSON
// when possible, else treated as a string.
void apply_override(nlohmann::json& j, const std::string& dotted_key, const std::string& value);

// FNV-1a over the canonical JSON dump; ties checkpoints to their config.
uint64_t config_hash(const DatasetConfig& cfg);

}  // namespace mhg
