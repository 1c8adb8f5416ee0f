#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mhg/config.hpp"
#include "mhg/core.hpp"
#include "mhg/topology.hpp"

namespace mhg {

struct Tensor3 {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, 0.0) {}
    double& at(int ci, int y, int x) { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
    double at(int ci, int y, int x) const { return v[(static_cast<size_t>(ci) * h + y) * w + x]; }
    size_t size() const { return v.size(); }
};

struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<double> value;
    std::vector<double> grad;

    size_t size() const { return value.size(); }
};

// caches for the backward pass
struct ChebCache {
    std::vector<Eigen::MatrixXd> Z;  // Z_k = T_k(L~) X
    Eigen::MatrixXd pre;             // pre-activation output
};

struct IgscCache {
    int x0 = 0, y0 = 0;
    double fx = 0.0, fy = 0.0;
    bool grad_x = true, grad_y = true;  // false when the coordinate was clamped
};

struct LevelForward {
    Eigen::MatrixXd X_in;
    std::vector<ChebCache> cheb;
    Eigen::MatrixXd X_out;
    PointList P;                 // normalized coords
    Eigen::MatrixXd sampled;     // IGSC features (levels > 0)
    std::vector<IgscCache> igsc;
};

struct ModelForward {
    Tensor3 input;
    std::vector<Tensor3> enc_pre, enc_act;      // per encoder stage
    std::vector<double> flat;
    std::vector<double> mu, logvar, eps, z;
    std::vector<Tensor3> aux_in, aux_pre, aux_act;  // dual decoder stack (index 0 coarsest);
                                                    // aux_in[j] is conv j's input, last entry feeds the head
    Tensor3 aux_logits;
    std::map<int, ImageGrid> aux;               // per-organ sigmoid masks (dual)
    std::vector<LevelForward> level;            // index 0 = finest
    std::vector<PointList> P;                   // per level, normalized
};

struct ModelGrads {
    std::vector<PointList> dP;                  // per level, normalized coords
    std::vector<double> dmu, dlogvar;           // external (KL) contributions
    std::map<int, ImageGrid> daux;              // dual pixel-loss gradient
};

class Model {
  public:
    Model(const DatasetConfig& cfg, const GraphTopology& topo, uint64_t init_seed);

    // eps: latent noise, one entry per latent dim (pass zeros at inference)
    ModelForward forward(const ImageGrid& image, const std::vector<double>& eps) const;
    void backward(const ModelForward& f, const ModelGrads& g);

    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    Param* find_param(const std::string& name);
    void zero_grad();

    int levels() const { return R_; }
    int input_size() const { return size_; }
    bool dual() const { return cfg_.dual; }
    const std::vector<int>& level_sizes() const { return n_nodes_; }

  private:
    ModelConfig cfg_;
    int size_ = 0;
    int R_ = 0;
    int n_stages_ = 0;
    int n_organs_ = 0;
    std::vector<int> organ_labels_;
    std::vector<int> n_nodes_;                   // per level
    std::vector<Eigen::MatrixXd> lap_;           // scaled Laplacian per level
    std::vector<std::vector<int>> up_parent_;    // per transition: fine node -> coarse parent
    std::vector<int> cheb_in_;                   // input width of the first cheb layer per level

    std::vector<Param> params_;
    std::map<std::string, int> param_index_;

    Param& P(const std::string& name);
    const Param& P(const std::string& name) const;
    int igsc_stage(int level) const { return n_stages_ - R_ + level; }
    int igsc_aux(int level) const { return n_stages_ - 1 - igsc_stage(level); }
};

// L~ = L - I with L the symmetric normalized Laplacian and lambda_max fixed
// at 2. Exposed for the dense Chebyshev oracle in tests.
Eigen::MatrixXd scaled_laplacian(const LevelTopology& l);

// One Chebyshev layer: Y = sum_k T_k(L~) X Theta_k + b. theta shape [K,in,out]
// row-major, b shape [out]. Backward accumulates into the Param grads and
// returns dX.
ChebCache cheb_forward(const Eigen::MatrixXd& lap, const Eigen::MatrixXd& X, const Param& theta, const Param& b);
Eigen::MatrixXd cheb_backward(const Eigen::MatrixXd& lap, const ChebCache& cache, const Eigen::MatrixXd& dY,
                              Param& theta, Param& b);

// Bilinear sampling of a feature map at normalized coords (x_f = u*w - 0.5,
// clamped; gradient zero at the clamp). Backward accumulates into dmap and
// returns coordinate gradients.
void igsc_sample(const Tensor3& map, const PointList& P, Eigen::MatrixXd& sampled, std::vector<IgscCache>& cache);
PointList igsc_backward(const Tensor3& map, const std::vector<IgscCache>& cache, const Eigen::MatrixXd& dsampled,
                        Tensor3& dmap);

// Checkpoint I/O: magic "MHGN", version u32, JSON header, float64 blocks in
// parameter declaration order. opt_blob carries extra float64 blocks (Adam
// moments etc.) owned by the engine.
struct CheckpointExtra {
    std::vector<std::pair<std::string, std::vector<double>>> blocks;
    uint64_t adam_step = 0;
    uint64_t iteration = 0;
    uint64_t total_iterations = 0;
};

void save_checkpoint(const std::string& path, const std::vector<Param>& params, uint64_t config_hash,
                     uint64_t topo_hash, const CheckpointExtra* extra);
// Params must already have matching shapes (model constructed from config).
// Returns extra blocks if present.
bool load_checkpoint(const std::string& path, std::vector<Param>& params, uint64_t config_hash,
                     uint64_t topo_hash, CheckpointExtra* extra);

uint64_t topology_hash(const GraphTopology& t);

}  // namespace mhg
