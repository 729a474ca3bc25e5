#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "td/graph.hpp"
#include "td/random.hpp"
#include "td/tensor.hpp"

namespace td::distill {

// Sparse BEV query features, one [Nq,C] slab per frame. Frame 0 is the
// current timestamp; larger indices are further into the past.
struct FeatureSet {
    int frames = 0, queries = 0, channels = 0;
    Tensor values;  // [T,Nq,C]

    static FeatureSet from_frames(const std::vector<Tensor>& frame_tensors);
    Tensor frame(int t) const;  // [Nq,C]
};

// Perspective-view feature maps, channel-first per frame.
struct PvFeatureSet {
    int frames = 0, channels = 0, height = 0, width = 0;
    int level = 3;  // FPN level, 3 = final layer
    Tensor values;  // [T,C,H,W]

    static PvFeatureSet from_frames(const std::vector<Tensor>& frame_tensors, int level);
    Tensor frame(int t) const;  // [C,H,W]
};

// Binary mask over frame x location, broadcast over channels on application.
// Entry is 0 exactly when its uniform draw fell below the ratio; draws are
// consumed in row-major (frame, location) order.
struct MaskPlan {
    std::uint64_t seed = 0;
    double ratio = 0.0;
    Tensor mask;  // [T,Nq] or [T,H,W]

    Tensor frame(int t) const;
    std::size_t masked_count() const;
};

MaskPlan generate_mask(const std::vector<int>& shape, double ratio, std::uint64_t seed);

// Temporal self-attention aggregation of teacher features down to t_stu
// frames: frame t collects scaled dot-product attention terms from every
// teacher frame up to t+k, with frame t acting as the keys.
FeatureSet tsa_aggregate(const FeatureSet& teacher, int t_stu);
// Same aggregation with the H*W pixels of each frame as the token set.
PvFeatureSet tsa_aggregate_pv(const PvFeatureSet& teacher, int t_stu);

// Two shape-preserving 3-tap convolutions with a ReLU between them.
struct GeneratorParams {
    bool two_d = false;
    Tensor w1, b1, w2, b2;
};
GeneratorParams make_generator(int channels, bool two_d, RandomSource& rs);
// Center-tap delta kernels with zero bias; identity on nonnegative input.
GeneratorParams identity_generator(int channels, bool two_d);

struct GeneratorNodes {
    bool two_d = false;
    NodeId w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};
GeneratorNodes add_generator(Graph& g, const GeneratorParams& p, bool trainable);

// Graph-side feature handles (frames already inserted as nodes).
struct FeatureNodes {
    int queries = 0, channels = 0;
    std::vector<NodeId> frames;
};
struct PvFeatureNodes {
    int channels = 0, height = 0, width = 0;
    int level = 3;
    std::vector<NodeId> frames;
};

FeatureNodes insert_features(Graph& g, const FeatureSet& fs, bool trainable);
PvFeatureNodes insert_features_pv(Graph& g, const PvFeatureSet& fs, bool trainable);

// conv -> ReLU -> conv on one frame; BEV frames run the 1D convolution along
// the query axis, PV frames the 2D convolution over H x W.
NodeId generate_frame(Graph& g, NodeId frame, const GeneratorNodes& gen);
FeatureNodes generate_features(Graph& g, const FeatureNodes& masked, const GeneratorNodes& gen);
PvFeatureNodes generate_features_pv(Graph& g, const PvFeatureNodes& masked,
                                    const GeneratorNodes& gen);

// Reconstruction and distillation losses. Teacher inputs are plain tensors:
// they enter the graph as constants and carry no gradient.
NodeId rc_bev_loss(Graph& g, const FeatureNodes& student, const FeatureSet& teacher,
                   const GeneratorNodes& gen, const MaskPlan& mp);
NodeId rc_pv_loss(Graph& g, const PvFeatureNodes& student, const PvFeatureSet& teacher,
                  const GeneratorNodes& gen, const MaskPlan& mp);
NodeId spatial_reconstruction_loss(Graph& g, const PvFeatureNodes& student,
                                   const PvFeatureSet& teacher, const GeneratorNodes& gen,
                                   const MaskPlan& mp);

// Inter-frame query similarity F_i F_j^T for one ordered frame pair (0-based,
// i != j).
Tensor similarity(const FeatureSet& f, int i, int j);

NodeId trd_loss(Graph& g, const FeatureNodes& student, const FeatureSet& teacher, double tau);
NodeId dc_loss(Graph& g, NodeId student_decoded, const Tensor& teacher_decoded);

enum class Mode { PartialFrames, FullFrames };

// Validated hyperparameter bundle. Construction enforces the mode gating:
// partial frames forces alpha4 = 0, full frames forces alpha1 = alpha2 = 0.
struct DistillConfig {
    double lambda = 0.5;
    double tau = 0.5;
    double alpha1 = 0.0, alpha2 = 0.0, alpha3 = 0.0, alpha4 = 0.0;
    int t_stu = 0, t_tea = 0, nq = 0, channels = 0, height = 0, width = 0;
    std::uint64_t seed = 0;
    Mode mode = Mode::PartialFrames;

    static DistillConfig make(double lambda, double tau, double alpha1, double alpha2,
                              double alpha3, double alpha4, int t_stu, int t_tea, int nq,
                              int channels, int height, int width, std::uint64_t seed);
};

// Weighted sum of the component losses. A component whose weight is zero may
// be absent; a nonzero weight with a missing component is rejected.
NodeId total_distill_loss(Graph& g, const DistillConfig& cfg, std::optional<NodeId> rc_bev,
                          std::optional<NodeId> rc_pv, std::optional<NodeId> dc,
                          std::optional<NodeId> trd);

}  // namespace td::distill
