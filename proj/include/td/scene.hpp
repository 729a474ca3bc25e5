#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "td/distill.hpp"
#include "td/graph.hpp"
#include "td/random.hpp"

namespace td::scene {

inline constexpr double kFrameDt = 0.5;   // seconds between adjacent frames
inline constexpr double kBevExtent = 50.0;  // scene spans [-50,50]^2 meters
inline constexpr double kMaxSpeed = 15.0;   // m/s
inline constexpr int kObsDim = 6;

// Nine-tuple sparse query.
struct QueryState {
    double x = 0, y = 0, z = 0;
    double w = 1, l = 1, h = 1;
    double yaw = 0;
    double vx = 0, vy = 0;
};

struct ObjectTrack {
    double x0 = 0, y0 = 0, z0 = 0;  // position at scene start (oldest time)
    double vx = 0, vy = 0;          // constant world velocity
    double w = 1, l = 1, h = 1;
    double yaw = 0;
};

// Frame index 0 is the current timestamp; larger indices are older.
struct SceneSample {
    int frames = 0;
    int num_objects = 0;
    std::uint64_t seed = 0;
    std::vector<ObjectTrack> objects;
    // ego_delta[f] is the observer translation accumulated when aligning past
    // frame f+1 toward frame f; alignment by `offset` subtracts the first
    // `offset` deltas.
    std::vector<std::array<double, 2>> ego_delta;
    // per-object (x, y, vx, vy) at the current frame, in current ego coords
    std::vector<std::array<double, 4>> ground_truth;

    // object world position at frame index t
    std::array<double, 2> object_world_pos(int obj, int t) const;
    // observer world position at frame index t (current frame at the origin)
    std::array<double, 2> ego_pos(int t) const;
};

SceneSample generate_scene(std::uint64_t seed, int num_objects, int frames);

// Warp a current-frame query back to the frame `frame_offset` steps into the
// past: position moves by -velocity * offset * dt minus the accumulated ego
// translation; velocity, extents and yaw are unchanged.
QueryState ego_align(const QueryState& q, int frame_offset,
                     std::span<const std::array<double, 2>> ego_deltas);

// Line-delimited scene records for replay across runs.
std::string serialize_scene(const SceneSample& s);
SceneSample deserialize_scene(const std::string& line);

// Toy stand-in for the sparse BEV encoder: a per-frame linear embedding of
// handcrafted query observations plus one self-attention layer, and linear
// channel mixes of rasterized occupancy maps for the PV levels.
struct EncoderParams {
    Tensor w_emb;          // [kObsDim, C]
    Tensor b_emb;          // [C]
    Tensor wq, wk, wv;     // [C, C]
    Tensor pv_w, pv_b;     // [C,2], [C]  (FPN level 3)
    Tensor pv_w_lo, pv_b_lo;  // [C,2], [C]  (FPN level 1)

    std::vector<std::pair<std::string, Tensor*>> named_params();
};
EncoderParams make_encoder(int channels, std::uint64_t seed);

struct DecoderParams {
    Tensor w1, b1;      // [C,C], [C]
    Tensor w2, b2;      // [C,C], [C]
    Tensor w_head, b_head;  // [C,4], [4]

    std::vector<std::pair<std::string, Tensor*>> named_params();
};
DecoderParams make_decoder(int channels, std::uint64_t seed);

struct EncoderNodes {
    NodeId w_emb = -1, b_emb = -1, wq = -1, wk = -1, wv = -1;
    NodeId pv_w = -1, pv_b = -1, pv_w_lo = -1, pv_b_lo = -1;
};
EncoderNodes add_encoder(Graph& g, const EncoderParams& p, bool trainable);

struct DecoderNodes {
    NodeId w1 = -1, b1 = -1, w2 = -1, b2 = -1, w_head = -1, b_head = -1;
};
DecoderNodes add_decoder(Graph& g, const DecoderParams& p, bool trainable);

struct EncodeResult {
    distill::FeatureNodes bev;     // [Nq,C] per frame
    distill::PvFeatureNodes pv3;   // [C,H,W] per frame, FPN level 3
    distill::PvFeatureNodes pv1;   // [C,H,W] per frame, FPN level 1
};

// Encodes the most recent t_in frames of the scene. Deterministic given the
// parameters and the scene.
EncodeResult encode(Graph& g, const EncoderNodes& enc, const SceneSample& s, int t_in, int nq,
                    int height, int width);

struct DecodeResult {
    NodeId decoded = -1;      // [Nq,C]
    NodeId predictions = -1;  // [Nq,4]: x/50, y/50, vx/15, vy/15
};

// Temporal mean pooling followed by a two-layer perceptron and a linear
// regression head. Predictions are in normalized units (positions divided by
// the BEV extent, velocities by the speed cap).
DecodeResult decode_and_regress(Graph& g, const DecoderNodes& dec,
                                const distill::FeatureNodes& features);

// Mean L1 error over matched (position, velocity) terms in normalized units.
// Each ground-truth object is matched to its nearest predicted query.
NodeId task_loss(Graph& g, NodeId predictions, const SceneSample& s);

struct TaskMetrics {
    double mean_position_error = 0;  // meters
    double mean_velocity_error = 0;  // m/s
};
TaskMetrics task_metrics(const Tensor& predictions, const SceneSample& s);

// Plain-tensor observation builders (shared by the graph path and tests).
Tensor build_observation(const SceneSample& s, int frame, int nq);       // [Nq,kObsDim]
Tensor build_pv_basis(const SceneSample& s, int frame, int height, int width,
                      double sigma_a, double sigma_b);                   // [2,H*W]
inline constexpr double kPvSigmaA3 = 8.0, kPvSigmaB3 = 20.0;
inline constexpr double kPvSigmaA1 = 4.0, kPvSigmaB1 = 12.0;

}  // namespace td::scene
